# configs/escape_study.py
from config import MasterConfig

cfg = MasterConfig()

cfg.experiment.kind = "walk"
cfg.experiment.params = [1, 1, 1, 0]
# z is the larger fiber root over (5, 5)
cfg.experiment.start = [5, 5]
cfg.experiment.N = 200
cfg.experiment.seeds = list(range(1000))
cfg.experiment.workers = 4

cfg.walk.radii = [4.0, 16.0, 256.0, 65536.0]
cfg.walk.certify_escapes = True

cfg.infinity.calibration_samples = 5000
# wider sampling band above the chart edge
cfg.infinity.calibration_span = 8.0

cfg.policy.escape_radius = 1e12

cfg.logging.to_console = True

# python run_experiment.py walk --config configs/escape_study.py
