# utils.py
import dataclasses
import importlib.util
import json
import logging
import math
import os
import random
import re
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Set, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from config import MasterConfig
from errors import ConfigError

logger = logging.getLogger(__name__)

# keys accepted without a section prefix
TOP_LEVEL_KEYS = {"project_name", "random_seed"}
OPTIONAL_LIST_KEYS = {"experiment.params", "experiment.traces", "experiment.start"}
# inclusive integer range, e.g. "seeds = 0..99"
RANGE_PATTERN = re.compile(r"^(-?\d+)\s*\.\.\s*(-?\d+)$")


def set_random_seed(seed: int = 0) -> None:
    np.random.seed(seed)
    random.seed(seed)
    logger.info(f"Random seed set to {seed}")


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator: (seed, stream) always produces the same sequence."""
    key = np.array([int(seed) & (2**64 - 1), int(stream) & (2**64 - 1)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def model_to_dict(model: BaseModel) -> Dict[str, Any]:
    if hasattr(model, "model_dump"):
        return model.model_dump()
    return model.dict()


def _parse_value(raw: str) -> Any:
    text = raw.strip()
    span = RANGE_PATTERN.match(text)
    if span:
        lo, hi = int(span.group(1)), int(span.group(2))
        return list(range(lo, hi + 1))
    if text.startswith("[") and text.endswith("]"):
        text = text[1:-1]
        return [_parse_value(part) for part in text.split(",") if part.strip()]
    if "," in text:
        return [_parse_value(part) for part in text.split(",")]
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null"):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text.strip("\"'")


def parse_config(
    text: str,
    base: Optional[MasterConfig] = None,
    allowed_sections: Optional[Set[str]] = None,
) -> MasterConfig:
    """
    Parses a flat `section.key = value` document into a validated MasterConfig.

    Lines starting with '#' are comments. Lists are comma separated (brackets optional).
    Unknown keys, duplicate keys and invalid values raise ConfigError carrying the line number.
    """
    data = model_to_dict(base if base is not None else MasterConfig())
    key_lines: Dict[str, int] = {}

    for lineno, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", line=lineno)
        if key in key_lines:
            raise ConfigError(f"duplicate key (first set on line {key_lines[key]})", field=key, line=lineno)

        parsed = _parse_value(value)
        if "." in key:
            section, name = key.split(".", 1)
            if allowed_sections is not None and section not in allowed_sections:
                raise ConfigError("section not allowed here", field=key, line=lineno)
            if section not in data or not isinstance(data[section], dict) or name not in data[section]:
                raise ConfigError("unknown key", field=key, line=lineno)
            default = data[section][name]
            if (isinstance(default, list) or key in OPTIONAL_LIST_KEYS) and not isinstance(parsed, list):
                parsed = [parsed]
            data[section][name] = parsed
        else:
            if key not in TOP_LEVEL_KEYS or allowed_sections is not None:
                raise ConfigError("unknown key", field=key, line=lineno)
            data[key] = parsed
        key_lines[key] = lineno

    try:
        return MasterConfig(**data)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"] if not isinstance(part, int))
        line = next((ln for k, ln in key_lines.items() if field.startswith(k)), None)
        raise ConfigError(f"invalid value: {first['msg']}", field=field, line=line) from e


def load_config(path: str) -> MasterConfig:
    cfg_path = Path(path)
    if not cfg_path.exists():
        raise ConfigError(f"config file not found: {path}")

    if cfg_path.suffix == ".py":
        spec = importlib.util.spec_from_file_location("experiment_cfg", path)
        module = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(module)
        config = module.cfg
    else:
        config = parse_config(cfg_path.read_text())

    if not getattr(config.paths, "config_name", None):
        config.paths.config_name = cfg_path.stem

    return config


def apply_policy_file(config: MasterConfig, path: str) -> MasterConfig:
    logger.info(f"Applying numeric policy overrides from {path}")
    merged = parse_config(Path(path).read_text(), base=config, allowed_sections={"policy"})
    merged.paths.config_name = config.paths.config_name
    return merged


def setup_logging(session_name: str, cfg: MasterConfig, log_dir_override: Optional[str] = None) -> str:
    """
    Sets up logging into `<output>/logs/<session_name>.log`.

    Args:
        session_name (str): name of the run, used as the log file stem.
        cfg (MasterConfig): main configuration object.
        log_dir_override (str, optional): write the log file here instead.

    Returns:
        str: path of the log file.
    """
    log_dir = log_dir_override or cfg.paths.log_dir
    os.makedirs(log_dir, exist_ok=True)
    log_file = os.path.join(log_dir, f"{session_name}.log")

    for handler in logging.root.handlers[:]:
        logging.root.removeHandler(handler)

    handlers: List[logging.Handler] = [logging.FileHandler(log_file)]
    if cfg.logging.to_console:
        handlers.append(logging.StreamHandler())

    logging.basicConfig(
        level=getattr(logging, cfg.logging.level),
        format="%(asctime)s [%(levelname)s] %(message)s",
        handlers=handlers,
    )
    logging.info(f"Logging to: {log_file}")
    return log_file


def code_version() -> str:
    init_file = Path(__file__).with_name("__init__.py")
    match = re.search(r'__version__\s*=\s*"([^"]+)"', init_file.read_text()) if init_file.exists() else None
    return match.group(1) if match else "unknown"


def format_float(v: float) -> str:
    return f"{v:.17g}"


def encode_scalar(v: Any) -> Any:
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, Fraction):
        return str(v) if v.denominator != 1 else int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (complex, np.complexfloating)):
        return [float(v.real), float(v.imag)]
    return float(v)


def decode_scalar(v: Any) -> Any:
    if isinstance(v, (list, tuple)):
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, str):
        return Fraction(v)
    return v


def to_jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, BaseModel):
        return to_jsonable(model_to_dict(obj))
    if hasattr(obj, "to_json_dict"):
        return to_jsonable(obj.to_json_dict())
    if isinstance(obj, Enum) and not isinstance(obj, str):
        return obj.name
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(dataclasses.asdict(obj))
    if isinstance(obj, (set, frozenset)):
        return sorted(to_jsonable(v) for v in obj)
    if isinstance(obj, (str, type(None), bool)):
        return obj
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return encode_scalar(obj)


def write_json(path: str, obj: Any) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        json.dump(to_jsonable(obj), f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"Saved {path}")


def read_json(path: str) -> Any:
    with open(path) as f:
        return json.load(f)


def write_jsonl(path: str, header: Dict[str, Any], rows: Iterable[Any]) -> int:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    count = 0
    with open(path, "w") as f:
        f.write(json.dumps(to_jsonable(header), sort_keys=True) + "\n")
        for row in rows:
            f.write(json.dumps(to_jsonable(row), sort_keys=True) + "\n")
            count += 1
    logger.info(f"Saved {count} records to {path}")
    return count


def read_jsonl(path: str) -> Tuple[Dict[str, Any], List[Any]]:
    with open(path) as f:
        lines = [json.loads(line) for line in f if line.strip()]
    if not lines:
        raise ValueError(f"{path} has no header line")
    return lines[0], lines[1:]


def write_csv(path: str, rows: Any) -> pd.DataFrame:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    df = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(rows)
    df.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"Saved {len(df)} rows to {path}")
    return df

