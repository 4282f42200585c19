# __init__.py
"""Random dynamics of the Vieta involutions on Markov-type cubic surfaces."""
__version__ = "1.0"
