"""Non-stationary multi-armed bandit laboratory."""
__version__ = "0.1.0"
