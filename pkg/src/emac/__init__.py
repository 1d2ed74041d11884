"""Multi-agent coverage path planning: EMAC, its baselines and the gridworld simulator."""

__version__ = "0.1.0"
