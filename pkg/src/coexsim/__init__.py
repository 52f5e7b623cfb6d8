"""Downlink eMBB/URLLC coexistence in multi-cell massive MIMO: a Monte Carlo simulator."""

__version__ = "0.1.0"
