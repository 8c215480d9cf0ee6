"""fogsched: deep-RL task scheduling for heterogeneous edge/fog/cloud fleets."""

__version__ = "0.1.0"
