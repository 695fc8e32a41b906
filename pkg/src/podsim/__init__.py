"""Power-of-d load balancing in many-server heavy traffic.

Simulation of the occupancy-vector chain, fluid fixed points, the
queue-length bands and their probability exponents, and numerical checks of
the Lyapunov drift conditions behind them.
"""

__version__ = "0.1.0"
