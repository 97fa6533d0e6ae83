"""Evidential radar occupancy grids.

Polar evidential measurement grids from geometric and learned inverse
sensor models, LiDAR-derived reference labels, and a particle-based
dynamic grid map with Doppler velocity support, driven by a synthetic
highway scenario simulator.
"""

__version__ = "0.1.0"
