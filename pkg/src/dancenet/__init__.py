"""Multi-stream video classification at desk scale.

Frame-by-frame, two-stream, temporal-3D, skeletal and three-stream CNN
variants over RGB, dense optical flow and rasterized pose, built on a small
from-scratch autodiff engine.
"""

__version__ = "0.1.0"
