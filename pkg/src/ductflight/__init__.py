"""Simulation and estimation stack for small quadrotors hovering inside air ducts."""
from .geometry import CircularDuct, DuctFrame, Ray, RectangularDuct, frame_convert, ray_cast

__version__ = "0.1.0"

__all__ = ["CircularDuct", "RectangularDuct", "DuctFrame", "Ray", "frame_convert", "ray_cast"]
