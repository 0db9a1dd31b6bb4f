"""Synthetic training-image generation for product detection in vending machines.

The package covers mesh loading and deformation, object layout on the holding
plane, a fisheye camera model, a software rasterizer, automatic bounding-box
labeling and evaluators for the masked style-transfer losses.
"""

__version__ = "0.1.0"
