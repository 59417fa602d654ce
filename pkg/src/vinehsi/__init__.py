"""Grapevine-variety classification from UAV hyperspectral swaths.

Pipeline: raw cube -> reflectance -> NDVI mask + polygons -> labels ->
factor-analysis features -> patches -> spatial-attention/Inception CNN.
"""

__version__ = "0.1.0"
