"""
BloomGS
Text-to-3D scene generation with depth-prior regularized, compressible anchor Gaussians
"""

__version__ = "1.0.0"
