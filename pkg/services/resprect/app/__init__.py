"""
RESPRECT Service - Residual SAC with pretrained critics for multi-fingered grasping
"""

__version__ = "0.1.0"
