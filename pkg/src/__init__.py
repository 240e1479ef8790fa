"""
PoseKit - deterministic substrate of a two-stage 6-DoF pose pipeline
"""
__version__ = "1.0.0"
