"""
PoseKit - API Package
"""
