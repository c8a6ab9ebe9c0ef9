"""Wearable-sensor human motion capture: synthetic sensing, stream alignment,
teacher-student pose estimation and pose metrics."""

__version__ = "0.1.0"
