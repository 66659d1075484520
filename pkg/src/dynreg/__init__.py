"""Dynamic registration: lidar ego-motion with detection-driven moving-object segmentation."""

__version__ = "0.1.0"
