"""Learning-free MotionBits segmentation of moving rigid bodies from optical flow."""

__version__ = "0.1.0"
