"""Export features, dense patch maps, and mask proposals from pretrained
vision encoders in the exact file formats the semprobe toolkit consumes."""

__version__ = "0.1.0"
