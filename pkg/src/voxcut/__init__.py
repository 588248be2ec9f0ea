"""voxcut: octree level-of-detail streaming of threshold sub-volume surfaces."""

__version__ = "0.1.0"
