"""tubelab: a voxel-grid laboratory for families of tubes, planks, and slabs in R^3."""

__version__ = "0.1.0"
