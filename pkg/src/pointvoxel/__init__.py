"""Point-voxel detection primitives: range-image ball query, voxel KNN,
semantic FPS, query initialization, cross-attention and detection losses."""

__version__ = "0.1.0"
