"""Synthetic 6-DoF grasp datasets from triangle meshes.

Mesh loading and ray queries, depth rendering, antipodal grasp sampling,
projection to rotated-box image labels, depth augmentation, rotated-box
matching, contrastive losses with checked gradients and collision-based
refinement of the last grasp angle.
"""
from pathlib import Path

__version__ = "0.1.0"

BUNDLED_MESHES = Path(__file__).parent / "data" / "meshes"
