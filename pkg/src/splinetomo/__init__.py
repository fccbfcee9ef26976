"""X-ray projection of quadratic B-spline volumes with a learned contribution
model, a voxel baseline and least-squares reconstruction."""

__version__ = "0.1.0"
