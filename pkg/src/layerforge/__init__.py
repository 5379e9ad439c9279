"""Layer approximations for anisotropic singularly perturbed problems."""

__version__ = "0.1.0"
