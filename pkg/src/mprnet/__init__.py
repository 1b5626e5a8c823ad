"""MPRNet multi-stage progressive image restoration on a numpy autodiff core."""

__version__ = "0.1.0"
