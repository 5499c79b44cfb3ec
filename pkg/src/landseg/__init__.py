"""landseg: a from-scratch differentiable engine and workbench for
landslide segmentation on multispectral satellite patches."""

__version__ = "0.1.0"
