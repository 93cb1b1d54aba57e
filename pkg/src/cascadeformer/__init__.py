"""CascadeFormer: masked joint pretraining and cascading finetuning for skeleton action recognition."""

__version__ = "0.1.0"
