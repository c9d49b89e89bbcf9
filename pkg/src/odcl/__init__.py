"""Online distillation with continual-learning policies on cyclic synthetic streams."""

__version__ = "0.1.0"
