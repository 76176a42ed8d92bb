"""Multi-view variational distillation lab: exact information oracle,
distillation losses, a small autodiff engine and a desk-scale trainer."""

__version__ = "0.1.0"
