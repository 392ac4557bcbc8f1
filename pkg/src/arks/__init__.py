"""Robust training with kernel-smoothed surrogate losses.

Implements ARKS (adversarially robust kernel smoothing) next to its
baselines -- ERM, WRM, PGD adversarial training, and worst-case robust
optimization -- together with the surrogate-loss constructions, attack and
distribution-shift sweeps, and the robustness certificate arithmetic
needed to evaluate them at desk scale.
"""

from .tape import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
