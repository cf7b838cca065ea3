"""Mesh-free solver for elliptic PDEs on perforated domains.

Trains a Fourier-feature network against bootstrapped martingale targets
computed from stochastic walkers (killed at the outer Dirichlet boundary,
reflected at perforations), with an independent Feynman-Kac Monte Carlo
oracle and a finite-difference homogenization toolkit for validation.
"""

__version__ = "0.1.0"
