"""Uncertainty quantification for multi-cell accelerator cavities.

A calibrated coupled-resonator eigenmodel, a virtual manufacturing chain,
sparse-grid surrogates, Sobol and Borgonovo sensitivity analysis, and
inversion of measured couplings to iris deviations.
"""

__version__ = "0.1.0"
