"""Regularized relativistic Vlasov-Maxwell particles versus the mollified
Vlasov-Poisson mean field: kernels, dynamics and convergence experiments."""

__version__ = "0.1.0"
