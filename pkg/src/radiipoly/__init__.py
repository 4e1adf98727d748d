"""Computer-assisted proofs for ODE solutions via piecewise Chebyshev
interpolation of a bootstrapped integral equation and radii polynomials."""

__version__ = "0.1.0"
