"""Memoryless approximations of heavy-ball momentum.

Modules:
    trees: rooted trees, symmetry coefficients and markings.
    polynomials: exact rational functions of beta and coefficient families.
    bseries: series over rooted trees, composition and modified equations.
    losses: derivative oracles, mini-batch families and permutation averages.
    coefficients: finite-history memoryless coefficients.
    dynamics: trajectory engines, error metrics and the invariant manifold.
    cli: command-line experiments.
"""

__version__ = "0.1.0"
