"""Label-noise learning by joint classifier + transition-matrix training.

The package trains a classifier and a column-stochastic, diagonally dominant
transition matrix end to end by minimizing cross-entropy through the
transition plus a log-determinant volume penalty, alongside anchor-point
baseline estimators, convex-geometry checks of the scattering assumption the
method's identifiability rests on, synthetic data generators, and a
reproducible experiment CLI.
"""

__version__ = "0.1.0"
