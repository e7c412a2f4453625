"""circfit: Bayesian regression for mixed circular and linear responses.

Builds latent Gaussian models around the link-adjusted von Mises likelihood
and fits them with nested Laplace approximations.
"""

__version__ = "0.1.0"
