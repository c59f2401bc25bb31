"""Monte Carlo lab for weighted decay of multiplicative-noise heat equations."""

__version__ = "0.1.0"
