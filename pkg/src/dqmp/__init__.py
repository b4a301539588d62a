"""Deep Q-learning of model parameters for KVFD viscoelastic curve fitting."""

__version__ = "0.1.0"
