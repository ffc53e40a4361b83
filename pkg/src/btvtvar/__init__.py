"""Time-varying tensor vector autoregression with Ising-chain activations."""

__version__ = "0.1.0"
