"""Variational quantum sensing: circuit simulation, Fisher-information optimisation and neural phase estimation."""

__version__ = "0.1.0"
