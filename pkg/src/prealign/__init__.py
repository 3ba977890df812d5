"""Prealignment of linear molecules for optical deflection.

Quantum and classical distributions of the time-averaged alignment factor
after an impulsive kick, adiabatic alignment in strong deflecting fields and
the resulting deflection of a molecular beam.
"""
__version__ = "0.1.0"
