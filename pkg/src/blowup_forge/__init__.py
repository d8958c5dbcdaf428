"""Approximate Type II blow-up profiles for the radial energy-critical
focusing wave equation in dimensions 4 and 5, with numerical verification
of every closed-form object the construction rests on."""

__version__ = "0.1.0"
