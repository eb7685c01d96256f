"""Redundancy measures across samples, features, sensors and model
parameters, plus a staged mitigation pipeline and the ``mlrm`` CLI."""

__version__ = "0.1.0"
