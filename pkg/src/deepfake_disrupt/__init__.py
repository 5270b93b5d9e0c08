"""Restricted black-box adversarial disruption of DeepFake face swapping."""

__version__ = "0.1.0"
