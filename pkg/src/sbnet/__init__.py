"""Single-branch and two-branch face/voice embedding networks in numpy."""

__version__ = "0.1.0"
