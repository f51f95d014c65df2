"""Multi-task structured-output regression with input and output auto-encoders."""

__version__ = "0.1.0"
