"""Reference TensorFlow-Lite classification runner for the edgemark harness."""

__version__ = "0.1.0"
