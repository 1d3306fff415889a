"""edgemark: benchmark harness for text-classification inference on edge devices."""

__version__ = "0.1.0"
