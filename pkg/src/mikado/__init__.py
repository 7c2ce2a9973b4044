"""Multi-pass combinatorial track finding with throughput scoring."""

__version__ = "0.1.0"
