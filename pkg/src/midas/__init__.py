"""Multi-agent trajectory imputation with a derivative-accumulating self-ensemble."""

__version__ = "0.1.0"
