"""TEE-backed rollup: protocol library and deterministic simulator."""

__version__ = "0.1.0"
