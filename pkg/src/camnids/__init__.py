"""Software model and toolchain for a three-phase CAM-based NIDS pattern-matching engine."""

__version__ = "0.1.0"
