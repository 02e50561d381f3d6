"""CausalMesh: a coordination-free causal+ cache for roaming serverless workflows."""

__version__ = "0.1.0"
