"""Federated keyword-spotting simulator with user-invariant training strategies."""

from .data import ClientDataset, FederationData, GeneratorSpec, client_stats, generate_federation
from .engine import FedConfig, run_federation
from .nn import LayerSpec, ModelParams

__all__ = [
    "ClientDataset",
    "FederationData",
    "FedConfig",
    "GeneratorSpec",
    "LayerSpec",
    "ModelParams",
    "client_stats",
    "generate_federation",
    "run_federation",
]
