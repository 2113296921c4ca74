from .experiment import ExperimentService, flops_model, load_model
from .fluxvit import FluxViT, FluxViTConfig
from .sampling import SamplerConfig, SamplingGrid
from .tokenopt import TokenOptConfig, flops, heuristic_search

__all__ = [
    "ExperimentService",
    "flops_model",
    "load_model",
    "FluxViT",
    "FluxViTConfig",
    "SamplerConfig",
    "SamplingGrid",
    "TokenOptConfig",
    "flops",
    "heuristic_search",
]
