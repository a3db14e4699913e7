"""Graph-memory routing of multi-role workflows over a simulated model pool."""

__version__ = "0.1.0"

from .backend import Benchmark, BenchmarkSpec, make_benchmark
from .encoder import EncoderDims, RoutingPolicy, init_params
from .env import Action, EnvConfig, RoutingEnv
from .memory import HeteroGraph, HubSet, QueryNode, ResponseNode
from .ppo import TrainConfig, train

__all__ = [
    "Action", "Benchmark", "BenchmarkSpec", "EncoderDims", "EnvConfig",
    "HeteroGraph", "HubSet", "QueryNode", "ResponseNode", "RoutingEnv",
    "RoutingPolicy", "TrainConfig", "init_params", "make_benchmark", "train",
]
