"""Subcircuit matching on transistor netlists: GNN-ranked K-hop regions verified by VF2."""

from .classifier import Model, TrainConfig, evaluate, train
from .graph import CircuitGraph, khop_region, radius, to_graph
from .matcher import MatchConfig, match_all, match_one
from .netlist import Netlist, flatten, parse_netlist
from .rgcn import GNNConfig

__all__ = [
    "CircuitGraph", "GNNConfig", "MatchConfig", "Model", "Netlist", "TrainConfig",
    "evaluate", "flatten", "khop_region", "match_all", "match_one", "parse_netlist",
    "radius", "to_graph", "train",
]
