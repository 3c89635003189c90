"""Simulator for SDN-controlled multi-tree multicast."""
from .experiment import ScenarioConfig, link_failure_scenario, run_scenario
from .sim_core import Simulator
from .topology import Topology, max_flow, paper_topology, parse_topology, remove_link
from .tree_routing import (MulticastTree, TreeSet, UnreachableReceiver, brute_force_pack,
                           compute_single_tree, compute_tree_set, validate_tree)

__all__ = [
    "ScenarioConfig", "Simulator", "Topology", "MulticastTree", "TreeSet",
    "UnreachableReceiver", "brute_force_pack", "compute_single_tree", "compute_tree_set",
    "link_failure_scenario", "max_flow", "paper_topology", "parse_topology", "remove_link",
    "run_scenario", "validate_tree",
]
