"""AC-feasible PQ flexibility regions of radial distribution networks.

Typical use::

    from flexmap import read_case, QGrid, sample_nfp, build_lifp

    case = read_case("feeder.m")
    grid = QGrid(-0.3, 0.3, 21)
    regions = [sample_nfp(case, bus, grid) for bus in (3, 4)]
    zone_region = build_lifp(regions)
"""
from .casefile import emit_case, parse_case, read_case
from .lifp import AggregationZone, LIFPRegion, build_lifp, compare_topologies, membership, region_area
from .network import Branch, Bus, CaseError, Generator, Load, NetworkCase, Topology, apply_topology, check_radial
from .powerflow import OperatingPoint, PowerFlowDiverged, branch_flows, jacobian, mismatch, solve_newton
from .sampler import NFPRegion, QGrid, assemble_flex_problem, auto_qrange, sample_nfp, sample_nfps, solve_slices

__version__ = "0.1.0"

__all__ = [
    "AggregationZone", "Branch", "Bus", "CaseError", "Generator", "LIFPRegion", "Load", "NFPRegion",
    "NetworkCase", "OperatingPoint", "PowerFlowDiverged", "QGrid", "Topology", "apply_topology",
    "assemble_flex_problem", "auto_qrange", "branch_flows", "build_lifp", "check_radial", "compare_topologies",
    "emit_case", "jacobian", "membership", "mismatch", "parse_case", "read_case", "region_area",
    "sample_nfp", "sample_nfps", "solve_newton", "solve_slices",
]
