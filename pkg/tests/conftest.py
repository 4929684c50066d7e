from pathlib import Path

import numpy as np
import pytest

from flexmap.casefile import read_case
from flexmap.network import REFERENCE, Branch, Bus, Generator, Load, NetworkCase, Topology, apply_topology
from flexmap.sampler import QGrid, default_workers, sample_nfps

CASES = Path(__file__).resolve().parents[1] / "src" / "flexmap" / "cases"

# switch vectors of the bundled fixtures; the first one of each case is its file default
TOPOLOGIES = {
    "case5": {"default": {4: 1, 5: 0}, "chain": {4: 0, 5: 1}},
    "case9_ring": {"default": {2: 1, 3: 1, 4: 1, 7: 1, 8: 1, 9: 0, 10: 0},
                   "b_end": {2: 1, 3: 1, 4: 0, 7: 1, 8: 1, 9: 1, 10: 0},
                   "cross": {2: 0, 3: 1, 4: 1, 7: 1, 8: 1, 9: 0, 10: 1}},
}
GRID = QGrid(-0.3, 0.3, 21)


def case_path(name):
    return CASES / f"{name}.m"


def load(name):
    return read_case(case_path(name))


def random_tree_case(n, rng, *, chord=False, name="tree") -> NetworkCase:
    """Random radial feeder on ``n`` buses (bus 1 is the reference); optionally one extra chord."""
    buses = [Bus(1, REFERENCE)] + [Bus(i) for i in range(2, n + 1)]
    branches = []
    for i in range(2, n + 1):
        parent = int(rng.integers(1, i))
        branches.append(Branch.from_impedance(i - 1, parent, i, rng.uniform(0.005, 0.03), rng.uniform(0.01, 0.05),
                                              rng.uniform(0, 1e-3)))
    if chord:
        while True:
            a, b = sorted(rng.choice(np.arange(1, n + 1), 2, replace=False).tolist())
            if not any({br.from_bus, br.to_bus} == {a, b} for br in branches):
                break
        branches.append(Branch.from_impedance(n, a, b, 0.02, 0.04))
    loads = [Load(i, i, rng.uniform(0, 0.05), rng.uniform(0, 0.02)) for i in range(2, n + 1)]
    gens = [Generator(1, 1)]
    return NetworkCase(10.0, 20.0, buses, branches, gens, loads, name)


@pytest.fixture(scope="session")
def case5():
    return load("case5")


@pytest.fixture(scope="session")
def case9():
    return load("case9_ring")


@pytest.fixture(scope="session")
def fixture_regions():
    """``{(case, topology): (case object, {bus: NFPRegion})}`` for every bundled fixture topology."""
    out = {}
    for cname, topos in TOPOLOGIES.items():
        base = load(cname)
        for tname, vec in topos.items():
            c = apply_topology(base, Topology(vec))
            buses = [int(b) for b in c.compiled.bus_ids if b != c.reference_bus.id]
            out[(cname, tname)] = (c, sample_nfps(c, buses, GRID, workers=default_workers()))
    return out


_ACCEPTANCE = []


def record_criterion(number, ok, detail):
    """``ok`` is True/False, or the string "WAIVED" for a criterion whose inputs are absent."""
    verdict = ok if isinstance(ok, str) else ("PASS" if ok else "FAIL")
    line = f"criterion {number}: {verdict}  {detail}"
    _ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
