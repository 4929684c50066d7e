"""``flexmap`` command line.

Exit codes: 0 success, 1 input or configuration error, 2 empty result
(or, for ``validate``, a failed cross-check).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import __version__
from .casefile import read_case
from .ipm import IpmSettings
from .lifp import AggregationError, AggregationZone, build_lifp, compare_zones, region_area
from .network import CaseError, Topology, apply_topology, check_radial
from .oracle import MAX_BUSES, OracleGuardError, check_bracketing
from .sampler import QGrid, auto_qrange, default_workers, sample_nfps
from .svg import HIGHLIGHT, PALETTE, Layer, render

log = logging.getLogger("flexmap")

OK, INPUT_ERROR, EMPTY = 0, 1, 2
EMIT_FORMATS = ("csv", "json", "svg")
BUNDLED = Path(__file__).parent / "cases"


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    case: str | None = None
    topologies: list = field(default_factory=list)  # [(name, path)]
    zone: str = "all"
    bus: int | None = None
    q_span: object = "auto"  # "auto" or (lo, hi) in p.u.
    q_count: int = 21
    workers: int = field(default_factory=default_workers)
    out: str = "flexmap-out"
    emit: tuple = EMIT_FORMATS
    rings: dict = field(default_factory=dict)
    base: str | None = None
    solver_tol: float | None = None

    def validate(self):
        if not self.case:
            raise UsageError("--case is required")
        if self.q_count < 2:
            raise UsageError(f"--q-count must be at least 2, got {self.q_count}")
        if self.workers < 1:
            raise UsageError(f"--workers must be at least 1, got {self.workers}")
        bad = set(self.emit) - set(EMIT_FORMATS)
        if bad:
            raise UsageError(f"unknown --emit format(s) {sorted(bad)}; choose from {','.join(EMIT_FORMATS)}")
        for name, path in self.topologies:
            if not Path(path).is_file():
                raise UsageError(f"topology {name!r}: no such file {path}")

    @property
    def settings(self) -> IpmSettings:
        return IpmSettings() if self.solver_tol is None else IpmSettings(tol=self.solver_tol)


def _parse_span(text):
    if isinstance(text, (list, tuple)):
        lo, hi = map(float, text)
    elif str(text).strip().lower() == "auto":
        return "auto"
    else:
        try:
            lo, hi = (float(v) for v in str(text).split(":"))
        except ValueError:
            raise UsageError(f"--q-span must be 'lo:hi' or 'auto', got {text!r}") from None
    if not lo < hi:
        raise UsageError(f"--q-span needs lo < hi, got {lo}:{hi}")
    return lo, hi


def _parse_pair(text, flag):
    name, sep, value = str(text).partition("=")
    if not sep or not name or not value:
        raise UsageError(f"{flag} expects NAME=VALUE, got {text!r}")
    return name.strip(), value.strip()


def _parse_ids(text):
    try:
        return [int(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError:
        raise UsageError(f"bus list must be comma-separated integers, got {text!r}") from None


def _from_mapping(raw: dict, where: str) -> dict:
    """Translate config-file or flag values to RunConfig fields."""
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for key, val in raw.items():
        k = key.replace("-", "_")
        if k == "topology":
            k = "topologies"
        if k == "ring":
            k = "rings"
        if k not in known:
            raise UsageError(f"{where}: unknown setting {key!r}")
        if k == "topologies":
            if isinstance(val, dict):
                val = list(val.items())
            else:
                val = [_parse_pair(v, "--topology") if isinstance(v, str) else tuple(v) for v in val]
        elif k == "rings":
            if not isinstance(val, dict):
                val = dict(_parse_pair(v, "--ring") for v in val)
            val = {n: _parse_ids(v) if isinstance(v, str) else [int(b) for b in v] for n, v in val.items()}
        elif k == "q_span":
            val = _parse_span(val)
        elif k == "emit":
            val = tuple(v.strip() for v in val.split(",")) if isinstance(val, str) else tuple(val)
        elif k in ("q_count", "workers", "bus"):
            val = int(val)
        elif k == "solver_tol":
            val = float(val)
        out[k] = val
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    merged = {}
    if args.config:
        path = Path(args.config)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path}: invalid JSON ({exc})") from None
        merged.update(_from_mapping(raw, str(path)))
        base = path.parent
        # relative paths in a config file are relative to the file
        if "case" in merged and not Path(merged["case"]).is_absolute() and (base / merged["case"]).exists():
            merged["case"] = str(base / merged["case"])
        merged["topologies"] = [(n, str(base / p) if not Path(p).is_absolute() and (base / p).exists() else p)
                                for n, p in merged.get("topologies", [])]
    flags = {k: v for k, v in vars(args).items()
             if k not in ("config", "command", "func") and v is not None and v != []}
    merged.update(_from_mapping(flags, "command line"))
    cfg = RunConfig(**merged)
    cfg.validate()
    return cfg


def _resolve_case_path(text) -> Path:
    path = Path(text)
    if not path.exists():
        bundled = BUNDLED / (text if text.endswith(".m") else text + ".m")
        if bundled.is_file() and os.sep not in text:
            return bundled
    return path


def load_case(cfg: RunConfig):
    return read_case(_resolve_case_path(cfg.case))


def _topologies(cfg, case):
    out = []
    for name, path in cfg.topologies:
        try:
            out.append((name, Topology.from_json(path)))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"topology {name!r}: cannot read {path}: {exc}") from None
    return out


def _single_topology_case(cfg, case):
    topos = _topologies(cfg, case)
    if len(topos) > 1:
        raise UsageError("this command takes at most one --topology")
    if topos:
        name, topo = topos[0]
        case = apply_topology(case, topo)
        rep = check_radial(case)
        if rep.cycles:
            raise CaseError(f"topology {name!r} is not radial:\n{rep}")
    return case


def _zone(cfg, case, text=None) -> AggregationZone:
    text = cfg.zone if text is None else text
    if text == "all":
        zone = AggregationZone.everything(case)
    elif text.startswith("ring:"):
        name = text[5:]
        if name not in cfg.rings:
            raise UsageError(f"unknown ring {name!r}; define it with --ring {name}=id,id,...")
        zone = AggregationZone(tuple(cfg.rings[name]), text)
    else:
        zone = AggregationZone(tuple(_parse_ids(text)), text)
    zone.check(case)
    net = case.compiled
    dead = [b for b in zone.buses if not net.energized[net.index[b]]]
    if dead:
        raise CaseError(f"zone buses {dead} are not connected to the reference bus under this topology")
    return zone


def _grid(cfg, cases, buses, union=False) -> QGrid:
    if cfg.q_span != "auto":
        return QGrid(*cfg.q_span, cfg.q_count)
    lo, hi = (float("inf"), float("-inf")) if union else (float("-inf"), float("inf"))
    for case in cases:
        for b in buses:
            a, c = auto_qrange(case, b, settings=cfg.settings)
            lo, hi = (min(lo, a), max(hi, c)) if union else (max(lo, a), min(hi, c))
    if not lo < hi:
        raise UsageError("automatic q-spans of the zone buses do not overlap; give --q-span explicitly")
    log.info("auto q-span [%.6f, %.6f] p.u.", lo, hi)
    return QGrid(lo, hi, cfg.q_count)


def _write(out: Path, name: str, text: str):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)
    log.info("wrote %s", out / name)


def _emit_region(cfg, out, stem, region, base_mva):
    if "csv" in cfg.emit:
        _write(out, stem + ".csv", region.to_csv(base_mva))
    if "json" in cfg.emit:
        _write(out, stem + ".json", region.to_json(base_mva))


def cmd_nfp(cfg: RunConfig) -> int:
    case = _single_topology_case(cfg, load_case(cfg))
    bus = cfg.bus
    if bus is None:
        zone = _zone(cfg, case)
        if len(zone.buses) != 1:
            raise UsageError("nfp needs a single bus: use --bus ID")
        bus = zone.buses[0]
    _zone(cfg, case, str(bus))
    try:
        grid = _grid(cfg, [case], [bus])
    except CaseError as exc:
        print(f"flexmap nfp: {exc}", file=sys.stderr)
        return EMPTY
    region = sample_nfps(case, [bus], grid, settings=cfg.settings, workers=cfg.workers)[bus]
    out = Path(cfg.out)
    _emit_region(cfg, out, f"nfp_bus{bus}", region, case.base_mva)
    if "svg" in cfg.emit:
        _write(out, f"nfp_bus{bus}.svg", render([Layer(region.polygon, f"bus {bus}", HIGHLIGHT, HIGHLIGHT, 0.3)],
                                                base_mva=case.base_mva, title=f"{case.name}: bus {bus}"))
    area = region_area(region)
    print(f"bus {bus}: {region.n_slices}/{grid.count} slices, area {area * case.base_mva ** 2:.6g} MW*MVAr")
    if region.empty:
        print(f"bus {bus}: region is empty", file=sys.stderr)
        return EMPTY
    return OK


def cmd_lifp(cfg: RunConfig) -> int:
    case = _single_topology_case(cfg, load_case(cfg))
    zone = _zone(cfg, case)
    try:
        grid = _grid(cfg, [case], zone.buses)
    except CaseError as exc:
        print(f"flexmap lifp: zone {zone.name}: {exc}", file=sys.stderr)
        return EMPTY
    nfps = sample_nfps(case, zone.buses, grid, settings=cfg.settings, workers=cfg.workers)
    lifp = build_lifp([nfps[b] for b in zone.buses], zone.name)
    out = Path(cfg.out)
    for b, r in nfps.items():
        _emit_region(cfg, out, f"nfp_bus{b}", r, case.base_mva)
    _emit_region(cfg, out, "lifp", lifp, case.base_mva)
    area = region_area(lifp)
    member_areas = {b: region_area(r) for b, r in nfps.items()}
    meta = {"zone": list(zone.buses), "grid": grid.to_dict(), "base_mva": case.base_mva,
            "lifp_area_pu2": area, "nfp_areas_pu2": {str(b): a for b, a in member_areas.items()},
            "lifp_within_members": all(area <= a + 1e-12 for a in member_areas.values())}
    if "json" in cfg.emit:
        _write(out, "lifp_meta.json", json.dumps(meta, indent=1))
    if "svg" in cfg.emit:
        layers = [Layer(nfps[b].polygon, f"bus {b}") for b in zone.buses]
        layers.append(Layer(lifp.polygon, "aggregated", HIGHLIGHT, HIGHLIGHT, 0.45))
        _write(out, "lifp.svg", render(layers, base_mva=case.base_mva, title=f"{case.name}: zone {zone.name}"))
    print(f"zone {zone.name}: {lifp.n_slices}/{grid.count} slices, "
          f"area {area * case.base_mva ** 2:.6g} MW*MVAr")
    if not meta["lifp_within_members"]:
        print("aggregated area exceeds a member area", file=sys.stderr)
    if lifp.empty:
        print(f"zone {zone.name}: aggregated region is empty", file=sys.stderr)
        return EMPTY
    return OK


def cmd_compare(cfg: RunConfig) -> int:
    case = load_case(cfg)
    topos = _topologies(cfg, case)
    if len(topos) < 2:
        raise UsageError("compare needs at least two --topology NAME=PATH")
    cases = {}
    for name, topo in topos:
        c = apply_topology(case, topo)
        rep = check_radial(c)
        if rep.cycles:
            raise CaseError(f"topology {name!r} is not radial:\n{rep}")
        cases[name] = c
    first = cases[topos[0][0]]
    zones = [_zone(cfg, first)]
    if not cfg.zone.startswith("ring:"):
        zones += [_zone(cfg, first, "ring:" + r) for r in cfg.rings]
    for z in zones:
        for name, c in cases.items():
            _zone(cfg, c, ",".join(map(str, z.buses)))
    buses = sorted({b for z in zones for b in z.buses})
    try:
        grid = _grid(cfg, cases.values(), buses, union=True)
    except CaseError as exc:
        print(str(exc), file=sys.stderr)
        return EMPTY
    reports = compare_zones(case, topos, zones, grid, base=cfg.base, settings=cfg.settings, workers=cfg.workers)
    out = Path(cfg.out)
    text = "\n\n".join(r.table() for r in reports.values())
    print(text)
    if "csv" in cfg.emit or "json" in cfg.emit:
        _write(out, "compare.txt", text + "\n")
    if "json" in cfg.emit:
        payload = {name: r.to_dict() for name, r in reports.items()}
        _write(out, "compare.json", json.dumps(payload, indent=1))
    for zname, rep in reports.items():
        tag = zname.replace(":", "_").replace(",", "-")
        for res in rep.results:
            _emit_region(cfg, out, f"lifp_{tag}_{res.name}", res.lifp, case.base_mva)
        if "svg" in cfg.emit:
            layers = [Layer(res.lifp.polygon, res.name, PALETTE[i % len(PALETTE)], PALETTE[i % len(PALETTE)], 0.25)
                      for i, res in enumerate(rep.results)]
            _write(out, f"compare_{tag}.svg", render(layers, base_mva=case.base_mva,
                                                     title=f"{case.name}: zone {zname}"))
    if all(res.lifp.empty for rep in reports.values() for res in rep.results):
        print("every aggregated region is empty", file=sys.stderr)
        return EMPTY
    return OK


def cmd_validate(cfg: RunConfig) -> int:
    case = _single_topology_case(cfg, load_case(cfg))
    if len(case.buses) > MAX_BUSES:
        raise OracleGuardError(f"validate is limited to {MAX_BUSES} buses, case has {len(case.buses)}")
    buses = [cfg.bus] if cfg.bus is not None else list(_zone(cfg, case).buses)
    for b in buses:
        _zone(cfg, case, str(b))
    grid = _grid(cfg, [case], buses) if cfg.q_span != "auto" else None
    nfps = {}
    for b in buses:
        g = grid or _grid(cfg, [case], [b])
        nfps[b] = sample_nfps(case, [b], g, settings=cfg.settings, workers=cfg.workers)[b]
    failed = 0
    lines = []
    for b in buses:
        t0 = time.perf_counter()
        rep = check_bracketing(case, nfps[b], workers=cfg.workers)
        lines.append(rep.summary() + f"  [{time.perf_counter() - t0:.1f} s]")
        failed += len(rep.violations)
    text = "\n".join(lines)
    print(text)
    if "json" in cfg.emit or "csv" in cfg.emit:
        _write(Path(cfg.out), "validate.txt", text + "\n")
    if failed:
        print(f"{failed} bracketing violations", file=sys.stderr)
        return EMPTY
    return OK


def cmd_radial_check(cfg: RunConfig) -> int:
    case = load_case(cfg)
    topos = _topologies(cfg, case) or [("case", None)]
    bad = 0
    for name, topo in topos:
        c = apply_topology(case, topo) if topo is not None else case
        rep = check_radial(c)
        print(f"{name}: {rep}")
        bad += not rep.radial
    return INPUT_ERROR if bad else OK


def _add_common(p):
    p.add_argument("--config", help="JSON file with settings (flags override it)")
    p.add_argument("--case", help="MATPOWER case file, or the name of a bundled case (case5, ...)")
    p.add_argument("--topology", action="append", default=[], metavar="NAME=PATH",
                   help="switch-state JSON {branch_id: 0|1}; repeatable")
    p.add_argument("--zone", help='"all", a comma list of bus ids, or ring:NAME')
    p.add_argument("--ring", action="append", default=[], metavar="NAME=IDS", help="define ring zone NAME")
    p.add_argument("--bus", type=int, help="single flex bus")
    p.add_argument("--q-span", help="lo:hi in p.u., or auto (default)")
    p.add_argument("--q-count", type=int, help="number of q-slices (default 21)")
    p.add_argument("--workers", type=int, help="worker processes (default: CPU count)")
    p.add_argument("--out", help="output directory (default flexmap-out)")
    p.add_argument("--emit", help="comma list of csv,json,svg (default all)")
    p.add_argument("--base", help="topology used as the normalization base (default: first)")
    p.add_argument("--solver-tol", type=float, help=argparse.SUPPRESS)


COMMANDS = {
    "nfp": (cmd_nfp, "sample the flexibility region of one bus"),
    "lifp": (cmd_lifp, "aggregate the regions of a zone"),
    "compare": (cmd_compare, "compare aggregated areas across topologies"),
    "validate": (cmd_validate, "cross-check sampled regions against the brute-force oracle"),
    "radial-check": (cmd_radial_check, "report whether topologies are radial"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are input errors; exit 2 is reserved for empty results
        self.print_usage(sys.stderr)
        self.exit(INPUT_ERROR, f"{self.prog}: error: {message}\n")


def _join_spans(argv):
    """Let ``--q-span -0.3:0.3`` through (argparse would take the value for a flag)."""
    out = []
    it = iter(argv)
    for tok in it:
        if tok == "--q-span":
            out.append(f"--q-span={next(it, '')}")
        else:
            out.append(tok)
    return out


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flexmap", description="AC-feasible PQ flexibility regions.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (func, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        _add_common(p)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("FLEXMAP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    argv = sys.argv[1:] if argv is None else list(argv)
    args = make_parser().parse_args(_join_spans(argv))
    try:
        cfg = build_config(args)
        return args.func(cfg)
    except (UsageError, CaseError, AggregationError) as exc:
        print(f"flexmap {args.command}: {exc}", file=sys.stderr)
        return INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
