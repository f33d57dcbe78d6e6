"""Command-line driver: configure a scenario, run one experiment, write CSV plus manifest.

Settings are resolved in increasing priority: built-in defaults, an INI
config file (``--config``), ``SYSRISK_*`` environment variables, then
command-line flags. A manifest written by a previous run can be passed to
``--config`` to repeat that run exactly.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import os
import shutil
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import assets as A
from .balance import BalanceRatios
from .graph import (TopologyError, complete_graph, empty_graph, enumerate_connected_topologies, is_connected,
                    load_edge_list, named_topologies, pagerank)

EXPERIMENTS = ("fig1", "fig2", "dg", "contagion", "infection", "decompose", "optimize", "sweep-s",
               "topology-table")
ENV_PREFIX = "SYSRISK_"

# Per-experiment defaults taken from the figure set-ups.
EXPERIMENT_DEFAULTS = {
    "fig1": {"p": 0.1, "draws": 200_000, "n_list": ",".join(str(n) for n in range(1, 31)),
             "families": "normal,t3"},
    "fig2": {"p": 0.1, "draws": 20_000, "n_list": "5,10,15,20", "families": "normal"},
    "dg": {"p": 0.1, "draws": 20_000, "k_assets": 3, "portfolios": 5000, "topology": "complete"},
    "contagion": {"p": 0.2, "draws": 100_000, "topology": "d"},
    "infection": {"p": 0.2, "draws": 100_000, "topology": "d"},
    "decompose": {"p": 0.2, "draws": 100_000, "topology": "d"},
    "optimize": {"p": 0.2, "draws": 5000, "rho": 0.8, "topology": "b"},
    "sweep-s": {"p": 0.2, "draws": 5000, "rho": 0.8, "topology": "b", "s_list": "4,8,15"},
    "topology-table": {"p": 0.2, "draws": 5000, "rho": 0.8, "topology": "all"},
}


@dataclass
class ScenarioConfig:
    experiment: str | None = None
    seed: int | None = None
    topology: str | None = None
    edges: str | None = None
    n_banks: int = 5
    p: float | None = None
    s: float = 4.0
    rho: float | None = None
    family: str = "normal"
    v: float | None = None
    draws: int | None = None
    n_list: str | None = None
    s_list: str | None = None
    families: str | None = None
    k_assets: int | None = None
    portfolios: int | None = None
    threads: int | None = None
    out: str = "results"
    ratios: BalanceRatios = field(default_factory=BalanceRatios)

    def resolved(self) -> "ScenarioConfig":
        """Copy with unset fields filled from the experiment's defaults."""
        extra = EXPERIMENT_DEFAULTS.get(self.experiment or "", {})
        updates = {k: v for k, v in extra.items() if getattr(self, k) is None}
        out = replace(self, **updates)
        if out.rho is None:
            out = replace(out, rho=0.0)
        return out

    def identity(self) -> dict:
        """Fields that determine the results (output location and threading excluded)."""
        d = asdict(self)
        d.pop("out")
        d.pop("threads")
        return d

    def scenario_hash(self) -> str:
        blob = json.dumps(self.identity(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


_RATIO_FIELDS = [f.name for f in fields(BalanceRatios)]
_FIELD_TYPES = {"seed": int, "n_banks": int, "draws": int, "k_assets": int, "portfolios": int, "threads": int,
                "p": float, "s": float, "rho": float, "v": float}


def _coerce(name: str, value):
    if value is None or value == "":
        return None
    kind = _FIELD_TYPES.get(name)
    if kind is int:
        return int(value)
    if kind is float or name in _RATIO_FIELDS:
        return float(value)
    return str(value)


def _parse_list(text: str, kind=float) -> list:
    return [kind(x) for x in str(text).split(",") if x.strip()]


def parse_families(text: str) -> list[tuple[str, float | None]]:
    """``normal,t3,t5`` -> ``[("normal", None), ("student_t", 3.0), ("student_t", 5.0)]``."""
    out = []
    for item in _parse_list(text, str):
        item = item.strip()
        if item == "normal":
            out.append(("normal", None))
        elif item.startswith("t"):
            out.append(("student_t", float(item[1:])))
        else:
            raise ValueError(f"unknown family {item!r}")
    return out


# -- validation ---------------------------------------------------------------------

def _topology_from(cfg: ScenarioConfig):
    if cfg.edges:
        return load_edge_list(cfg.edges)
    name = cfg.topology
    if name in (None, "all"):
        return None
    if name == "complete":
        return complete_graph(cfg.n_banks)
    if name == "empty":
        return empty_graph(cfg.n_banks)
    named = named_topologies()
    if name not in named:
        raise TopologyError(f"unknown topology {name!r}")
    return named[name]


def validate(cfg: ScenarioConfig) -> list[str]:
    """Diagnostics for ``cfg``; empty when :func:`run` would accept it."""
    msgs = []
    if cfg.experiment not in EXPERIMENTS:
        msgs.append(f"experiment: must be one of {', '.join(EXPERIMENTS)}, got {cfg.experiment!r}")
    if cfg.seed is None:
        msgs.append("seed: a seed is required")
    elif cfg.seed < 0:
        msgs.append(f"seed: must be nonnegative, got {cfg.seed}")
    cfg = cfg.resolved()
    if cfg.p is not None and not 0 < cfg.p < 1:
        msgs.append(f"p: must lie in (0, 1), got {cfg.p}")
    if not cfg.s >= 1:
        msgs.append(f"s: must be >= 1, got {cfg.s}")
    if cfg.rho is not None and not 0 <= cfg.rho <= 1:
        msgs.append(f"rho: must lie in [0, 1], got {cfg.rho}")
    if cfg.family not in ("normal", "student_t"):
        msgs.append(f"family: must be normal or student_t, got {cfg.family!r}")
    elif cfg.family == "student_t" and not (cfg.v and cfg.v > 0):
        msgs.append("v: student_t needs positive degrees of freedom")
    if cfg.draws is not None and cfg.draws < 2:
        msgs.append(f"draws: need at least 2, got {cfg.draws}")
    if cfg.n_banks < 1:
        msgs.append(f"n_banks: must be positive, got {cfg.n_banks}")
    if cfg.threads is not None and cfg.threads < 1:
        msgs.append(f"threads: must be positive, got {cfg.threads}")
    if cfg.k_assets is not None and cfg.k_assets < 1:
        msgs.append(f"k_assets: must be positive, got {cfg.k_assets}")
    if cfg.portfolios is not None and cfg.portfolios < 2:
        msgs.append(f"portfolios: need at least 2, got {cfg.portfolios}")
    for name, text, kind in (("n_list", cfg.n_list, int), ("s_list", cfg.s_list, float)):
        if text is None:
            continue
        try:
            vals = _parse_list(text, kind)
        except ValueError:
            msgs.append(f"{name}: cannot parse {text!r}")
            continue
        if not vals or min(vals) < 1:
            msgs.append(f"{name}: values must be >= 1")
    if cfg.families is not None:
        try:
            fams = parse_families(cfg.families)
            if any(dof is not None and dof <= 0 for _, dof in fams):
                msgs.append("families: t degrees of freedom must be positive")
        except ValueError as exc:
            msgs.append(f"families: {exc}")
    for problem in cfg.ratios.problems():
        msgs.append(f"ratios: {problem}")
    if cfg.experiment in ("dg", "contagion", "infection", "decompose", "optimize", "sweep-s"):
        try:
            topo = _topology_from(cfg)
        except (TopologyError, OSError, ValueError) as exc:
            msgs.append(f"topology: {exc}")
            topo = None
        if topo is None and not any(m.startswith("topology") for m in msgs):
            msgs.append("topology: this experiment needs a single topology")
        if topo is not None:
            if topo.n_edges > 0 and not is_connected(topo):
                msgs.append("edges: a network with interbank links must be connected")
            if cfg.experiment in ("optimize", "sweep-s") and topo.n_banks > 6:
                msgs.append(f"topology: exhaustive search is limited to 6 banks, got {topo.n_banks}")
            if cfg.experiment == "decompose" and topo.n_banks > 10:
                msgs.append(f"topology: decomposition is limited to 10 banks, got {topo.n_banks}")
    if cfg.experiment == "topology-table" and cfg.topology not in (None, "all"):
        msgs.append("topology: topology-table always covers all connected five-bank networks")
    return msgs


# -- experiments ---------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if isinstance(x, (tuple, list)):
        return " ".join(_fmt(v) for v in x)
    return str(x)


def write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = list(rows[0].keys()) if rows else []
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in header])


def _spec(cfg):
    from .risk import CostSpec
    return CostSpec(cfg.s)


def _independent(cfg, k):
    return A.independent_universe(k, cfg.p, cfg.ratios.loss_threshold, cfg.family,
                                  cfg.v if cfg.family == "student_t" else None)


def _single_scenario(cfg):
    from .risk import Scenario
    topo = _topology_from(cfg)
    return Scenario(topo, _independent(cfg, topo.n_banks), A.full_diversity(topo.n_banks), cfg.ratios)


def _common(cfg, sid):
    return {"scenario_id": sid, "s": cfg.s, "p": cfg.p, "draws": cfg.draws, "seed": cfg.seed}


def _run_fig1(cfg, sid):
    from .risk import simultaneity_sweep
    return simultaneity_sweep(_parse_list(cfg.n_list, int), parse_families(cfg.families), cfg.p, _spec(cfg),
                              ["full_diversity", "full_diversification"], cfg.draws, cfg.seed, sid, cfg.ratios)


def _run_fig2(cfg, sid):
    from .risk import simultaneity_sweep
    rows = []
    for n in _parse_list(cfg.n_list, int):
        modes = [f"m_diversified:{m}" for m in range(n + 1)]
        rows += simultaneity_sweep([n], parse_families(cfg.families), cfg.p, _spec(cfg), modes,
                                   cfg.draws, cfg.seed, sid, cfg.ratios)
    return rows


def _run_dg(cfg, sid):
    from .analysis import dg_landscape
    topo = _topology_from(cfg)
    land = dg_landscape(topo, _independent(cfg, cfg.k_assets), _spec(cfg), cfg.portfolios, cfg.draws,
                        cfg.seed, cfg.ratios)
    rows = []
    for j in range(len(land.costs)):
        kind = {land.DIVERSIFIED: "full_diversification", land.DIVERSE: "full_diversity"}.get(j, "random")
        rows.append({**_common(cfg, sid), "pattern": j, "kind": kind, "D": land.D[j], "G": land.G[j],
                     "expected_cost": land.costs[j], "std_error": land.std_errors[j],
                     "diff_from_best": land.diff_from_best[j], "diff_std_error": land.diff_std_errors[j],
                     "best": j == land.best, "weights": land.weights[j].ravel().tolist()})
    return rows


def _run_contagion(cfg, sid):
    from .analysis import contagion_matrix
    cm = contagion_matrix(_single_scenario(cfg), cfg.draws, cfg.seed)
    n = cm.rates.shape[0]
    return [{**_common(cfg, sid), "i": i + 1, "j": j + 1, "rate_per_1000": cm.rates[i, j],
             "events": int(cm.event_counts[i])} for i in range(n) for j in range(n)]


def _run_infection(cfg, sid):
    from .analysis import infection_scores
    sc = _single_scenario(cfg)
    scores = infection_scores(sc, cfg.draws, cfg.seed)
    pr = pagerank(sc.topology).pagerank
    return [{**_common(cfg, sid), "bank": i + 1, "infectivity": scores.infectivity[i],
             "susceptibility": scores.susceptibility[i], "pagerank": pr[i],
             "single_events": int(scores.single_events[i]),
             "fundamental_defaults": int(scores.fundamental_defaults[i]),
             "contagious_defaults": int(scores.contagious_defaults[i])} for i in range(sc.n_banks)]


def _run_decompose(cfg, sid):
    from .analysis import decompose_collective_defaults
    table = decompose_collective_defaults(_single_scenario(cfg), _spec(cfg), cfg.draws, cfg.seed)
    return [{**_common(cfg, sid), "index": k + 1, "subset": subset, "share": table.shares[k],
             "cost_sum": table.costs[k], "draws_with_set": int(table.counts[k])}
            for k, subset in enumerate(table.subsets)]


def _six(cfg):
    return A.correlated_six_universe(cfg.rho, cfg.p, cfg.ratios.loss_threshold)


def _run_optimize(cfg, sid):
    from .analysis import optimize_allocation_discrete
    res = optimize_allocation_discrete(_topology_from(cfg), _six(cfg), _spec(cfg), cfg.draws, cfg.seed,
                                       cfg.ratios)
    canon = res.canonical
    return [{**_common(cfg, sid), "rho": cfg.rho, "assignment": tuple(int(x) for x in row),
             "expected_cost": res.costs[k], "std_error": res.std_errors[k],
             "diff_from_best": res.diff_from_best[k], "diff_std_error": res.diff_std_errors[k],
             "co_optimal": bool(res.tie_mask[k]), "best": tuple(row) == res.best_assignment,
             "canonical": tuple(row) == canon}
            for k, row in enumerate(res.assignments)]


def _run_sweep_s(cfg, sid):
    from .analysis import AllocationSweep
    from .risk import CostSpec
    sweep = AllocationSweep(_topology_from(cfg), _six(cfg), cfg.draws, cfg.seed, cfg.ratios)
    rows = []
    for s in _parse_list(cfg.s_list, float):
        res = sweep.result(CostSpec(s))
        rows.append({**_common(cfg, sid), "s": s, "rho": cfg.rho, "canonical": res.canonical,
                     "best_assignment": res.best_assignment, "best_cost": res.best_cost,
                     "best_std_error": res.best_std_error, "n_asset6": res.canonical.count(6),
                     "n_co_optimal": len(res.ties)})
    return rows


def _run_topology_table(cfg, sid):
    from .analysis import optimization_vs_topology
    rows = optimization_vs_topology(_spec(cfg), cfg.rho, cfg.p, cfg.draws, cfg.seed,
                                    enumerate_connected_topologies(5), cfg.ratios)
    return [{**_common(cfg, sid), "rho": cfg.rho, **r} for r in rows]


RUNNERS = {"fig1": _run_fig1, "fig2": _run_fig2, "dg": _run_dg, "contagion": _run_contagion,
           "infection": _run_infection, "decompose": _run_decompose, "optimize": _run_optimize,
           "sweep-s": _run_sweep_s, "topology-table": _run_topology_table}


def run(cfg: ScenarioConfig, stderr=None) -> int:
    """Run one experiment; returns a process exit status."""
    stderr = stderr or sys.stderr
    problems = validate(cfg)
    if problems:
        for msg in problems:
            print(f"invalid config: {msg}", file=stderr)
        return 2
    cfg = cfg.resolved()
    if cfg.threads:
        import numba
        numba.set_num_threads(min(cfg.threads, numba.config.NUMBA_NUM_THREADS))
    sid = cfg.scenario_hash()
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=out_dir))
    try:
        start = time.perf_counter()
        rows = RUNNERS[cfg.experiment](cfg, sid)
        elapsed = time.perf_counter() - start
        csv_name = f"{cfg.experiment}-{sid}.csv"
        write_csv(tmp / csv_name, rows)
        manifest = {"config": config_to_dict(cfg), "scenario_id": sid, "seed": cfg.seed,
                    "version": __version__, "wall_time_seconds": elapsed, "outputs": [csv_name]}
        man_name = f"manifest-{sid}.json"
        (tmp / man_name).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        for name in (csv_name, man_name):
            os.replace(tmp / name, out_dir / name)
        print(out_dir / csv_name)
        return 0
    except Exception as exc:  # report, leave nothing half-written
        print(f"error: {type(exc).__name__}: {exc}", file=stderr)
        return 1
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


# -- config sources -------------------------------------------------------------------

def config_to_dict(cfg: ScenarioConfig) -> dict:
    return asdict(cfg)


def _apply(cfg: ScenarioConfig, values: dict, source: str) -> ScenarioConfig:
    top, ratio = {}, {}
    names = {f.name for f in fields(ScenarioConfig)} - {"ratios"}
    for key, value in values.items():
        key = key.replace("-", "_").lower()
        if key in names:
            top[key] = _coerce(key, value)
        elif key in _RATIO_FIELDS:
            ratio[key] = _coerce(key, value)
        else:
            raise ValueError(f"{source}: unknown setting {key!r}")
    cfg = replace(cfg, **top)
    if ratio:
        cfg = replace(cfg, ratios=replace(cfg.ratios, **ratio))
    return cfg


def load_config_file(path: str | Path, cfg: ScenarioConfig | None = None) -> ScenarioConfig:
    """Read an INI file (``[scenario]`` and ``[ratios]`` sections) or a run manifest."""
    cfg = cfg or ScenarioConfig()
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        data = json.loads(text)["config"]
        ratios = data.pop("ratios", {})
        cfg = _apply(cfg, data, str(path))
        return _apply(cfg, ratios, str(path))
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.read_string(text, source=str(path))
    for section in parser.sections():
        if section not in ("scenario", "ratios"):
            raise ValueError(f"{path}: unknown section [{section}]")
        cfg = _apply(cfg, dict(parser[section]), f"{path} [{section}]")
    return cfg


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    return {k[len(ENV_PREFIX):].lower(): v for k, v in environ.items() if k.startswith(ENV_PREFIX)}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sysrisk", description=__doc__.splitlines()[0])
    ap.add_argument("command", nargs="?", choices=["run", "validate"], default="run")
    ap.add_argument("--config", help="INI config file or a manifest from an earlier run")
    ap.add_argument("--experiment", choices=EXPERIMENTS)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--topology", help="named network (a-h or degree name), complete, empty, or all")
    ap.add_argument("--edges", metavar="FILE", help="edge-list file; overrides --topology")
    ap.add_argument("--n-banks", type=int, help="size of complete/empty networks")
    ap.add_argument("--p", type=float, help="single-asset default probability")
    ap.add_argument("--s", type=float, help="cost exponent")
    ap.add_argument("--rho", type=float, help="correlation parameter of the six-asset universe")
    ap.add_argument("--family", choices=["normal", "student_t"])
    ap.add_argument("--v", type=float, help="Student-t degrees of freedom")
    ap.add_argument("--draws", type=int)
    ap.add_argument("--n-list", help="comma-separated bank counts (fig1, fig2)")
    ap.add_argument("--s-list", help="comma-separated cost exponents (sweep-s)")
    ap.add_argument("--families", help="comma-separated families such as normal,t3 (fig1, fig2)")
    ap.add_argument("--k-assets", type=int, help="number of assets (dg)")
    ap.add_argument("--portfolios", type=int, help="number of weight patterns (dg)")
    ap.add_argument("--threads", type=int)
    ap.add_argument("--out", metavar="DIR")
    return ap


def config_from_args(argv=None, environ=None) -> tuple[str, ScenarioConfig]:
    args = build_parser().parse_args(argv)
    cfg = ScenarioConfig()
    if args.config:
        cfg = load_config_file(args.config, cfg)
    cfg = _apply(cfg, env_overrides(environ), "environment")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config") and v is not None}
    return args.command, _apply(cfg, flags, "command line")


def main(argv=None) -> int:
    try:
        command, cfg = config_from_args(argv)
    except (ValueError, OSError, configparser.Error) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    if command == "validate":
        problems = validate(cfg)
        for msg in problems:
            print(msg)
        return 2 if problems else 0
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
