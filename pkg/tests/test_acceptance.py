"""Acceptance criteria, one test each. Every test prints a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``. The full suite takes
roughly ten to fifteen minutes on one core.
"""
import functools
import math
import time

import numpy as np
from scipy import stats

from clearing_cases import random_problem
from sysrisk import assets as A
from sysrisk import graph as g
from sysrisk.analysis import (AllocationSweep, cost_pair, dg_landscape, infection_scores,
                              optimization_vs_topology, s_star_threshold)
from sysrisk.cli import main as cli_main
from sysrisk.clearing import clearing_vector, clearing_vector_oracle
from sysrisk.risk import (CostSpec, Scenario, expected_cost_diversity, monte_carlo_expected_cost,
                          simultaneity_sweep)

S4 = CostSpec(4)
SEED = 1
NAMED = g.named_topologies()
OPT_DRAWS = 5000


@functools.lru_cache(maxsize=None)
def _sweep(key: str, rho: float) -> AllocationSweep:
    topo = {"complete": g.complete_graph(5), "empty": g.empty_graph(5)}.get(key) or NAMED[key]
    return AllocationSweep(topo, A.correlated_six_universe(rho, 0.2, -0.2), OPT_DRAWS, SEED)


def test_criterion_01_clearing_oracle(report):
    start = time.perf_counter()
    worst = 0.0
    for n, trials, seed in ((5, 1000, 501), (6, 200, 601)):
        rng = np.random.default_rng(seed)
        for _ in range(trials):
            cp = random_problem(rng, n)
            worst = max(worst, float(np.max(np.abs(clearing_vector(cp).p_star - clearing_vector_oracle(cp)))))
    elapsed = time.perf_counter() - start
    report(1, "clearing vs oracle", worst <= 1e-8 and elapsed < 60,
           f"max |diff| = {worst:.2e} over 1000 N=5 + 200 N=6 problems in {elapsed:.1f} s")


def test_criterion_02_closed_forms(report):
    sc = Scenario(g.empty_graph(2), A.independent_universe(2, 0.1, -0.2), A.full_diversity(2))
    res = monte_carlo_expected_cost(sc, S4, 200_000, SEED)
    exact = expected_cost_diversity(2, 0.1, S4)
    ok_a = abs(res.expected_cost - exact) <= 3 * res.std_error and abs(exact - 0.34) < 1e-12
    sc5 = Scenario(g.empty_graph(5), A.independent_universe(5, 0.2, -0.2), A.full_diversification(5, 5))
    res5 = monte_carlo_expected_cost(sc5, S4, 100_000, SEED)
    factor = res5.default_histogram[5] / res5.n_draws
    ok_b = abs(factor - 0.03) <= 0.005
    report(2, "closed-form cross-checks", ok_a and ok_b,
           f"N=2 MC {res.expected_cost:.4f} +/- {res.std_error:.4f} vs {exact:.4f}; "
           f"N=5 diversification probability {factor:.4f} vs .03")


def test_criterion_03_fig1_crossovers(report):
    normal = simultaneity_sweep(list(range(5, 31)), [("normal", None)], 0.1, S4,
                                ["full_diversity", "full_diversification"], 200_000, SEED)
    heavy = simultaneity_sweep([5, 10, 20], [("student_t", 3.0)], 0.1, S4,
                               ["full_diversity", "full_diversification"], 200_000, SEED)

    def gaps(rows):
        by = {}
        for r in rows:
            by.setdefault(r["N"], {})[r["mode"]] = r
        out = {}
        for n, pair in by.items():
            d, v = pair["full_diversity"], pair["full_diversification"]
            out[n] = (d["expected_cost"] - v["expected_cost"]) / math.hypot(d["std_error"], v["std_error"])
        return out

    z_normal = gaps(normal)
    z_heavy = gaps(heavy)
    ok = all(z > 3 for z in z_normal.values()) and all(z < -3 for z in z_heavy.values())
    report(3, "Fig 1 crossovers", ok,
           f"normal min z(diversity - diversification) = {min(z_normal.values()):.1f} over N=5..30; "
           f"t3 z at N=5,10,20 = " + ", ".join(f"{z_heavy[n]:.1f}" for n in (5, 10, 20)))


def test_criterion_04_fig4d_landscape(report):
    u = A.independent_universe(3, 0.1, -0.2)
    details, ok = [], True
    for n_pat, n_draws in ((500, 5000), (5000, 20_000)):
        land = dg_landscape(g.complete_graph(5), u, S4, n_pat, n_draws, SEED)
        gap, se = land.diff_from_best[land.DIVERSIFIED], land.diff_std_errors[land.DIVERSIFIED]
        within = gap <= 2 * se
        ok &= bool(within)
        details.append(f"{n_pat}x{n_draws}: D=G=0 cost {land.costs[0]:.3f}, sampled min {land.costs[land.best]:.3f} "
                       f"(D={land.D[land.best]:.2f}, G={land.G[land.best]:.2f}), gap {gap:.3f} <= 2x{se:.3f}: {within}")
    report(4, "Fig 4d full diversification is optimal on the complete graph", ok, "; ".join(details))


def test_criterion_05_infectivity_pagerank(report):
    u = A.independent_universe(5, 0.2, -0.2)
    rhos = {}
    for letter in g.named_letters():
        t = NAMED[letter]
        scores = infection_scores(Scenario(t, u, A.full_diversity(5)), 100_000, SEED)
        rhos[letter] = stats.spearmanr(scores.infectivity, g.pagerank(t).pagerank)[0]
    y = g.pagerank(NAMED["b"]).pagerank
    b_ok = abs(y[1] - y[2]) < 1e-12 and all(y[1] > y[k] for k in (0, 3, 4))
    ok = all(r > 0 for r in rhos.values()) and b_ok
    report(5, "Fig 7 infectivity tracks PageRank", ok,
           "Spearman " + ", ".join(f"{k}={v:.2f}" for k, v in rhos.items()) + f"; (b) nodes 2,3 lead: {b_ok}")


def test_criterion_06_fig8_entropy_hhi(report):
    u = A.independent_universe(5, 0.2, -0.2)
    ent, hhi, costs = [], [], []
    for t in g.enumerate_connected_topologies(5):
        res = monte_carlo_expected_cost(Scenario(t, u, A.full_diversity(5)), S4, 100_000, SEED)
        f = g.fragility(t, "degree")
        ent.append(f.entropy)
        hhi.append(f.hhi)
        costs.append(res.expected_cost)
    r_e = stats.spearmanr(ent, costs)
    r_h = stats.spearmanr(hhi, costs)
    ok = r_e.statistic < 0 and r_e.pvalue < 0.05 and r_h.statistic > 0 and r_h.pvalue < 0.05
    report(6, "Fig 8 entropy and HHI vs cost", ok,
           f"entropy rho={r_e.statistic:.3f} (p={r_e.pvalue:.1e}); HHI rho={r_h.statistic:.3f} (p={r_h.pvalue:.1e})")


def _one_diversified_four_specific(a):
    specific = [x for x in a if x != 6]
    return a.count(6) == 1 and len(set(specific)) == 4


def test_criterion_07_fig9_independent_assets(report):
    comp = _sweep("complete", 0.0).result(S4)
    empty = _sweep("empty", 0.0).result(S4)
    ok_c = (6,) * 5 in comp.ties and comp.canonical == (6,) * 5
    ok_e = _one_diversified_four_specific(empty.canonical) and _one_diversified_four_specific(empty.best_assignment)
    report(7, "Fig 9 optimum with independent assets", ok_c and ok_e,
           f"complete canonical {comp.canonical} ({len(comp.ties)} co-optimal); "
           f"edgeless canonical {empty.canonical}, best {empty.best_assignment}")


def test_criterion_08_fig10_negative_correlation(report):
    details, ok = [], True
    for letter in g.named_letters():
        res = _sweep(letter, 0.8).result(S4)
        used = set().union(*map(set, res.ties))
        no_345 = not (used & {3, 4, 5})
        both = all({1, 2} <= set(t) for t in res.ties)
        ok &= no_345 and both
        details.append(f"{letter}:{''.join(map(str, sorted(used)))}/{len(res.ties)}{'' if both else '!'}")
    report(8, "Fig 10 only assets 1, 2, 6 are used", ok, "assets used/co-optima " + " ".join(details))


def test_criterion_09_fig12_concavity(report):
    details, ok = [], True
    for letter in ("b", "e"):
        sweep = _sweep(letter, 0.8)
        counts = [sweep.result(CostSpec(s)).canonical.count(6) for s in (4, 8, 15)]
        good = counts[0] >= counts[1] >= counts[2] and counts[1] == 1 and counts[2] == 1
        ok &= good
        details.append(f"({letter}) banks on asset 6 at s=4,8,15: {counts}")
    report(9, "Fig 12 one diversified bank for large s", ok, "; ".join(details))


def test_criterion_10_s_star(report):
    p, q = 0.2, 0.03
    root = s_star_threshold(p, q)
    a1, b1 = cost_pair(p, q, 1.0)
    a2, b2 = cost_pair(p, q, root.s_star + 0.01)
    ok = root.residual < 1e-9 and b1 < a1 and b2 >= a2
    report(10, "threshold s*", ok,
           f"s* = {root.s_star:.6f}, residual {root.residual:.1e}; s=1: C_b {b1:.3f} < C_a {a1:.3f}; "
           f"s*+.01: C_b {b2:.1f} >= C_a {a2:.1f}")


def test_criterion_11_fig13_optimization_removes_topology_effect(report):
    rows = optimization_vs_topology(S4, 0.8, 0.2, OPT_DRAWS, SEED)
    dominated = []
    for r in rows:
        for name in ("full_diversity", "full_diversification"):
            se = math.hypot(r["se_optimal"], r[f"se_{name}"])
            if r["cost_optimal"] > r[f"cost_{name}"] + 2 * se:
                dominated.append((r["topology"], name))
    ent = [r["entropy_pagerank"] for r in rows]
    r_opt = stats.spearmanr(ent, [r["cost_optimal"] for r in rows])
    r_div = stats.spearmanr(ent, [r["cost_full_diversity"] for r in rows])
    ok = not dominated and r_opt.pvalue >= 0.05 and r_div.statistic < 0 and r_div.pvalue < 0.05
    report(11, "Fig 13 optimized cost loses its entropy dependence", ok,
           f"{len(rows)} topologies, optimum beaten on {len(dominated)}; "
           f"Spearman(entropy, optimal) = {r_opt.statistic:.3f} (p={r_opt.pvalue:.2f}); "
           f"Spearman(entropy, full diversity) = {r_div.statistic:.3f} (p={r_div.pvalue:.1e})")


def test_criterion_12_determinism(report, tmp_path):
    runs = [
        ["--experiment", "fig1", "--n-list", "5,10,20", "--families", "normal,t3"],
        ["--experiment", "dg", "--portfolios", "500", "--draws", "5000"],
        ["--experiment", "infection", "--topology", "b"],
        ["--experiment", "decompose", "--topology", "d"],
        ["--experiment", "optimize", "--topology", "b"],
        ["--experiment", "sweep-s", "--topology", "e"],
    ]
    mismatched = []
    n_files = 0
    for k, args in enumerate(runs):
        outs = []
        for rep in ("first", "second"):
            out = tmp_path / f"{k}-{rep}"
            assert cli_main(["run", "--seed", str(SEED), "--out", str(out), *args]) == 0
            outs.append({p.name: p.read_bytes() for p in out.glob("*.csv")})
        n_files += len(outs[0])
        if outs[0] != outs[1] or not outs[0]:
            mismatched.append(args[1])
    report(12, "byte-identical reruns", not mismatched,
           f"{n_files} CSV files compared across {len(runs)} experiments; mismatches: {mismatched or 'none'}")
