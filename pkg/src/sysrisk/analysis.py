"""Contagion diagnostics, cost decomposition and allocation search."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import optimize

from . import assets as A
from .balance import TABLE1, BalanceArrays, BalanceRatios, build_balance_sheets, liability_weights
from .clearing import (DEFAULT_TOL, MAX_ITER, TOL, ClearingError, assignment_default_counts,
                       assignment_threshold_counts, clear_batch, popcounts)
from .graph import Topology, enumerate_connected_topologies, fragility, is_connected, pagerank
from .risk import CostSpec, Scenario, cost, outcomes_from_returns, simulate_draws, subsets_in_order

TIE_SE = 2.0


# -- single-default diagnostics ----------------------------------------------------

@dataclass
class ContagionMatrix:
    rates: np.ndarray
    event_counts: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return self.event_counts > 0


@dataclass
class InfectionScores:
    infectivity: np.ndarray
    susceptibility: np.ndarray
    single_events: np.ndarray
    fundamental_defaults: np.ndarray
    contagious_defaults: np.ndarray


def _single_events(records):
    fund = records.fundamental
    single = popcounts(fund) == 1
    # bank index of the lone fundamental default, -1 elsewhere
    who = np.full(len(fund), -1, dtype=np.int64)
    who[single] = np.log2(fund[single]).round().astype(np.int64)
    return who


def contagion_matrix(sc: Scenario, n_draws: int, seed: int) -> ContagionMatrix:
    """Defaults of bank j per 1000 draws in which bank i alone failed fundamentally.

    Rows of banks that never fail alone are NaN.
    """
    records = simulate_draws(sc, n_draws, seed)
    who = _single_events(records)
    n = sc.n_banks
    dflt = records.bits(records.defaulted)
    events = np.bincount(who[who >= 0], minlength=n)
    rates = np.full((n, n), np.nan)
    for i in range(n):
        if events[i]:
            rates[i] = 1000.0 * dflt[who == i].sum(axis=0) / events[i]
    return ContagionMatrix(rates, events)


def infection_scores(sc: Scenario, n_draws: int, seed: int) -> InfectionScores:
    """Infectivity: mean contagious defaults after a lone fundamental default of bank i.

    Susceptibility: contagious defaults of bank i divided by its fundamental
    defaults, counted over all draws. Undefined entries are NaN.
    """
    records = simulate_draws(sc, n_draws, seed)
    n = sc.n_banks
    who = _single_events(records)
    n_def = records.n_defaults
    fund_bits = records.bits(records.fundamental)
    dflt_bits = records.bits(records.defaulted)
    contagious = (dflt_bits & ~fund_bits).sum(axis=0)
    fundamental = fund_bits.sum(axis=0)
    events = np.bincount(who[who >= 0], minlength=n)
    spread = np.bincount(who[who >= 0], weights=n_def[who >= 0] - 1, minlength=n)
    with np.errstate(invalid="ignore", divide="ignore"):
        infectivity = np.where(events > 0, spread / np.maximum(events, 1), np.nan)
        susceptibility = np.where(fundamental > 0, contagious / np.maximum(fundamental, 1), np.nan)
    return InfectionScores(infectivity, susceptibility, events, fundamental, contagious)


@dataclass
class DecompositionTable:
    subsets: list[tuple[int, ...]]
    shares: np.ndarray
    costs: np.ndarray
    counts: np.ndarray
    total_cost: float
    zero_set_cost: float


def decompose_collective_defaults(sc: Scenario, spec: CostSpec, n_draws: int, seed: int) -> DecompositionTable:
    """Share of total cost carried by draws with each fundamental-default set."""
    n = sc.n_banks
    if n > 10:
        raise ValueError("decomposition is limited to 10 banks")
    records = simulate_draws(sc, n_draws, seed)
    per_draw = cost(records.n_defaults, spec)
    size = 1 << n
    costs = np.bincount(records.fundamental, weights=per_draw, minlength=size)
    counts = np.bincount(records.fundamental, minlength=size)
    subsets = subsets_in_order(n)
    masks = [sum(1 << (i - 1) for i in s) for s in subsets]
    total = float(per_draw.sum())
    sub_costs = costs[masks]
    shares = sub_costs / total if total > 0 else np.zeros(len(masks))
    return DecompositionTable(subsets, shares, sub_costs, counts[masks], total, float(costs[0]))


def exact_isolated_shares(n_banks: int, probs, spec: CostSpec) -> np.ndarray:
    """Cost shares of each default set for independent banks with failure probabilities ``probs``."""
    probs = np.asarray(probs, dtype=float)
    subsets = subsets_in_order(n_banks)
    vals = []
    for s in subsets:
        inside = np.zeros(n_banks, dtype=bool)
        inside[np.array(s) - 1] = True
        prob = np.prod(np.where(inside, probs, 1 - probs))
        vals.append(prob * len(s) ** spec.s)
    vals = np.array(vals)
    return vals / vals.sum()


# -- comparing candidates on common draws ----------------------------------------------

@njit(cache=True)
def _row_histograms(counts, nb):
    out = np.zeros((counts.shape[0], nb), dtype=np.int64)
    for j in range(counts.shape[0]):
        for t in range(counts.shape[1]):
            out[j, counts[j, t]] += 1
    return out


@njit(cache=True)
def _joint_histograms(counts, ref, nb):
    out = np.zeros((counts.shape[0], nb, nb), dtype=np.int64)
    for j in range(counts.shape[0]):
        for t in range(counts.shape[1]):
            out[j, counts[j, t], ref[t]] += 1
    return out


class CandidateCosts:
    """Default counts of many candidate portfolios evaluated on one shared return sample.

    Costs and standard errors for any exponent ``s`` are computed exactly from
    integer histograms, so results do not depend on summation order.
    """

    def __init__(self, counts: np.ndarray, n_banks: int):
        if counts.max(initial=0) > n_banks:
            raise ClearingError("some draws failed to clear")
        self.counts = counts
        self.n_banks = n_banks
        self.n_draws = counts.shape[1]
        self.hist = _row_histograms(counts, n_banks + 1)

    def costs(self, spec: CostSpec) -> tuple[np.ndarray, np.ndarray]:
        values = cost(np.arange(self.n_banks + 1), spec)
        d = self.n_draws
        mean = self.hist @ values / d
        dev = (values[np.newaxis, :] - mean[:, np.newaxis]) ** 2
        var = (self.hist * dev).sum(axis=1) / max(d - 1, 1)
        return mean, np.sqrt(var / d)

    def paired(self, ref: int, spec: CostSpec) -> tuple[np.ndarray, np.ndarray]:
        """Mean and standard error of ``cost_j - cost_ref`` per draw."""
        values = cost(np.arange(self.n_banks + 1), spec)
        joint = _joint_histograms(self.counts, self.counts[ref], self.n_banks + 1)
        diff = values[:, np.newaxis] - values[np.newaxis, :]
        d = self.n_draws
        mean = (joint * diff).sum(axis=(1, 2)) / d
        dev = (diff[np.newaxis] - mean[:, np.newaxis, np.newaxis]) ** 2
        var = (joint * dev).sum(axis=(1, 2)) / max(d - 1, 1)
        return mean, np.sqrt(var / d)

    def ties(self, spec: CostSpec, tie_se: float = TIE_SE):
        """Index of the minimum and mask of candidates within ``tie_se`` paired SEs of it."""
        mean, _ = self.costs(spec)
        best = int(np.argmin(mean))
        diff, diff_se = self.paired(best, spec)
        return best, diff <= tie_se * diff_se, diff, diff_se


# -- discrete allocation search -----------------------------------------------------

@dataclass
class AllocationResult:
    best_assignment: tuple[int, ...]
    best_cost: float
    best_std_error: float
    assignments: np.ndarray
    costs: np.ndarray
    std_errors: np.ndarray
    diff_from_best: np.ndarray
    diff_std_errors: np.ndarray
    tie_mask: np.ndarray
    spec: CostSpec

    @property
    def ties(self) -> list[tuple[int, ...]]:
        return [tuple(int(x) for x in row) for row in self.assignments[self.tie_mask]]

    @property
    def canonical(self) -> tuple[int, ...]:
        """Lexicographically smallest co-optimal assignment."""
        return self.ties[0]

    def cost_of(self, assignment) -> tuple[float, float]:
        idx = int(np.flatnonzero((self.assignments == np.asarray(assignment)).all(axis=1))[0])
        return float(self.costs[idx]), float(self.std_errors[idx])


def all_assignments(n_banks: int, k_assets: int = 6) -> np.ndarray:
    """Every 1-indexed assignment in lexicographic order."""
    return np.array(list(itertools.product(range(1, k_assets + 1), repeat=n_banks)), dtype=np.int64)


def assignment_index(assignment, k_assets: int = 6) -> int:
    idx = 0
    for a in assignment:
        idx = idx * k_assets + (int(a) - 1)
    return idx


class AllocationSweep:
    """Default counts of every one-asset-per-bank assignment on common return draws."""

    def __init__(self, topology: Topology, universe: A.AssetUniverse, n_draws: int, seed: int,
                 ratios: BalanceRatios = TABLE1, assignments: np.ndarray | None = None,
                 returns: np.ndarray | None = None):
        n = topology.n_banks
        if assignments is None:
            if n > 6:
                raise ValueError("exhaustive allocation search is limited to 6 banks")
            assignments = all_assignments(n, universe.k_assets)
        if topology.n_edges > 0 and not is_connected(topology):
            raise ValueError("a topology with links must be connected")
        ratios.check()
        self.topology = topology
        self.universe = universe
        self.assignments = np.asarray(assignments, dtype=np.int64)
        self.returns = A.sample_returns(universe, n_draws, seed) if returns is None else returns
        zero_based = self.assignments - 1
        if topology.n_edges == 0:
            counts = assignment_threshold_counts(self.returns, zero_based, ratios.loss_threshold)
        else:
            bal = BalanceArrays.from_sheets(build_balance_sheets(topology, ratios))
            pi_t = np.ascontiguousarray(liability_weights(topology).pi.T)
            counts = assignment_default_counts(pi_t, bal.p_bar, bal.a + bal.b - bal.d, bal.a,
                                               self.returns, zero_based, TOL, DEFAULT_TOL, MAX_ITER)
        self.table = CandidateCosts(counts, n)

    def result(self, spec: CostSpec, tie_se: float = TIE_SE) -> AllocationResult:
        mean, se = self.table.costs(spec)
        best, tie, diff, diff_se = self.table.ties(spec, tie_se)
        return AllocationResult(
            best_assignment=tuple(int(x) for x in self.assignments[best]),
            best_cost=float(mean[best]), best_std_error=float(se[best]),
            assignments=self.assignments, costs=mean, std_errors=se,
            diff_from_best=diff, diff_std_errors=diff_se, tie_mask=tie, spec=spec,
        )


def optimize_allocation_discrete(topology: Topology, universe: A.AssetUniverse, spec: CostSpec,
                                 n_draws: int, seed: int, ratios: BalanceRatios = TABLE1) -> AllocationResult:
    """Exhaustive search over one-asset-per-bank assignments (``K^N`` of them).

    Every assignment is scored on the same return draws. Assignments whose
    cost exceeds the minimum by at most two standard errors of the paired
    difference are reported as co-optimal.
    """
    if universe.k_assets != 6:
        raise ValueError("the allocation search expects the six-asset universe")
    return AllocationSweep(topology, universe, n_draws, seed, ratios).result(spec)


# -- random portfolio scan ------------------------------------------------------------

@dataclass
class Landscape:
    weights: np.ndarray
    D: np.ndarray
    G: np.ndarray
    costs: np.ndarray
    std_errors: np.ndarray
    best: int
    diff_from_best: np.ndarray
    diff_std_errors: np.ndarray

    DIVERSIFIED = 0
    DIVERSE = 1


def dg_landscape(topology: Topology, universe: A.AssetUniverse, spec: CostSpec, n_portfolios: int,
                 n_draws: int, seed: int, ratios: BalanceRatios = TABLE1) -> Landscape:
    """Expected cost of random weight matrices, located by their ``(D, G)`` distances.

    Pattern 0 is full diversification and pattern 1 full diversity; the rest
    draw each bank's row uniformly from the simplex. All patterns share one
    return sample.
    """
    n, k = topology.n_banks, universe.k_assets
    if n_portfolios < 2:
        raise ValueError("need at least the two reference patterns")
    rng = A.stream_rng(seed, 0, stream=1)
    random_w = rng.dirichlet(np.ones(k), size=(n_portfolios - 2, n))
    weights = np.concatenate([A.full_diversification(n, k)[np.newaxis], A.full_diversity(n, k)[np.newaxis],
                              random_w])
    returns = A.sample_returns(universe, n_draws, seed)
    counts = np.empty((n_portfolios, n_draws), dtype=np.uint8)
    for j, w in enumerate(weights):
        sc = Scenario(topology, universe, w, ratios)
        counts[j] = outcomes_from_returns(sc, returns).n_defaults
    table = CandidateCosts(counts, n)
    mean, se = table.costs(spec)
    best, _, diff, diff_se = table.ties(spec)
    return Landscape(weights, np.array([A.distance_D(w) for w in weights]),
                     np.array([A.distance_G(w) for w in weights]), mean, se, best, diff, diff_se)


# -- counteractive portfolios ------------------------------------------------------------

def cost_pair(p: float, q: float, s: float) -> tuple[float, float]:
    """Costs of the three-bank allocations ``(a1, a2, a2)`` and ``(a1, a6, a6)``."""
    c_a = p + p * 2.0**s
    c_b = p * (1 - q) + q * (1 - p) * 2.0**s + p * q * 3.0**s
    return c_a, c_b


def _s_star_gap(s: float, p: float, q: float) -> float:
    # 3^s - 1 - (1 + (p-q)/(pq)) 2^s, scaled by 2^-s to keep it O(1)
    return 1.5**s - 2.0**-s - (1.0 + (p - q) / (p * q))


@dataclass(frozen=True)
class SStar:
    s_star: float
    residual: float


def s_star_threshold(p: float, q: float, tol: float = 1e-12) -> SStar:
    """Cost exponent above which spreading risk over negatively correlated assets wins.

    Root of ``3^s = 1 + (1 + (p-q)/(pq)) 2^s`` by bisection; ``residual`` is the
    equation's gap at the root relative to ``3^s``.
    """
    if not 0 < q < p < 1:
        raise ValueError(f"need 0 < q < p < 1, got p={p}, q={q}")
    lo, hi = 1.0, 2.0
    while _s_star_gap(hi, p, q) <= 0:
        lo, hi = hi, 2 * hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _s_star_gap(mid, p, q) > 0:
            hi = mid
        else:
            lo = mid
    s = 0.5 * (lo + hi)
    residual = abs(3.0**s - 1.0 - (1.0 + (p - q) / (p * q)) * 2.0**s) / 3.0**s
    return SStar(s, residual)


def s_star_brentq(p: float, q: float) -> float:
    """Same root via Brent's method, for cross-checking."""
    return optimize.brentq(_s_star_gap, 1.0, 200.0, args=(p, q), xtol=1e-14)


# -- network structure versus allocation ---------------------------------------------------

def optimization_vs_topology(spec: CostSpec, rho: float, p: float, n_draws: int, seed: int,
                             topologies: list[Topology] | None = None,
                             ratios: BalanceRatios = TABLE1) -> list[dict]:
    """Per connected five-bank topology: entropy, HHI and three expected costs.

    Full diversity (bank i holds independent asset i) and full diversification
    (everyone holds the average asset) use independent assets; the optimum
    searches the ``rho``-correlated six-asset universe. All three share the
    same underlying shocks.
    """
    if topologies is None:
        topologies = enumerate_connected_topologies(5)
    threshold = ratios.loss_threshold
    u_corr = A.correlated_six_universe(rho, p, threshold)
    u_ind = A.correlated_six_universe(0.0, p, threshold)
    rows = []
    for idx, t in enumerate(topologies):
        n = t.n_banks
        diverse = tuple(range(1, n + 1))
        sweep_ind = AllocationSweep(t, u_ind, n_draws, seed, ratios,
                                    assignments=np.array([diverse, (6,) * n]))
        ind = sweep_ind.result(spec)
        res = AllocationSweep(t, u_corr, n_draws, seed, ratios).result(spec)
        deg = fragility(t, "degree")
        pr = fragility(t, "pagerank")
        rows.append({
            "topology": idx, "edges": t.edges, "n_edges": t.n_edges,
            "entropy_degree": deg.entropy, "hhi_degree": deg.hhi,
            "entropy_pagerank": pr.entropy, "hhi_pagerank": pr.hhi,
            "cost_full_diversity": float(ind.costs[0]), "se_full_diversity": float(ind.std_errors[0]),
            "cost_full_diversification": float(ind.costs[1]),
            "se_full_diversification": float(ind.std_errors[1]),
            "cost_optimal": res.best_cost, "se_optimal": res.best_std_error,
            "optimal_assignment": res.canonical,
        })
    return rows
