"""Social cost of defaults: closed forms and Monte Carlo estimates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import mpmath
import numpy as np
from scipy import stats

from . import assets as A
from .balance import TABLE1, BalanceArrays, BalanceRatios, build_balance_sheets, liability_weights
from .clearing import DEFAULT_TOL, MAX_ITER, MAX_MASK_BANKS, TOL, ClearingError, clear_batch, popcounts
from .graph import Topology, is_connected


@dataclass(frozen=True)
class CostSpec:
    s: float = 4.0

    def __post_init__(self):
        if not self.s >= 1:
            raise ValueError(f"cost exponent s must be >= 1, got {self.s}")


def cost(n, spec: CostSpec):
    """``n ** s``; works elementwise on arrays."""
    if np.ndim(n) == 0:
        if n < 0:
            raise ValueError("number of defaults must be nonnegative")
        return 0.0 if n == 0 else float(n) ** spec.s
    n = np.asarray(n, dtype=float)
    return np.where(n > 0, n, 0.0) ** spec.s


@dataclass(frozen=True)
class CostEstimate:
    value: float
    std_error: float


def expected_cost_diversity(n_banks: int, p: float, spec: CostSpec) -> float:
    """Binomial moment ``sum_n C(N, n) p^n (1-p)^(N-n) n^s`` in extended precision."""
    if n_banks < 1:
        raise ValueError("n_banks must be positive")
    with mpmath.workdps(40):
        pp = mpmath.mpf(p)
        total = mpmath.fsum(
            mpmath.binomial(n_banks, n) * pp**n * (1 - pp) ** (n_banks - n) * mpmath.mpf(n) ** spec.s
            for n in range(1, n_banks + 1)
        )
        return float(total)


def diversified_default_prob(n_banks: int, p: float, family: str = "normal", dof: float | None = None,
                             n_draws: int = 1_000_000, seed: int = 0) -> CostEstimate:
    """Probability that the equal-weighted average of ``N`` i.i.d. assets breaches the threshold.

    Exact for normal returns; Monte Carlo with standard error for Student-t.
    """
    q = A.quantile(family, p, dof)
    if family == "normal":
        return CostEstimate(float(stats.norm.cdf(math.sqrt(n_banks) * q)), 0.0)
    if family != "student_t":
        raise ValueError(f"unsupported family {family!r}")
    hits = 0
    done = 0
    for block, start in enumerate(range(0, n_draws, A.BLOCK_DRAWS)):
        n = min(A.BLOCK_DRAWS, n_draws - start)
        x = A.stream_rng(seed, block).standard_t(dof, size=(n, n_banks))
        hits += int(np.count_nonzero(x.mean(axis=1) < q))
        done += n
    prob = hits / done
    return CostEstimate(prob, math.sqrt(prob * (1 - prob) / done))


def expected_cost_diversification(n_banks: int, p: float, spec: CostSpec, family: str = "normal",
                                  dof: float | None = None, n_draws: int = 1_000_000,
                                  seed: int = 0) -> CostEstimate:
    """All banks hold the same diversified asset, so either all fail or none do."""
    prob = diversified_default_prob(n_banks, p, family, dof, n_draws, seed)
    scale = float(n_banks) ** spec.s
    return CostEstimate(prob.value * scale, prob.std_error * scale)


# -- Monte Carlo -------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Network, balance-sheet ratios, asset universe and portfolio of one experiment."""

    topology: Topology
    universe: A.AssetUniverse
    weights: np.ndarray
    ratios: BalanceRatios = TABLE1

    def __post_init__(self):
        w = A.check_weights(self.weights)
        if w.shape != (self.topology.n_banks, self.universe.k_assets):
            raise ValueError(f"weights must be {self.topology.n_banks}x{self.universe.k_assets}, got {w.shape}")
        if self.topology.n_edges > 0 and not is_connected(self.topology):
            raise ValueError("a topology with links must be connected")
        if self.topology.n_banks > MAX_MASK_BANKS:
            raise ValueError(f"at most {MAX_MASK_BANKS} banks are supported")
        self.ratios.check()
        object.__setattr__(self, "weights", w)

    @property
    def n_banks(self) -> int:
        return self.topology.n_banks

    @property
    def networked(self) -> bool:
        return self.topology.n_edges > 0

    @property
    def threshold(self) -> float:
        return self.ratios.loss_threshold

    def balance(self) -> BalanceArrays:
        return BalanceArrays.from_sheets(build_balance_sheets(self.topology, self.ratios))


@dataclass
class DrawRecords:
    """Per-draw outcomes as bitmasks over banks (bit ``i`` is bank ``i + 1``)."""

    fundamental: np.ndarray
    defaulted: np.ndarray
    shortcircuit: np.ndarray
    n_banks: int

    @property
    def n_defaults(self) -> np.ndarray:
        return popcounts(self.defaulted)

    @property
    def n_fundamental(self) -> np.ndarray:
        return popcounts(self.fundamental)

    def bits(self, masks: np.ndarray) -> np.ndarray:
        """Boolean ``draws x N`` view of a mask array."""
        return ((masks[:, np.newaxis] >> np.arange(self.n_banks)) & 1).astype(bool)


def outcomes_from_returns(sc: Scenario, returns: np.ndarray) -> DrawRecords:
    port = A.portfolio_returns(sc.weights, returns)
    n = sc.n_banks
    if not sc.networked:
        # No interbank market: a bank fails iff its portfolio return breaches the threshold.
        fail = port < sc.threshold
        masks = (fail.astype(np.int64) << np.arange(n)).sum(axis=1)
        return DrawRecords(masks, masks.copy(), np.zeros(len(masks), dtype=bool), n)
    bal = sc.balance()
    pi_t = np.ascontiguousarray(liability_weights(sc.topology).pi.T)
    cash = bal.a * (1.0 + port) + bal.b - bal.d
    fund, dflt, status = clear_batch(pi_t, bal.p_bar, np.ascontiguousarray(cash), TOL, DEFAULT_TOL, MAX_ITER)
    if np.any(status < 0):
        raise ClearingError(f"{int(np.sum(status < 0))} draws failed to clear")
    return DrawRecords(fund, dflt, status == 1, n)


def simulate_draws(sc: Scenario, n_draws: int, seed: int, stream: int = 0) -> DrawRecords:
    """Sample returns block by block and record each draw's defaults."""
    parts = [outcomes_from_returns(sc, r) for r in A.return_blocks(sc.universe, n_draws, seed, stream)]
    return DrawRecords(
        np.concatenate([p.fundamental for p in parts]),
        np.concatenate([p.defaulted for p in parts]),
        np.concatenate([p.shortcircuit for p in parts]),
        sc.n_banks,
    )


def histogram_cost(hist: np.ndarray, spec: CostSpec) -> CostEstimate:
    """Mean and standard error of ``n^s`` from counts of ``n = 0..N``."""
    hist = np.asarray(hist)
    draws = int(hist.sum())
    values = cost(np.arange(len(hist)), spec)
    mean = float(hist @ values) / draws
    if draws < 2:
        return CostEstimate(mean, math.nan)
    var = float(hist @ (values - mean) ** 2) / (draws - 1)
    return CostEstimate(mean, math.sqrt(var / draws))


@dataclass
class SimulationResult:
    expected_cost: float
    std_error: float
    default_histogram: np.ndarray
    fundamental_set_counts: dict[frozenset, tuple[int, float]]
    n_draws: int
    seed: int
    spec: CostSpec = field(default_factory=CostSpec)

    @property
    def default_distribution(self) -> np.ndarray:
        return self.default_histogram / self.n_draws


def summarize(records: DrawRecords, spec: CostSpec, seed: int) -> SimulationResult:
    n = records.n_defaults
    hist = np.bincount(n, minlength=records.n_banks + 1)
    est = histogram_cost(hist, spec)
    per_draw = cost(n, spec)
    sets: dict[frozenset, tuple[int, float]] = {}
    masks, inverse = np.unique(records.fundamental, return_inverse=True)
    counts = np.bincount(inverse, minlength=len(masks))
    costs = np.bincount(inverse, weights=per_draw, minlength=len(masks))
    for mask, c, total in zip(masks, counts, costs):
        key = frozenset(i + 1 for i in range(records.n_banks) if (int(mask) >> i) & 1)
        sets[key] = (int(c), float(total))
    return SimulationResult(est.value, est.std_error, hist, sets, len(n), seed, spec)


def monte_carlo_expected_cost(sc: Scenario, spec: CostSpec, n_draws: int, seed: int) -> SimulationResult:
    return summarize(simulate_draws(sc, n_draws, seed), spec, seed)


# -- simultaneity risk without a network ----------------------------------------------

MODES = ("full_diversity", "full_diversification")


def _mode_weights(mode: str, n: int) -> np.ndarray:
    if mode == "full_diversity":
        return A.full_diversity(n)
    if mode == "full_diversification":
        return A.full_diversification(n, n)
    if mode.startswith("m_diversified:"):
        return A.partially_diversified(n, int(mode.split(":", 1)[1]))
    raise ValueError(f"unknown mode {mode!r}")


def family_label(family: str, dof: float | None) -> str:
    if family == "student_t":
        return f"t{dof:g}"
    return family


def simultaneity_sweep(n_list, families, p: float, spec: CostSpec, modes, n_draws: int, seed: int,
                       scenario_id: str = "", ratios: BalanceRatios = TABLE1) -> list[dict]:
    """Expected cost of isolated banks for every ``(N, family, mode)``.

    ``families`` is a list of ``(family, dof)`` pairs; ``modes`` may contain
    ``full_diversity``, ``full_diversification`` or ``m_diversified:<m>``
    (``m`` clipped to ``N``). All modes at one ``(N, family)`` share the same
    return draws.
    """
    from .graph import empty_graph

    rows = []
    threshold = ratios.loss_threshold
    for family, dof in families:
        for n in n_list:
            u = A.independent_universe(n, p, threshold, family, dof)
            returns = A.sample_returns(u, n_draws, seed, stream=n)
            topo = empty_graph(n)
            for mode in modes:
                if mode.startswith("m_diversified:") and int(mode.split(":", 1)[1]) > n:
                    continue
                sc = Scenario(topo, u, _mode_weights(mode, n), ratios)
                res = summarize(outcomes_from_returns(sc, returns), spec, seed)
                m = {"full_diversity": 0, "full_diversification": n}.get(mode)
                if m is None:
                    m = int(mode.split(":", 1)[1])
                rows.append({
                    "scenario_id": scenario_id, "N": n, "s": spec.s, "p": p,
                    "family": family_label(family, dof),
                    "mode": mode.split(":", 1)[0], "m": m,
                    "expected_cost": res.expected_cost, "std_error": res.std_error,
                    "draws": n_draws, "seed": seed,
                })
    return rows


def binomial_moment(n_banks: int, p: float, s: float) -> float:
    """Direct ``E[X^s]`` for ``X ~ Binomial(N, p)`` (independent check of the diversity cost)."""
    pmf = stats.binom.pmf(np.arange(n_banks + 1), n_banks, p)
    return float(pmf @ (np.arange(n_banks + 1, dtype=float) ** s))


def subsets_in_order(n_banks: int) -> list[tuple[int, ...]]:
    """Nonempty subsets of ``1..N``: singletons, then pairs, then triples, each lexicographic."""
    return [c for k in range(1, n_banks + 1) for c in combinations(range(1, n_banks + 1), k)]
