"""External-asset universes, return sampling and portfolio metrics.

Returns are per-unit and mean zero; a bank's money loss is its external
holding ``a_i`` times its portfolio return.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

FAMILIES = ("normal", "student_t", "correlated_six")
BLOCK_DRAWS = 1 << 15


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class AssetUniverse:
    """A set of ``k_assets`` external assets.

    ``scale`` is the per-asset return scale: the standard deviation for
    normal families (and for assets 1-5 of ``correlated_six``), the t scale
    parameter for ``student_t``.
    """

    k_assets: int
    family: str = "normal"
    scale: float = 1.0
    dof: float | None = None
    rho: float = 0.0
    default_prob: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.k_assets < 1:
            raise ValueError("k_assets must be positive")
        if self.scale < 0:
            raise ValueError("scale must be nonnegative")
        if self.family == "student_t" and not (self.dof and self.dof > 0):
            raise ValueError("student_t needs positive degrees of freedom")
        if self.family == "correlated_six":
            if self.k_assets != 6:
                raise ValueError("correlated_six has exactly 6 assets")
            if not 0.0 <= self.rho <= 1.0:
                raise ValueError(f"rho must lie in [0, 1], got {self.rho}")

    @property
    def aux_scale(self) -> float:
        """Std. dev. of the auxiliary shocks of assets 2 and 4; infinite at rho = 1."""
        if self.rho >= 1.0:
            return math.inf
        return self.scale * math.sqrt((1 + self.rho) / (1 - self.rho))


def quantile(family: str, prob: float, dof: float | None = None) -> float:
    """Quantile of the unit-scale marginal distribution."""
    if family in ("normal", "correlated_six"):
        return float(stats.norm.ppf(prob))
    if family == "student_t":
        return float(stats.t.ppf(prob, dof))
    raise ValueError(f"unknown family {family!r}")


def cdf(family: str, x: float, dof: float | None = None) -> float:
    if family in ("normal", "correlated_six"):
        return float(stats.norm.cdf(x))
    if family == "student_t":
        return float(stats.t.cdf(x, dof))
    raise ValueError(f"unknown family {family!r}")


def calibrate_scale(family: str, p: float, loss_threshold: float, dof: float | None = None) -> float:
    """Return scale so that a single-asset return falls below ``loss_threshold`` with probability ``p``."""
    if not 0.0 < p < 1.0:
        raise CalibrationError(f"default probability must lie in (0, 1), got {p}")
    if not loss_threshold < 0:
        raise CalibrationError(f"loss threshold must be negative, got {loss_threshold}")
    q = quantile(family, p, dof)
    if not q < 0:
        raise CalibrationError(
            f"no finite scale gives P(return < {loss_threshold}) = {p}: the median return is 0"
        )
    return loss_threshold / q


def independent_universe(k: int, p: float, loss_threshold: float, family: str = "normal",
                         dof: float | None = None) -> AssetUniverse:
    scale = calibrate_scale(family, p, loss_threshold, dof)
    return AssetUniverse(k_assets=k, family=family, scale=scale, dof=dof, default_prob=p)


def build_correlated_six(rho: float, sigma: float, default_prob: float | None = None) -> AssetUniverse:
    """Assets ``{a1, -rho*a1 + (1-rho)*h2, a3, rho*a3 + (1-rho)*h4, a5, mean(a1..a5)}``.

    ``h2`` and ``h4`` have variance ``(1+rho)/(1-rho) * sigma**2`` so that assets
    1-5 all keep variance ``sigma**2``; at ``rho = 1`` the limit ``a2 = -a1``,
    ``a4 = a3`` is used.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return AssetUniverse(k_assets=6, family="correlated_six", scale=sigma, rho=rho, default_prob=default_prob)


def correlated_six_universe(rho: float, p: float, loss_threshold: float) -> AssetUniverse:
    return build_correlated_six(rho, calibrate_scale("normal", p, loss_threshold), default_prob=p)


def correlated_six_from_shocks(z: np.ndarray, rho: float, sigma: float) -> np.ndarray:
    """Map ``(..., 5)`` standard-normal shocks to the six asset returns."""
    z = np.asarray(z, dtype=float)
    out = np.empty(z.shape[:-1] + (6,))
    # (1 - rho) * aux_scale = sigma * sqrt(1 - rho^2), finite up to rho = 1
    mix = sigma * math.sqrt(max(0.0, 1.0 - rho * rho))
    out[..., 0] = sigma * z[..., 0]
    out[..., 1] = -rho * out[..., 0] + mix * z[..., 1]
    out[..., 2] = sigma * z[..., 2]
    out[..., 3] = rho * out[..., 2] + mix * z[..., 3]
    out[..., 4] = sigma * z[..., 4]
    out[..., 5] = out[..., :5].mean(axis=-1)
    return out


def stream_rng(seed: int, block: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for one fixed-size block of draws."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream, block))))


def _sample_block(u: AssetUniverse, rng: np.random.Generator, n: int) -> np.ndarray:
    if u.family == "normal":
        return u.scale * rng.standard_normal((n, u.k_assets))
    if u.family == "student_t":
        return u.scale * rng.standard_t(u.dof, size=(n, u.k_assets))
    return correlated_six_from_shocks(rng.standard_normal((n, 5)), u.rho, u.scale)


def sample_returns(u: AssetUniverse, n_draws: int, seed: int, stream: int = 0) -> np.ndarray:
    """``n_draws x K`` per-unit returns.

    Draws are generated in fixed blocks of ``BLOCK_DRAWS`` rows, each from its
    own seeded stream, so the result depends only on ``(u, n_draws, seed,
    stream)`` and any block can be produced by an independent worker.
    """
    return np.concatenate(list(return_blocks(u, n_draws, seed, stream)), axis=0)


def return_blocks(u: AssetUniverse, n_draws: int, seed: int, stream: int = 0):
    """Yield the blocks of :func:`sample_returns` one at a time."""
    if n_draws < 1:
        raise ValueError("n_draws must be at least 1")
    for block, start in enumerate(range(0, n_draws, BLOCK_DRAWS)):
        n = min(BLOCK_DRAWS, n_draws - start)
        yield _sample_block(u, stream_rng(seed, block, stream), n)


def dump_returns_csv(returns: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"asset_{k + 1}" for k in range(returns.shape[1])])
        for row in returns:
            writer.writerow([format(float(x), ".17g") for x in row])


# -- portfolios ------------------------------------------------------------------

def check_weights(weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2:
        raise ValueError("portfolio weights must be an N x K matrix")
    if np.any(w < -1e-15):
        raise ValueError("portfolio weights must be nonnegative")
    if not np.allclose(w.sum(axis=1), 1.0, rtol=0, atol=1e-12):
        raise ValueError("each portfolio row must sum to 1")
    return w


def full_diversity(n_banks: int, k_assets: int | None = None) -> np.ndarray:
    """Bank ``i`` holds only asset ``i`` (cycling when ``K < N``)."""
    k = n_banks if k_assets is None else k_assets
    w = np.zeros((n_banks, k))
    w[np.arange(n_banks), np.arange(n_banks) % k] = 1.0
    return w


def full_diversification(n_banks: int, k_assets: int) -> np.ndarray:
    return np.full((n_banks, k_assets), 1.0 / k_assets)


def partially_diversified(n_banks: int, m: int) -> np.ndarray:
    """First ``m`` banks hold the equal-weighted average of all ``N`` assets; the rest hold their own asset."""
    if not 0 <= m <= n_banks:
        raise ValueError(f"m must lie in [0, {n_banks}], got {m}")
    w = full_diversity(n_banks)
    w[:m] = 1.0 / n_banks
    return w


def assignment_weights(assignment, k_assets: int) -> np.ndarray:
    """One-hot rows from 1-indexed asset choices."""
    idx = np.asarray(assignment, dtype=np.int64) - 1
    if np.any(idx < 0) or np.any(idx >= k_assets):
        raise ValueError(f"asset indices must lie in 1..{k_assets}")
    w = np.zeros((len(idx), k_assets))
    w[np.arange(len(idx)), idx] = 1.0
    return w


def portfolio_returns(weights: np.ndarray, returns: np.ndarray) -> np.ndarray:
    """Per-bank portfolio return for one return row or a ``draws x K`` matrix."""
    return np.asarray(returns) @ np.asarray(weights).T


def portfolio_value(weights: np.ndarray, a_money: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Ex-post external asset value ``a_i * (1 + sum_k w_ik r_k)``."""
    weights = np.asarray(weights, dtype=float)
    a_money = np.asarray(a_money, dtype=float)
    r = np.asarray(r, dtype=float)
    if r.ndim != 1 or weights.shape != (a_money.shape[0], r.shape[0]):
        raise ValueError(
            f"dimension mismatch: weights {weights.shape}, a {a_money.shape}, returns {r.shape}"
        )
    return a_money * (1.0 + weights @ r)


def distance_D(weights: np.ndarray) -> float:
    """Mean L1 distance between bank portfolios, normalised to [0, 1]."""
    w = np.asarray(weights, dtype=float)
    n = w.shape[0]
    if n < 2:
        return 0.0
    total = np.abs(w[:, np.newaxis, :] - w[np.newaxis, :, :]).sum()
    return float(total / (2 * n * (n - 1)))


def distance_G(weights: np.ndarray) -> float:
    """Distance of the aggregate holdings from equal weights across assets."""
    w = np.asarray(weights, dtype=float)
    n, k = w.shape
    return float(np.abs((w - 1.0 / k).sum(axis=0)).sum() / n)
