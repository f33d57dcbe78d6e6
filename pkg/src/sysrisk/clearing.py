"""Interbank clearing: greatest fixed point of ``p = p_bar ^ (Pi' p + cash)``.

Payments are kept in ``[0, p_bar]``. The solver runs monotone Picard
iteration downward from ``p_bar``; at every step it also tries the exact
fixed point of the linear system implied by the current solvent / partial /
zero-payment classes and accepts it once it satisfies the fixed-point
equation. With a strongly connected network and positive aggregate cash the
fixed point is unique, so the shortcut only saves iterations.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .balance import LiabilityMatrix

TOL = 1e-10
DEFAULT_TOL = 1e-8
MAX_ITER = 10_000
MAX_MASK_BANKS = 62


class ClearingError(RuntimeError):
    """The fixed-point iteration failed to converge."""


@dataclass(frozen=True)
class ClearingProblem:
    pi: np.ndarray
    p_bar: np.ndarray
    cash: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi.pi if isinstance(self.pi, LiabilityMatrix) else self.pi, dtype=float)
        p_bar = np.asarray(self.p_bar, dtype=float)
        cash = np.asarray(self.cash, dtype=float)
        n = p_bar.shape[0]
        if pi.shape != (n, n) or cash.shape != (n,):
            raise ValueError(f"dimension mismatch: pi {pi.shape}, p_bar {p_bar.shape}, cash {cash.shape}")
        if np.any(p_bar < 0):
            raise ValueError("p_bar must be nonnegative")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "p_bar", p_bar)
        object.__setattr__(self, "cash", cash)

    @property
    def n_banks(self) -> int:
        return self.p_bar.shape[0]

    @property
    def full_repayment_cash(self) -> np.ndarray:
        """Funds available if every counterparty pays in full: ``cash + Pi' p_bar``."""
        return self.cash + self.pi.T @ self.p_bar

    def phi(self, p: np.ndarray) -> np.ndarray:
        return np.clip(self.pi.T @ p + self.cash, 0.0, self.p_bar)


@dataclass(frozen=True)
class ClearingOutcome:
    p_star: np.ndarray
    defaulted: np.ndarray
    fundamental: np.ndarray
    contagious: np.ndarray
    all_bankrupt_shortcircuit: bool
    iterations: int

    @property
    def n_defaults(self) -> int:
        return int(self.defaulted.sum())


# -- numba kernels -----------------------------------------------------------------

@njit(cache=True)
def _solve_classes(pi_t, p_bar, cash, cls, q, mat, rhs, idx):
    """Fixed point of the linear system for fixed payment classes.

    cls: 0 pays p_bar, 1 pays available funds, 2 pays nothing. Writes q and
    returns False when the partial-payment block is singular.
    """
    n = p_bar.shape[0]
    m = 0
    for i in range(n):
        if cls[i] == 1:
            idx[m] = i
            m += 1
        elif cls[i] == 0:
            q[i] = p_bar[i]
        else:
            q[i] = 0.0
    for r in range(m):
        i = idx[r]
        s = cash[i]
        for j in range(n):
            if cls[j] == 0:
                s += pi_t[i, j] * p_bar[j]
        rhs[r] = s
        for c in range(m):
            mat[r, c] = -pi_t[i, idx[c]]
        mat[r, r] += 1.0
    for col in range(m):
        piv = col
        best = abs(mat[col, col])
        for r in range(col + 1, m):
            if abs(mat[r, col]) > best:
                best = abs(mat[r, col])
                piv = r
        if best < 1e-13:
            return False
        if piv != col:
            for c in range(col, m):
                tmp = mat[col, c]
                mat[col, c] = mat[piv, c]
                mat[piv, c] = tmp
            tmp = rhs[col]
            rhs[col] = rhs[piv]
            rhs[piv] = tmp
        for r in range(col + 1, m):
            f = mat[r, col] / mat[col, col]
            if f != 0.0:
                for c in range(col, m):
                    mat[r, c] -= f * mat[col, c]
                rhs[r] -= f * rhs[col]
    for r in range(m - 1, -1, -1):
        s = rhs[r]
        for c in range(r + 1, m):
            s -= mat[r, c] * rhs[c]
        rhs[r] = s / mat[r, r]
        q[idx[r]] = rhs[r]
    return True


@njit(cache=True)
def _clip(x, hi):
    if x < 0.0:
        return 0.0
    if x > hi:
        return hi
    return x


@njit(cache=True)
def _clear_into(pi_t, p_bar, cash, tol, max_iter, allow_jump, p, v, cls, q, mat, rhs, idx):
    """Greatest clearing vector into ``p``. Returns iterations used, or -1."""
    n = p_bar.shape[0]
    for i in range(n):
        p[i] = p_bar[i]
    for it in range(1, max_iter + 1):
        delta = 0.0
        for i in range(n):
            s = cash[i]
            for j in range(n):
                s += pi_t[i, j] * p[j]
            v[i] = s
            if s >= p_bar[i]:
                cls[i] = 0
            elif s <= 0.0:
                cls[i] = 2
            else:
                cls[i] = 1
            d = abs(_clip(s, p_bar[i]) - p[i])
            if d > delta:
                delta = d
        if delta < tol:
            for i in range(n):
                p[i] = _clip(v[i], p_bar[i])
            return it
        if allow_jump and _solve_classes(pi_t, p_bar, cash, cls, q, mat, rhs, idx):
            resid = 0.0
            for i in range(n):
                q[i] = _clip(q[i], p_bar[i])
            for i in range(n):
                s = cash[i]
                for j in range(n):
                    s += pi_t[i, j] * q[j]
                d = abs(_clip(s, p_bar[i]) - q[i])
                if d > resid:
                    resid = d
            if resid <= tol:
                for i in range(n):
                    p[i] = q[i]
                return it
        for i in range(n):
            p[i] = _clip(v[i], p_bar[i])
    return -1


@njit(cache=True)
def _clear_masks(pi_t, p_bar, inflow_full, cash, tol, default_tol, max_iter,
                 p, v, cls, q, mat, rhs, idx):
    """Fundamental mask, default mask and status for one cash vector.

    status: 0 cleared, 1 aggregate cash <= 0 (everyone defaults), -1 no convergence.
    """
    n = p_bar.shape[0]
    fund = 0
    total = 0.0
    for i in range(n):
        total += cash[i]
        if cash[i] + inflow_full[i] < p_bar[i] - default_tol:
            fund |= 1 << i
    if fund == 0:
        return 0, 0, 0
    if total <= 0.0:
        return fund, (1 << n) - 1, 1
    it = _clear_into(pi_t, p_bar, cash, tol, max_iter, True, p, v, cls, q, mat, rhs, idx)
    if it < 0:
        return fund, 0, -1
    dflt = 0
    for i in range(n):
        if p[i] < p_bar[i] - default_tol:
            dflt |= 1 << i
    return fund, dflt, 0


@njit(cache=True)
def _popcount(x):
    c = 0
    while x:
        x &= x - 1
        c += 1
    return c


@njit(cache=True)
def clear_batch(pi_t, p_bar, cash, tol, default_tol, max_iter):
    """Clear every row of ``cash`` (draws x N); returns (fund_mask, default_mask, status)."""
    draws, n = cash.shape
    inflow_full = pi_t @ p_bar
    fund = np.zeros(draws, dtype=np.int64)
    dflt = np.zeros(draws, dtype=np.int64)
    status = np.zeros(draws, dtype=np.int8)
    p = np.empty(n)
    v = np.empty(n)
    q = np.empty(n)
    cls = np.empty(n, dtype=np.int8)
    mat = np.empty((n, n))
    rhs = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    for t in range(draws):
        f, d, s = _clear_masks(pi_t, p_bar, inflow_full, cash[t], tol, default_tol, max_iter,
                               p, v, cls, q, mat, rhs, idx)
        fund[t] = f
        dflt[t] = d
        status[t] = s
    return fund, dflt, status


@njit(cache=True, parallel=True)
def assignment_default_counts(pi_t, p_bar, base_cash, a, returns, assignments, tol, default_tol, max_iter):
    """Default count per (assignment, draw) when bank i holds only asset ``assignments[j, i]``.

    ``cash_i = base_cash_i + a_i * r[asset]``. Returns uint8 counts, with 255
    flagging a failed clearing.
    """
    n_assign, n = assignments.shape
    draws = returns.shape[0]
    inflow_full = pi_t @ p_bar
    out = np.zeros((n_assign, draws), dtype=np.uint8)
    for j in prange(n_assign):
        p = np.empty(n)
        v = np.empty(n)
        q = np.empty(n)
        cls = np.empty(n, dtype=np.int8)
        mat = np.empty((n, n))
        rhs = np.empty(n)
        idx = np.empty(n, dtype=np.int64)
        cash = np.empty(n)
        for t in range(draws):
            for i in range(n):
                cash[i] = base_cash[i] + a[i] * returns[t, assignments[j, i]]
            f, d, s = _clear_masks(pi_t, p_bar, inflow_full, cash, tol, default_tol, max_iter,
                                   p, v, cls, q, mat, rhs, idx)
            if s < 0:
                out[j, t] = 255
            else:
                out[j, t] = _popcount(d)
    return out


@njit(cache=True, parallel=True)
def assignment_threshold_counts(returns, assignments, threshold):
    """Isolated-bank default counts: bank i fails when its asset return is below ``threshold``."""
    n_assign, n = assignments.shape
    draws = returns.shape[0]
    out = np.zeros((n_assign, draws), dtype=np.uint8)
    for j in prange(n_assign):
        for t in range(draws):
            c = 0
            for i in range(n):
                if returns[t, assignments[j, i]] < threshold:
                    c += 1
            out[j, t] = c
    return out


@njit(cache=True)
def popcounts(masks):
    out = np.empty(masks.shape[0], dtype=np.int64)
    for k in range(masks.shape[0]):
        out[k] = _popcount(masks[k])
    return out


# -- public API ----------------------------------------------------------------------

def _workspace(n):
    return (np.empty(n), np.empty(n), np.empty(n, dtype=np.int8), np.empty(n),
            np.empty((n, n)), np.empty(n), np.empty(n, dtype=np.int64))


def classify_defaults(cp: ClearingProblem, defaulted: np.ndarray,
                      tol: float = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Split defaults into fundamental and contagious.

    A bank defaults fundamentally when it could not pay in full even if every
    counterparty repaid in full. Every other default is contagious.
    """
    fundamental = cp.full_repayment_cash < cp.p_bar - tol
    contagious = np.asarray(defaulted, dtype=bool) & ~fundamental
    return fundamental, contagious


def clearing_vector(cp: ClearingProblem, tol: float = TOL, max_iter: int = MAX_ITER,
                    default_tol: float = DEFAULT_TOL) -> ClearingOutcome:
    """Clearing payments and default classification for one problem.

    If aggregate cash is not positive every bank is declared bankrupt;
    ``p_star`` is then the plain Picard limit, reported for diagnostics only.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    n = cp.n_banks
    pi_t = np.ascontiguousarray(cp.pi.T)
    p, v, cls, q, mat, rhs, idx = _workspace(n)
    shortcircuit = bool(cp.cash.sum() <= 0.0)
    it = _clear_into(pi_t, cp.p_bar, cp.cash, tol, max_iter, not shortcircuit, p, v, cls, q, mat, rhs, idx)
    if it < 0 and not shortcircuit:
        raise ClearingError(f"clearing did not converge within {max_iter} iterations")
    p_star = p.copy()
    if shortcircuit:
        defaulted = np.ones(n, dtype=bool)
    else:
        defaulted = p_star < cp.p_bar - default_tol
    fundamental, contagious = classify_defaults(cp, defaulted, default_tol)
    return ClearingOutcome(p_star=p_star, defaulted=defaulted, fundamental=fundamental,
                           contagious=contagious, all_bankrupt_shortcircuit=shortcircuit,
                           iterations=int(it))


def clearing_vector_oracle(cp: ClearingProblem, eps: float = 1e-9) -> np.ndarray:
    """Brute-force clearing vector for small problems.

    Tries every split of banks into full payers, partial payers (paying all
    available funds) and zero payers, keeps the splits whose solution honours
    limited liability and debt priority, and returns the consistent payment
    vector with the largest total.
    """
    n = cp.n_banks
    if n > 12:
        raise ValueError("oracle is limited to 12 banks")
    pi_t = cp.pi.T
    scale = eps * max(1.0, float(np.abs(cp.p_bar).max()))
    best = None
    best_total = -np.inf
    # the partial-payer system depends only on which banks pay partially, so
    # factor it once per partial set and check every full/zero split of the rest together
    for part_t in itertools.product((False, True), repeat=n):
        part = np.array(part_t)
        rest = np.flatnonzero(~part)
        splits = np.array(list(itertools.product((True, False), repeat=rest.size)), dtype=bool)
        full = np.zeros((len(splits), n), dtype=bool)
        full[:, rest] = splits.reshape(len(splits), rest.size)
        zero = ~full & ~part
        p = np.where(full, cp.p_bar, 0.0)
        if part.any():
            try:
                inv = np.linalg.inv(np.eye(part.sum()) - pi_t[np.ix_(part, part)])
            except np.linalg.LinAlgError:
                continue
            rhs = cp.cash[part] + p @ pi_t[part].T
            p[:, part] = rhs @ inv.T
        avail = p @ pi_t.T + cp.cash
        pp = p[:, part]
        ok = (
            np.all((avail >= cp.p_bar - scale) | ~full, axis=1)
            & np.all((pp >= -scale) & (pp <= cp.p_bar[part] + scale), axis=1)
            & np.all((avail <= scale) | ~zero, axis=1)
        )
        if ok.any():
            totals = np.where(ok, p.sum(axis=1), -np.inf)
            k = int(np.argmax(totals))
            if totals[k] > best_total:
                best, best_total = p[k], totals[k]
    if best is None:
        raise ClearingError("no consistent payment vector found")
    return np.clip(best, 0.0, cp.p_bar)
