"""Bank balance sheets and interbank liability weights.

Every connected bank shares the same balance-sheet composition; only its
size differs, scaled by its number of unit interbank loans. Isolated banks
(no links) are normalised to one money unit of external assets.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Topology


class InconsistentRatiosError(ValueError):
    pass


@dataclass(frozen=True)
class BalanceRatios:
    capital_to_assets: float = 0.1       # w / (a + b + l)
    external_to_capital: float = 5.0     # a / w
    ib_asset_to_capital: float = 4.0     # l / w
    ib_liability_to_capital: float = 4.0  # p_bar / w
    unit_loan: float = 1.0

    @property
    def riskless_to_capital(self) -> float:
        return 1.0 / self.capital_to_assets - self.external_to_capital - self.ib_asset_to_capital

    @property
    def deposits_to_capital(self) -> float:
        return 1.0 / self.capital_to_assets - self.ib_liability_to_capital - 1.0

    @property
    def loss_threshold(self) -> float:
        """Per-unit external return below which a bank fails on its own (``-w/a``)."""
        return -1.0 / self.external_to_capital

    def problems(self) -> list[str]:
        out = []
        for name in ("capital_to_assets", "external_to_capital", "ib_asset_to_capital",
                     "ib_liability_to_capital", "unit_loan"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be strictly positive, got {getattr(self, name)}")
        if not self.capital_to_assets < 1:
            out.append(f"capital_to_assets must be below 1, got {self.capital_to_assets}")
        if out:
            return out
        if self.riskless_to_capital < -1e-12:
            out.append(f"implied riskless asset b/w = {self.riskless_to_capital:.6g} is negative")
        if self.deposits_to_capital < -1e-12:
            out.append(f"implied deposits d/w = {self.deposits_to_capital:.6g} is negative")
        # Unit loans in both directions on every edge: a bank's interbank
        # assets and liabilities are both degree * unit_loan.
        if abs(self.ib_asset_to_capital - self.ib_liability_to_capital) > 1e-12:
            out.append("ib_asset_to_capital must equal ib_liability_to_capital with two-way unit loans")
        return out

    def check(self) -> None:
        problems = self.problems()
        if problems:
            raise InconsistentRatiosError("; ".join(problems))


TABLE1 = BalanceRatios()


@dataclass(frozen=True)
class BankBalanceSheet:
    a: float
    b: float
    l: float
    p_bar: float
    d: float
    w: float

    @property
    def total_assets(self) -> float:
        return self.a + self.b + self.l


@dataclass(frozen=True)
class BalanceArrays:
    """Column view of a list of balance sheets, one entry per bank."""

    a: np.ndarray
    b: np.ndarray
    l: np.ndarray
    p_bar: np.ndarray
    d: np.ndarray
    w: np.ndarray

    @classmethod
    def from_sheets(cls, sheets: list[BankBalanceSheet]) -> "BalanceArrays":
        return cls(*(np.array([getattr(s, f) for s in sheets], dtype=float)
                     for f in ("a", "b", "l", "p_bar", "d", "w")))


@dataclass(frozen=True)
class LiabilityMatrix:
    pi: np.ndarray


def build_balance_sheets(t: Topology, r: BalanceRatios = TABLE1) -> list[BankBalanceSheet]:
    r.check()
    sheets = []
    for k in t.degree:
        if k > 0:
            l = float(k) * r.unit_loan
            w = l / r.ib_asset_to_capital
            a = r.external_to_capital * w
            p_bar = r.ib_liability_to_capital * w
        else:
            l = p_bar = 0.0
            a = 1.0
            w = a / r.external_to_capital
        b = r.riskless_to_capital * w
        d = a + b + l - p_bar - w
        sheets.append(BankBalanceSheet(a=a, b=b, l=l, p_bar=p_bar, d=d, w=w))
    return sheets


def liability_weights(t: Topology) -> LiabilityMatrix:
    """Equal borrowing weights ``1/k_i`` across each bank's counterparties."""
    deg = t.degree.astype(float)
    pi = np.zeros((t.n_banks, t.n_banks))
    linked = deg > 0
    pi[linked] = t.adjacency[linked] / deg[linked, np.newaxis]
    return LiabilityMatrix(pi)


def interbank_assets(pi: LiabilityMatrix, p_bar: np.ndarray) -> np.ndarray:
    """``l = Pi' p_bar``."""
    return pi.pi.T @ p_bar
