import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clearing_cases import random_problem
from sysrisk import graph as g
from sysrisk.balance import BalanceArrays, build_balance_sheets, liability_weights
from sysrisk.clearing import (ClearingProblem, classify_defaults, clear_batch, clearing_vector,
                              clearing_vector_oracle, popcounts)

SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


def _table1_problem(t, returns):
    bal = BalanceArrays.from_sheets(build_balance_sheets(t))
    cash = bal.a * (1 + np.asarray(returns)) + bal.b - bal.d
    return ClearingProblem(liability_weights(t).pi, bal.p_bar, cash)


def test_two_bank_partial_default():
    cp = ClearingProblem(SWAP, np.ones(2), np.array([-0.1, 0.25]))
    out = clearing_vector(cp)
    np.testing.assert_allclose(out.p_star, [0.9, 1.0], atol=1e-12)
    assert out.defaulted.tolist() == [True, False]
    assert out.fundamental.tolist() == [True, False]
    assert not out.contagious.any()
    assert not out.all_bankrupt_shortcircuit
    np.testing.assert_allclose(clearing_vector_oracle(cp), out.p_star, atol=1e-9)


def test_two_bank_shortcircuit():
    cp = ClearingProblem(SWAP, np.ones(2), np.array([-1.0, 0.25]))
    out = clearing_vector(cp)
    assert out.all_bankrupt_shortcircuit
    assert out.defaulted.all()
    assert out.fundamental.tolist() == [True, False]
    assert out.contagious.tolist() == [False, True]


def test_zero_aggregate_cash_uses_shortcircuit():
    out = clearing_vector(ClearingProblem(SWAP, np.ones(2), np.array([-0.25, 0.25])))
    assert out.all_bankrupt_shortcircuit and out.n_defaults == 2


@pytest.mark.parametrize("letter", ["a", "b", "d", "h"])
def test_zero_shock_no_defaults(letter):
    cp = _table1_problem(g.named_topologies()[letter], np.zeros(5))
    out = clearing_vector(cp)
    np.testing.assert_allclose(out.p_star, cp.p_bar)
    assert not out.defaulted.any() and not out.fundamental.any()


def test_nonnegative_cash_means_full_payment():
    rng = np.random.default_rng(3)
    for _ in range(50):
        cp = random_problem(rng, 4)
        cp = ClearingProblem(cp.pi, cp.p_bar, np.abs(cp.cash) + (cp.p_bar - cp.pi.T @ cp.p_bar).clip(0))
        np.testing.assert_allclose(clearing_vector_oracle(cp), cp.p_bar)
        np.testing.assert_allclose(clearing_vector(cp).p_star, cp.p_bar)


def test_star_hub_wipeout():
    star = g.named_topologies()["d"]
    cp = _table1_problem(star, [-1.0, 0, 0, 0, 0])
    out = clearing_vector(cp)
    assert out.fundamental.tolist() == [True, False, False, False, False]
    assert np.all(out.contagious[1:] == out.defaulted[1:])
    assert not out.contagious[0]


@pytest.mark.parametrize("n, trials", [(2, 200), (3, 200), (4, 200), (5, 300), (6, 60)])
def test_matches_oracle(n, trials):
    rng = np.random.default_rng(100 + n)
    worst = 0.0
    for _ in range(trials):
        cp = random_problem(rng, n)
        worst = max(worst, np.max(np.abs(clearing_vector(cp).p_star - clearing_vector_oracle(cp))))
    assert worst <= 1e-8


def test_invariants_on_random_problems():
    rng = np.random.default_rng(11)
    for _ in range(300):
        cp = random_problem(rng, 5)
        out = clearing_vector(cp)
        p = out.p_star
        assert np.all(p >= -1e-15) and np.all(p <= cp.p_bar + 1e-15)
        assert np.max(np.abs(cp.phi(p) - p)) <= 1e-10
        assert not np.any(out.contagious & ~out.defaulted)
        assert not np.any(out.contagious & out.fundamental)
        assert not np.any(out.fundamental & ~out.defaulted)
        # conservation: solvent banks keep nonnegative equity
        equity = cp.cash + cp.pi.T @ p - cp.p_bar
        assert np.all(equity[~out.defaulted] >= -1e-9)


def test_monotone_in_cash():
    rng = np.random.default_rng(12)
    for _ in range(200):
        cp = random_problem(rng, 5)
        bump = np.zeros(5)
        bump[rng.integers(5)] = rng.uniform(0, 0.5)
        hi = ClearingProblem(cp.pi, cp.p_bar, cp.cash + bump)
        assert np.all(clearing_vector(hi).p_star >= clearing_vector(cp).p_star - 1e-10)


def test_scale_invariance():
    rng = np.random.default_rng(13)
    for _ in range(100):
        cp = random_problem(rng, 5)
        lam = rng.uniform(0.1, 10)
        out = clearing_vector(cp)
        scaled = clearing_vector(ClearingProblem(cp.pi, lam * cp.p_bar, lam * cp.cash))
        np.testing.assert_allclose(scaled.p_star, lam * out.p_star, rtol=1e-9, atol=1e-9)
        assert np.array_equal(scaled.defaulted, out.defaulted)
        assert np.array_equal(scaled.fundamental, out.fundamental)


def test_classify_defaults_threshold():
    cp = ClearingProblem(SWAP, np.ones(2), np.array([-0.1, 0.25]))
    fund, cont = classify_defaults(cp, np.array([True, False]))
    assert fund.tolist() == [True, False] and cont.tolist() == [False, False]
    fund, cont = classify_defaults(cp, np.array([False, False]))
    assert fund.tolist() == [True, False]


def test_batch_kernel_agrees_with_scalar_solver():
    rng = np.random.default_rng(14)
    t = g.named_topologies()["c"]
    base = _table1_problem(t, np.zeros(5))
    bal = BalanceArrays.from_sheets(build_balance_sheets(t))
    returns = rng.normal(0, 0.25, size=(2000, 5))
    cash = bal.a * (1 + returns) + bal.b - bal.d
    fund, dflt, status = clear_batch(np.ascontiguousarray(base.pi.T), base.p_bar, cash, 1e-10, 1e-8, 10_000)
    assert np.all(status >= 0)
    for k in range(0, 2000, 7):
        out = clearing_vector(ClearingProblem(base.pi, base.p_bar, cash[k]))
        mask = int(sum(1 << i for i in range(5) if out.defaulted[i]))
        fmask = int(sum(1 << i for i in range(5) if out.fundamental[i]))
        assert dflt[k] == mask and fund[k] == fmask
        assert (status[k] == 1) == out.all_bankrupt_shortcircuit
    assert popcounts(np.array([0, 1, 3, 31], dtype=np.int64)).tolist() == [0, 1, 2, 5]


def test_problem_validation():
    with pytest.raises(ValueError):
        ClearingProblem(SWAP, np.ones(3), np.zeros(2))
    with pytest.raises(ValueError):
        ClearingProblem(SWAP, np.array([1.0, -1.0]), np.zeros(2))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5))
def test_oracle_property(seed, n):
    cp = random_problem(np.random.default_rng(seed), n)
    assert np.max(np.abs(clearing_vector(cp).p_star - clearing_vector_oracle(cp))) <= 1e-8
