import math

import numpy as np
import pytest

from stpn_hybrid.simkernel import CompiledNet, simulate
from stpn_hybrid.stpn import (
    MarkingPredicate, ModelError, Stpn, TransitionSpec, ZenoError, det, exp, imm, initial_state,
    run_transient, uniform,
)

TIMES = [0.25, 0.5, 0.75, 1.0]


def exact(t):
    return t ** 3 - 0.75 * t ** 4 if t < 1 else 0.25


def test_crude_estimate_matches_closed_form(four):
    net, target = four
    n = 200_000
    ind, L = simulate(CompiledNet(net, target), n, TIMES, "within", 3)
    assert np.all(L == 1.0)
    for j, t in enumerate(TIMES):
        p = exact(t)
        assert abs(ind[:, j].mean() - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_within_indicators_are_monotone(four):
    net, target = four
    ind, _ = simulate(CompiledNet(net, target), 5000, [0.1, 0.3, 0.6, 0.9, 2.0], "within", 1)
    assert np.all(np.diff(ind.astype(int), axis=1) >= 0)


def test_seed_determinism(four):
    net, target = four
    a = simulate(CompiledNet(net, target), 1000, TIMES, "within", 42)
    b = simulate(CompiledNet(net, target), 1000, TIMES, "within", 42)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def _exp_net():
    t = TransitionSpec("t", exp(1.0), pre=("A",), post=("Target",))
    return Stpn(("A", "Target"), [t], {"A": 1}), MarkingPredicate.parse("Target>=1")


def test_importance_sampling_exp_proposal():
    net, target = _exp_net()
    n = 100_000
    cn = CompiledNet(net, target, {"t": [(1.0, exp(5.0))]})
    ind, L = simulate(cn, n, [1.0], "within", 9)
    est = (ind[:, 0] * L).mean()
    assert est == pytest.approx(1 - math.exp(-1), abs=0.01)


def test_identity_proposal_gives_unit_likelihood():
    net, target = _exp_net()
    _, L = simulate(CompiledNet(net, target, {"t": [(1.0, exp(1.0))]}), 100, [1.0], "within", 0)
    assert np.allclose(L, 1.0)


def test_mixture_proposal_is_unbiased(dft_net):
    # the rare second UPS failure is reached more often but reweighted
    net, target = dft_net
    pred = MarkingPredicate.parse("UpsFailed>=1")
    prop = {"ups": [(0.5, uniform(9.95, 10)), (0.5, uniform(10, 12))]}
    n = 100_000
    ind, L = simulate(CompiledNet(net, pred, prop), n, [10.0], "within", 4)
    y = ind[:, 0] * L
    p = 0.05 / 2.05
    assert abs(y.mean() - p) < 4 * y.std() / math.sqrt(n)


def test_proposal_must_cover_support():
    net, target = _exp_net()
    with pytest.raises(ModelError):
        CompiledNet(net, target, {"t": [(1.0, uniform(0, 2))]})


def test_zeno_detection():
    t = TransitionSpec("loop", imm(), pre=("A",), post=("A",))
    net = Stpn(("A", "Target"), [t], {"A": 1})
    with pytest.raises(ZenoError):
        simulate(CompiledNet(net, MarkingPredicate.parse("Target>=1")), 2, [1.0], "within", 0, zeno_cap=1000)


def test_matches_reference_simulator_in_at_mode():
    # a target that is entered and left again
    ts = [TransitionSpec("go", uniform(0, 1), pre=("A",), post=("Target",)),
          TransitionSpec("back", uniform(0, 1), pre=("Target",), post=("B",)),
          TransitionSpec("tick", det(0.4), pre=("C",), post=("C",))]
    net = Stpn(("A", "B", "C", "Target"), ts, {"A": 1, "C": 1})
    target = MarkingPredicate.parse("Target>=1")
    n = 100_000
    ind, _ = simulate(CompiledNet(net, target), n, [0.5, 1.0, 1.5], "at", 8)
    rng = np.random.default_rng(2)
    m = 4000
    ref = np.array([[run_transient(net, initial_state(net, rng), t, target, "at", rng)
                     for t in (0.5, 1.0, 1.5)] for _ in range(m)])
    # P(go <= t < go + back) for U(0,1) pairs
    truth = {0.5: 0.375, 1.0: 0.5, 1.5: 0.125}
    for j, t in enumerate((0.5, 1.0, 1.5)):
        p = truth[t]
        assert abs(ind[:, j].mean() - p) < 4 * math.sqrt(p * (1 - p) / n)
        assert abs(ref[:, j].mean() - p) < 4 * math.sqrt(p * (1 - p) / m)


def test_forced_first_firing_and_skip_initial(four):
    net, target = four
    cn = CompiledNet(net, target)
    T = len(net.transitions)
    due = np.full((3, T), np.nan)
    # act2, act3, act4 fire at 0.2, 0.3, 0.3; act1 at 0.9
    for r in range(3):
        due[r, net.transition_index("act1")] = 0.9
        due[r, net.transition_index("act2")] = 0.2
        due[r, net.transition_index("act3")] = 0.3
        due[r, net.transition_index("act4")] = 0.3
    ind, _ = simulate(cn, 3, [0.1, 0.25, 0.35], "within", 0, due0=due)
    assert ind.tolist() == [[0, 0, 1]] * 3
    # forcing act1 first makes the target unreachable
    ind, _ = simulate(cn, 3, [0.1, 0.25, 0.35, 2.0], "within", 0, due0=due, forced=net.transition_index("act1"))
    assert ind.sum() == 0
