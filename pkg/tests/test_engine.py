import math

import numpy as np
import pytest

from stpn_hybrid.engine import (
    SourceEstimate, combine_estimates, ground_truth, run_hybrid, run_is_baseline, run_mc, source_variance,
    wilson_interval, z_value,
)
from stpn_hybrid.scgraph import build_graph
from stpn_hybrid.ssc import expand_tree
from stpn_hybrid.stpn import DistributionSpec

TIMES = [0.25, 0.5, 0.75, 1.0]


def truth(t):
    return t ** 3 - 0.75 * t ** 4 if t <= 1 else 0.25


@pytest.fixture(scope="module")
def graph(four):
    return build_graph(*four)


def test_combine_example():
    srcs = [SourceEstimate("a", "h1", 0.25, 100, np.array([0.5]), np.array([0.25])),
            SourceEstimate("b", "h2", 0.25, 100, np.array([0.1]), np.array([0.09]))]
    (e,) = combine_estimates(srcs, [0.05])
    assert e.mean == pytest.approx(0.2, abs=1e-15)
    assert e.sigma ** 2 == pytest.approx(2.125e-4, rel=1e-12)
    assert e.sigma == pytest.approx(0.014577, abs=1e-6)
    assert e.ci_low < e.mean < e.ci_high and e.runs == 200


def test_combine_det_only_has_zero_width():
    (e,) = combine_estimates([], [[0.3], [0.2]])
    assert e.mean == pytest.approx(0.5) and e.sigma == 0 and e.ci_low == e.ci_high == e.mean


def test_clamping_only_at_output():
    srcs = [SourceEstimate("a", "h", 1.0, 2, np.array([0.02]), np.array([0.25]))]
    (e,) = combine_estimates(srcs, [0.0])
    assert e.ci_low_raw < 0 and e.ci_low == 0.0
    assert e.to_json()["ci_low_raw"] < 0


def test_source_variance_examples():
    m, v = source_variance(np.r_[np.ones(50), np.zeros(50)])
    assert (m, v) == (0.5, 0.25)
    m, v = source_variance(np.ones(100))
    assert (m, v) == (1.0, 0.0)
    m, v = source_variance(np.array([1.0, 1.0, 0.0]), np.array([0.5, 1.5, 7.0]), "is")
    assert m == pytest.approx(2 / 3) and v == pytest.approx(0.58333, abs=1e-5)
    with pytest.raises(ValueError):
        source_variance(np.ones(1))


def test_interval_examples():
    assert 1.96 * math.sqrt(0.1875 / 1e4) == pytest.approx(0.008487, abs=1e-6)
    assert z_value(0.95) == pytest.approx(1.959964, abs=1e-6)
    lo, hi = wilson_interval(0, 10)
    assert lo == 0 and hi == pytest.approx(0.27753, abs=1e-5)
    lo, hi = wilson_interval(50, 100)
    assert lo == pytest.approx(0.40384, abs=1e-5) and hi == pytest.approx(0.59616, abs=1e-5)


def test_coverage_on_two_source_toy():
    # two Bernoulli sources plus a settled part; mu known exactly
    rng = np.random.default_rng(11)
    w, p, det, n = (0.3, 0.5), (0.4, 0.7), 0.1, 200
    mu = det + sum(wi * pi for wi, pi in zip(w, p))
    hits = 0
    for _ in range(500):
        srcs = []
        for wi, pi in zip(w, p):
            m, v = source_variance((rng.random(n) < pi).astype(float))
            srcs.append(SourceEstimate("g", "h", wi, n, np.atleast_1d(m), np.atleast_1d(v)))
        (e,) = combine_estimates(srcs, [det])
        hits += e.ci_low_raw <= mu <= e.ci_high_raw
    assert 0.93 <= hits / 500 <= 0.97


def test_run_counts(four, graph):
    net, target = four
    assert run_hybrid(net, target, "within", [1.0], 1, 500, graph=graph).total_runs == 3000
    assert run_hybrid(net, target, "within", [1.0], 2, 200, graph=graph).total_runs == 1200


def test_depth_zero_sources(four, graph):
    tree = expand_tree(*four, 0, graph)
    assert len(tree.sources) == 3
    assert all(s.weight == pytest.approx(0.25) for s in tree.sources)


def test_ground_truth_curve(four, graph):
    res = ground_truth(*four, "within", TIMES + [1.5], graph=graph)
    assert res.method == "ground-truth" and res.total_runs == 0
    for e in res.curve:
        assert e.mean == pytest.approx(truth(e.t), abs=1e-9) and e.sigma == 0


@pytest.mark.parametrize("method", ["mh", "is"])
def test_hybrid_agrees_with_mc(four, graph, method):
    net, target = four
    h = run_hybrid(net, target, "within", TIMES, 1, 2000, method, seed=3, graph=graph)
    mc = run_mc(net, target, "within", TIMES, 20_000, seed=4)
    for a, b in zip(h.curve, mc.curve):
        assert abs(a.mean - b.mean) <= 3 * math.hypot(a.sigma, b.sigma) + 1e-12
        assert abs(a.mean - truth(a.t)) <= 3 * a.sigma + 1e-12


@pytest.mark.parametrize("method", ["mh", "is"])
def test_hybrid_curve_is_monotone(four, graph, method):
    times = np.linspace(0, 1.2, 25).tolist()
    for seed in range(3):
        m = run_hybrid(*four, "within", times, 1, 300, method, seed=seed, graph=graph).means
        assert np.all(np.diff(m) >= -1e-12)


def test_worker_count_does_not_change_output(four, graph):
    net, target = four
    a = run_hybrid(net, target, "within", TIMES, 1, 200, "is", seed=5, graph=graph, workers=1)
    b = run_hybrid(net, target, "within", TIMES, 1, 200, "is", seed=5, graph=graph, workers=2)
    assert a.to_csv() == b.to_csv()
    a = run_mc(net, target, "within", TIMES, 25_000, seed=5, workers=1)
    b = run_mc(net, target, "within", TIMES, 25_000, seed=5, workers=2)
    assert a.to_csv() == b.to_csv()


def test_mc_reports_wilson(four):
    res = run_mc(*four, "within", [0.0, 1.0], 1000, seed=1)
    e0, e1 = res.curve
    assert e0.mean == 0 and e0.wilson[0] == 0 and e0.wilson[1] > 0
    assert e1.wilson[0] <= e1.mean <= e1.wilson[1]
    assert res.to_csv().splitlines()[0] == "time,estimate,ci_low,ci_high,n_runs,method"


def test_is_baseline_identity_proposal_matches_mc(four):
    net, target = four
    ident = {"act1": [(1.0, DistributionSpec("UNIFORM", (0.0, 1.0)))]}
    a = run_is_baseline(net, ident, target, "within", TIMES, 20_000, seed=2)
    b = run_mc(net, target, "within", TIMES, 20_000, seed=3)
    for x, y in zip(a.curve, b.curve):
        # L = 1 everywhere, so the IS variance is the Bernoulli one up to n/(n-1)
        assert x.sigma == pytest.approx(math.sqrt(x.mean * (1 - x.mean) / 19_999), rel=1e-9)
        assert abs(x.mean - y.mean) <= 3 * math.hypot(x.sigma, y.sigma)


def test_bad_times_rejected(four):
    with pytest.raises(ValueError):
        run_mc(*four, "within", [1.0, 0.5], 10)
    with pytest.raises(ValueError):
        run_mc(*four, "within", [], 10)
