import math

import numpy as np
import pytest
from scipy import stats
from statsmodels.stats.diagnostic import acorr_ljungbox

from stpn_hybrid.expoly import Expolynomial, PiecewisePdf, marginal_cdf
from stpn_hybrid.sampler import (
    IsConfig, MhConfig, SamplerError, acceptance_mass, adapt_sigma, compile_pdf, draw_offspring, find_start,
    is_sample, ljung_box, mh_sample, mh_step, prepare,
)
from stpn_hybrid.scgraph import build_graph
from stpn_hybrid.ssc import expand_tree
from stpn_hybrid.stpn import Stpn, TransitionSpec, det
from stpn_hybrid.zone import DbmZone, intersect


def linear_pdf():
    return PiecewisePdf.single(DbmZone.box({"x": (0, 1)}), Expolynomial.monomial("x", 1, 0.0, 2.0))


def triangle_pdf():
    z = intersect(DbmZone.box({"x": (0, 1), "y": (0, 1)}), "x", "y", 0.0)
    return PiecewisePdf.single(z, Expolynomial.constant(2.0, ("x", "y")))


def gamma_tail_pdf():
    # x e^{-x} truncated to [0, 3]
    m = 1 - 4 * math.exp(-3)
    return PiecewisePdf.single(DbmZone.box({"x": (0, 3)}), Expolynomial.monomial("x", 1, 1.0, 1 / m))


def ks(samples, pdf, var, weights=None):
    order = np.argsort(samples)
    xs = samples[order]
    F = marginal_cdf(pdf, var, xs)
    if weights is None:
        n = xs.size
        return max(np.max(np.arange(1, n + 1) / n - F), np.max(F - np.arange(n) / n))
    w = weights[order] / weights.sum()
    emp = np.cumsum(w)
    return max(np.max(emp - F), np.max(F - (emp - w)))


# -- Ljung-Box ---------------------------------------------------------------

def test_ljung_box_matches_statsmodels():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(500).cumsum() * 0.01 + rng.standard_normal(500)
    Q, _ = ljung_box(x, 20)
    ref = acorr_ljungbox(x, lags=[20])["lb_stat"].iloc[0]
    assert Q[0] == pytest.approx(ref, rel=1e-10)


def test_ljung_box_null_calibration():
    rng = np.random.default_rng(1)
    rejects = sum(ljung_box(rng.standard_normal(10_000), 20)[1] for _ in range(1000))
    assert 0.03 <= rejects / 1000 <= 0.07


@pytest.mark.parametrize("series", [
    np.ones(200),                       # x_k = x_{k-1}
    np.tile([1.0, -1.0], 100),          # alternating
    np.cumsum(np.random.default_rng(2).standard_normal(1000)),
])
def test_ljung_box_rejects_dependence(series):
    assert ljung_box(series, 20)[1]


def test_ljung_box_needs_more_than_h():
    with pytest.raises(ValueError):
        ljung_box(np.arange(20.0), 20)


def test_ljung_box_bonferroni_uses_each_dimension():
    rng = np.random.default_rng(3)
    x = np.column_stack([rng.standard_normal(2000), np.tile([1.0, -1.0], 1000)])
    Q, reject = ljung_box(x, 20)
    assert Q.shape == (2,) and reject


# -- Metropolis-Hastings -------------------------------------------------------

def test_mh_step_rules():
    cp = compile_pdf(linear_pdf())
    # a huge step almost always leaves the support and is rejected
    rng = np.random.default_rng(0)
    outs = [mh_step(cp, np.array([0.5]), np.array([1e6]), rng)[0] for _ in range(200)]
    assert all(o == 0.5 for o in outs)
    # uphill moves are always accepted
    for s in range(50):
        r = np.random.default_rng(s)
        z = r.standard_normal()
        out = mh_step(cp, np.array([0.5]), np.array([0.01]), np.random.default_rng(s))[0]
        if z > 0:
            assert out == pytest.approx(0.5 + 0.01 * z)
    with pytest.raises(SamplerError):
        mh_step(cp, np.array([2.0]), np.array([0.1]), rng)


def test_sigma_adaptation_band():
    cfg = MhConfig()
    s = np.ones(2)
    assert np.allclose(adapt_sigma(s, 0.5, cfg), 1.25)
    assert np.allclose(adapt_sigma(s, 0.25, cfg), 1.0)
    assert np.allclose(adapt_sigma(s, 0.1, cfg), 0.8)


def test_mh_stationary_mean():
    cp = compile_pdf(linear_pdf())
    xs, tuning = mh_sample(cp, 100_000, MhConfig(), np.random.default_rng(4))
    assert xs[:, 0].mean() == pytest.approx(2 / 3, abs=0.01)
    assert 0.2 <= tuning.acceptance <= 0.3 or tuning.thin >= 100


@pytest.mark.parametrize("make, var", [(gamma_tail_pdf, "x"), (triangle_pdf, "x"), (triangle_pdf, "y")])
def test_mh_marginals(make, var):
    pdf = make()
    cp = compile_pdf(pdf)
    xs, _ = mh_sample(cp, 100_000, MhConfig(), np.random.default_rng(5))
    col = xs[:, pdf.variables.index(var)]
    assert ks(col, pdf, var) < 0.02


def test_mh_determinism():
    cp = compile_pdf(triangle_pdf())
    a, ta = mh_sample(cp, 500, MhConfig(), np.random.default_rng(9))
    b, tb = mh_sample(cp, 500, MhConfig(), np.random.default_rng(9))
    assert np.array_equal(a, b) and ta.thin == tb.thin and np.array_equal(ta.sigma, tb.sigma)


def test_start_point_search_fails_on_empty_support():
    empty = PiecewisePdf(("x",), ())
    with pytest.raises(SamplerError):
        find_start(compile_pdf(empty), np.random.default_rng(0), max_attempts=1000)


# -- importance sampling -----------------------------------------------------

def test_is_weighted_mean():
    cp = compile_pdf(linear_pdf())
    xs, L = is_sample(cp, 100_000, IsConfig(), np.random.default_rng(6))
    assert acceptance_mass(cp, 1.0) == pytest.approx(1.0)
    assert np.all(L > 0)
    assert np.allclose(L, 2 * xs[:, 0])
    assert (L * xs[:, 0]).mean() == pytest.approx(2 / 3, abs=0.01)


def test_is_unbiased_on_triangle():
    pdf = triangle_pdf()
    cp = compile_pdf(pdf)
    assert acceptance_mass(cp, 1.0) == pytest.approx(0.5)
    xs, L = is_sample(cp, 50_000, IsConfig(), np.random.default_rng(7))
    g = xs[:, 0] * xs[:, 1] * L
    exact = 2 * (1 / 8)  # E[xy] with x<=y uniform: 2 * int_0^1 y * y^2/2 dy
    assert abs(g.mean() - exact) < 3 * g.std() / math.sqrt(g.size)
    assert ks(xs[:, 1], pdf, "y", L) < 0.02


def test_is_with_exponential_tail():
    pdf = PiecewisePdf.single(DbmZone.box({"x": (1, math.inf)}), Expolynomial(("x",), {((0,), (2.0,)): 2 * math.exp(2.0)}))
    cp = compile_pdf(pdf)
    xs, L = is_sample(cp, 50_000, IsConfig(lam=1.0), np.random.default_rng(8))
    y = xs[:, 0] * L
    assert abs(y.mean() - 1.5) < 3 * y.std() / math.sqrt(y.size)


# -- offspring assembly ---------------------------------------------------------

def test_offspring_from_point_class_has_unit_likelihood():
    ts = [TransitionSpec("a", det(1.0), pre=("P",), post=("Target",)), TransitionSpec("b", det(2.0), pre=("Q",))]
    net = Stpn(("P", "Q", "Target"), ts, {"P": 1, "Q": 1})
    from stpn_hybrid.stpn import MarkingPredicate
    tree = expand_tree(net, MarkingPredicate.parse("Target>=1"), 0)
    (src,) = [s for s in tree.sources if s.gamma == "a"]
    for method in ("mh", "is"):
        b = draw_offspring(net, prepare(src, method), 10, method, np.random.default_rng(0))
        assert np.all(b.likelihood == 1.0) and b.timings.shape == (10, 0)
        assert np.allclose(b.due[:, 0], 1.0) and np.allclose(b.due[:, 1], 2.0)


def test_offspring_due_times_respect_conditioning(four):
    net, target = four
    tree = expand_tree(net, target, 1, build_graph(net, target))
    src = tree.sources[0]
    b = draw_offspring(net, prepare(src, "is"), 2000, "is", np.random.default_rng(1))
    g = net.transition_index(src.gamma)
    assert b.forced == g
    enabled = ~np.isnan(b.due[0])
    assert np.all(b.due[:, g] <= np.nanmin(b.due[:, enabled], axis=1) + 1e-12)
    assert np.all(b.clock <= b.due[:, g] + 1e-12) and np.all(b.clock >= 0)
