"""Hybrid estimation and the simulation baselines.

The hybrid estimator resolves the first ``d`` firings analytically and
launches simulation offspring from every source at the frontier.  Its mean is
the weighted sum of per-source offspring means plus the reward already
settled analytically; its variance is the weighted sum of per-source sample
variances, each divided by the offspring count.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import norm

from .sampler import IsConfig, MhConfig, draw_offspring, prepare
from .scgraph import ScGraph, build_graph
from .simkernel import CompiledNet, simulate
from .ssc import OffspringSource, TransientTree, expand_tree
from .stpn import DistributionSpec, MarkingPredicate, Stpn

MC_CHUNK = 10_000


@dataclass
class SourceEstimate:
    transition: str
    marking_hash: str
    weight: float
    n: int
    mean: np.ndarray
    variance: np.ndarray

    def to_json(self) -> dict:
        return {"marking-hash": self.marking_hash, "transition": self.transition,
                "weight": self.weight, "n": self.n,
                "mean": [float(v) for v in self.mean], "variance": [float(v) for v in self.variance]}


@dataclass
class Estimate:
    t: float
    mean: float
    sigma: float
    ci_low_raw: float
    ci_high_raw: float
    confidence: float
    method: str
    runs: int
    wilson: tuple[float, float] | None = None

    @property
    def ci_low(self) -> float:
        return float(min(max(self.ci_low_raw, 0.0), 1.0))

    @property
    def ci_high(self) -> float:
        return float(min(max(self.ci_high_raw, 0.0), 1.0))

    @property
    def half_width(self) -> float:
        return float(0.5 * (self.ci_high_raw - self.ci_low_raw))

    def to_json(self) -> dict:
        d = {"t": self.t, "mean": self.mean, "sigma": self.sigma, "ci_low": self.ci_low,
             "ci_high": self.ci_high, "ci_low_raw": self.ci_low_raw, "ci_high_raw": self.ci_high_raw,
             "n_runs": self.runs}
        if self.wilson is not None:
            d["wilson_low"], d["wilson_high"] = self.wilson
        return d


@dataclass
class AnalysisResult:
    method: str
    model: str
    mode: str
    depth: float | None
    seed: int | None
    curve: list[Estimate]
    sources: list[SourceEstimate] = field(default_factory=list)
    det_contributions: list[dict] = field(default_factory=list)
    total_runs: int = 0

    @property
    def times(self) -> list[float]:
        return [e.t for e in self.curve]

    @property
    def means(self) -> np.ndarray:
        return np.array([e.mean for e in self.curve])

    def to_json(self) -> dict:
        depth = self.depth
        if depth is not None:
            depth = "inf" if math.isinf(depth) else int(depth)
        return {"method": self.method, "model": self.model, "mode": self.mode, "depth": depth,
                "seed": self.seed, "total_runs": self.total_runs,
                "sources": [s.to_json() for s in self.sources],
                "det_contributions": self.det_contributions,
                "curve": [e.to_json() for e in self.curve]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "estimate", "ci_low", "ci_high", "n_runs", "method"])
        for e in self.curve:
            w.writerow([repr(float(e.t)), repr(float(e.mean)), repr(e.ci_low), repr(e.ci_high),
                        e.runs, self.method])
        return buf.getvalue()

    def dumps(self, fmt: str) -> str:
        if fmt == "csv":
            return self.to_csv()
        return json.dumps(self.to_json(), indent=2) + "\n"


# ---------------------------------------------------------------------------
# estimators


def z_value(confidence: float) -> float:
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    return float(norm.ppf(0.5 + confidence / 2.0))


def wilson_interval(hits: float, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    z2 = z_value(confidence) ** 2
    p = float(hits) / n
    centre = p + z2 / (2 * n)
    spread = math.sqrt(z2 * (p * (1 - p) / n + z2 / (4 * n * n)))
    den = 1 + z2 / n
    return float(max(0.0, (centre - spread) / den)), float(min(1.0, (centre + spread) / den))


def source_variance(psi: np.ndarray, likelihood: np.ndarray | None = None,
                    method: str = "mh") -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and per-sample variance of the reward.

    ``psi`` is ``(n,)`` or ``(n, H)``.  Equal-weight samples use the Bernoulli
    moment; weighted ones the unbiased second-moment form.
    """
    psi = np.asarray(psi, dtype=float)
    n = psi.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")
    if method == "mh":
        m = psi.mean(axis=0)
        return m, m * (1.0 - m)
    L = np.ones(n) if likelihood is None else np.asarray(likelihood, dtype=float)
    if psi.ndim == 2:
        L = L[:, None]
    y = psi * L
    m = y.mean(axis=0)
    var = np.sum(y * y, axis=0) / (n - 1) - n / (n - 1) * m * m
    return m, np.maximum(var, 0.0)


def combine_estimates(sources: Sequence[SourceEstimate], det_weights, times: Sequence[float] | None = None,
                      confidence: float = 0.95, method: str = "hybrid") -> list[Estimate]:
    """Weighted mean and summed variance over sources plus settled reward."""
    det = np.atleast_1d(np.asarray(det_weights, dtype=float))
    if det.ndim == 2:
        det = det.sum(axis=0)
    H = det.size if times is None else len(times)
    if det.size == 1 and H > 1:
        det = np.full(H, det[0])
    elif det.size == 0:
        det = np.zeros(H)
    times = list(range(H)) if times is None else list(times)
    mean = det.copy()
    var = np.zeros(H)
    for s in sources:
        mean += s.weight * np.asarray(s.mean, dtype=float)
        var += s.weight ** 2 / s.n * np.asarray(s.variance, dtype=float)
    z = z_value(confidence)
    runs = sum(s.n for s in sources)
    out = []
    for j, t in enumerate(times):
        sd = math.sqrt(var[j])
        mj = float(mean[j])
        out.append(Estimate(float(t), mj, sd, mj - z * sd, mj + z * sd, confidence, method, runs))
    return out


# ---------------------------------------------------------------------------
# hybrid


def _source_task(args):
    (stpn, target, proposals, src, idx, n, times, mode, method, seed, mh_cfg, is_cfg, zeno_cap) = args
    ss = np.random.SeedSequence([seed, idx])
    rng = np.random.default_rng(ss.spawn(1)[0])
    sim_seed = int(ss.generate_state(1)[0])
    cnet = CompiledNet(stpn, target)
    prep = prepare(src, method, is_cfg)
    batch = draw_offspring(stpn, prep, n, method, rng, mh_cfg, is_cfg)
    ind, _ = simulate(cnet, n, times, mode, sim_seed, marking0=batch.marking, due0=batch.due,
                      clock0=batch.clock, forced=batch.forced, skip_initial=True, zeno_cap=zeno_cap)
    return source_variance(ind, batch.likelihood, method)


def _map(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks))


def _check_times(times) -> np.ndarray:
    hz = np.asarray(times, dtype=float)
    if hz.ndim != 1 or hz.size == 0 or np.any(hz < 0) or np.any(np.diff(hz) < 0):
        raise ValueError("times must be a non-empty, non-negative, increasing list")
    return hz


def run_hybrid(stpn: Stpn, target: MarkingPredicate, mode: str, times: Sequence[float], depth: float,
               offspring: int, method: str = "mh", seed: int = 0, confidence: float = 0.95,
               workers: int = 1, graph: ScGraph | None = None, tree: TransientTree | None = None,
               mh_cfg: MhConfig | None = None, is_cfg: IsConfig | None = None,
               piece_cap: int = 10 ** 4, zeno_cap: int = 10 ** 6) -> AnalysisResult:
    hz = _check_times(times)
    if tree is None:
        if graph is None:
            graph = build_graph(stpn, target)
        tree = expand_tree(stpn, target, depth, graph, mode, piece_cap, horizon=float(hz[-1]))
    if tree.sources and offspring < 2:
        raise ValueError("need at least two offspring per source")
    tasks = [(stpn, target, None, s, i, offspring, hz, mode, method, seed, mh_cfg, is_cfg, zeno_cap)
             for i, s in enumerate(tree.sources)]
    results = _map(_source_task, tasks, workers)
    ests = [SourceEstimate(s.gamma, stpn.marking_hash(s.cls.marking), s.weight, offspring, m, v)
            for s, (m, v) in zip(tree.sources, results)]
    det = tree.det_weights(hz)
    label = "ground-truth" if math.isinf(depth) and not tree.sources else "hybrid"
    curve = combine_estimates(ests, det, hz, confidence, label)
    det_json = [{"marking-hash": stpn.marking_hash(tree.nodes[n].cls.marking),
                 "rho": tree.nodes[n].cls.rho, "values": [float(v) for v in det[i]]}
                for i, n in enumerate(tree.det_nodes)]
    return AnalysisResult(label, stpn.name, mode, depth, seed, curve, ests, det_json,
                          offspring * len(tree.sources))


def ground_truth(stpn: Stpn, target: MarkingPredicate, mode: str, times: Sequence[float],
                 piece_cap: int = 10 ** 4, graph: ScGraph | None = None) -> AnalysisResult:
    """Complete tree: every reward is settled analytically."""
    res = run_hybrid(stpn, target, mode, times, math.inf, 0, graph=graph, piece_cap=piece_cap)
    res.seed = None
    return res


# ---------------------------------------------------------------------------
# baselines


def _chunk_task(args):
    stpn, target, proposals, idx, n, times, mode, seed, zeno_cap = args
    cnet = CompiledNet(stpn, target, proposals)
    sim_seed = int(np.random.SeedSequence([seed, idx]).generate_state(1)[0])
    ind, L = simulate(cnet, n, times, mode, sim_seed, zeno_cap=zeno_cap)
    y = ind * L[:, None]
    return y.sum(axis=0), (y * y).sum(axis=0)


def _chunks(runs: int) -> list[int]:
    sizes = [MC_CHUNK] * (runs // MC_CHUNK)
    if runs % MC_CHUNK:
        sizes.append(runs % MC_CHUNK)
    return sizes


def _baseline(stpn, target, proposals, mode, times, runs, seed, workers, zeno_cap):
    hz = _check_times(times)
    if runs < 2:
        raise ValueError("need at least two runs")
    tasks = [(stpn, target, proposals, i, n, hz, mode, seed, zeno_cap) for i, n in enumerate(_chunks(runs))]
    parts = _map(_chunk_task, tasks, workers)
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    return hz, s1, s2


def run_mc(stpn: Stpn, target: MarkingPredicate, mode: str, times: Sequence[float], runs: int,
           confidence: float = 0.95, seed: int = 0, workers: int = 1, zeno_cap: int = 10 ** 6) -> AnalysisResult:
    """Crude Monte Carlo with normal and Wilson intervals."""
    hz, hits, _ = _baseline(stpn, target, None, mode, times, runs, seed, workers, zeno_cap)
    z = z_value(confidence)
    curve = []
    for t, h in zip(hz, hits):
        p = float(h) / runs
        sd = math.sqrt(p * (1 - p) / runs)
        curve.append(Estimate(float(t), p, sd, p - z * sd, p + z * sd, confidence, "mc", runs,
                              wilson_interval(h, runs, confidence)))
    return AnalysisResult("mc", stpn.name, mode, None, seed, curve, total_runs=runs)


def run_is_baseline(stpn: Stpn, proposals: Mapping[str, Sequence[tuple[float, DistributionSpec]]],
                    target: MarkingPredicate, mode: str, times: Sequence[float], runs: int,
                    confidence: float = 0.95, seed: int = 0, workers: int = 1,
                    zeno_cap: int = 10 ** 6) -> AnalysisResult:
    """Importance sampling with per-transition proposal mixtures."""
    CompiledNet(stpn, target, proposals)  # validates support cover up front
    hz, s1, s2 = _baseline(stpn, target, dict(proposals), mode, times, runs, seed, workers, zeno_cap)
    z = z_value(confidence)
    m = s1 / runs
    var = np.maximum(s2 / (runs - 1) - runs / (runs - 1) * m * m, 0.0)
    curve = []
    for t, mj, vj in zip(hz, m.tolist(), var.tolist()):
        sd = math.sqrt(vj / runs)
        curve.append(Estimate(float(t), float(mj), sd, mj - z * sd, mj + z * sd, confidence, "is", runs))
    return AnalysisResult("is", stpn.name, mode, None, seed, curve, total_runs=runs)
