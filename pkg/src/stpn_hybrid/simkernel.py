"""Batch trajectory simulation compiled with numba.

The net is flattened into arrays (:class:`CompiledNet`).  One call simulates
a batch of runs from given initial states and reports, for every requested
horizon, whether the target holds (``at``) or was hit (``within``), together
with the importance-sampling likelihood of each run.
"""

from __future__ import annotations

import math
from collections import namedtuple
from typing import Mapping, Sequence

import numba as nb
import numpy as np

from .expoly import Bound, integrate_variable
from .stpn import DistributionSpec, MarkingPredicate, ModelError, Stpn, ZenoError

KIND_CODE = {"IMM": 0, "DET": 1, "EXP": 2, "UNIFORM": 3, "ERLANG": 4, "EXPOLY": 5}
OP_CODE = {"==": 0, "<=": 1, ">=": 2, "<": 3, ">": 4}

NetArrays = namedtuple("NetArrays", [
    "pre", "post", "inhib", "en_start", "en_place", "en_op", "en_val",
    "up_start", "up_place", "up_kind", "up_val", "reset",
    "kind", "p1", "p2", "weight", "prio",
    "xp_start", "pc_lo", "pc_hi", "pc_cum", "pc_pdf", "pc_cdf", "tc", "ta", "tr",
    "pr_start", "pr_kind", "pr_p1", "pr_p2", "pr_w", "pr_xp",
    "tg_place", "tg_op", "tg_val",
])


class _Expolys:
    """Flat storage for 1-D piecewise expolynomial densities and their CDFs."""

    def __init__(self):
        self.lo, self.hi, self.cum, self.pdf, self.cdf = [], [], [], [], []
        self.tc, self.ta, self.tr = [], [], []

    def _terms(self, poly) -> tuple[int, int]:
        start = len(self.tc)
        for (exps, rates), c in poly.items():
            self.tc.append(c)
            self.ta.append(exps[0])
            self.tr.append(rates[0])
        return start, len(self.tc)

    def add(self, spec: DistributionSpec) -> int:
        """Register ``spec``; returns the index of its first piece."""
        first = len(self.lo)
        cum = 0.0
        for lo, hi, f in spec._poly_pieces("x"):
            g = integrate_variable(f.rename({"x": "s"}), "s", Bound.const(lo), Bound("x", 0.0))
            self.lo.append(lo)
            self.hi.append(hi)
            self.cum.append(cum)
            self.pdf.append(self._terms(f))
            self.cdf.append(self._terms(g))
            cum += integrate_variable(f, "x", Bound.const(lo), Bound.const(hi)).constant_value()
        return first

    def count(self) -> int:
        return len(self.lo)


def _csr(rows: Sequence[Sequence[tuple]], width: int, dtypes):
    start = np.zeros(len(rows) + 1, dtype=np.int64)
    cols = [[] for _ in range(width)]
    for i, row in enumerate(rows):
        start[i + 1] = start[i] + len(row)
        for item in row:
            for k in range(width):
                cols[k].append(item[k])
    return (start,) + tuple(np.asarray(c, dtype=dt) for c, dt in zip(cols, dtypes))


class CompiledNet:
    """Array form of a net, a target predicate and optional proposal mixtures.

    ``proposals`` maps transition names to lists of ``(weight, DistributionSpec)``
    mixture components used in place of the model distribution; the run
    likelihood then accumulates ``f/f_proposal`` for every such draw.
    """

    def __init__(self, stpn: Stpn, target: MarkingPredicate,
                 proposals: Mapping[str, Sequence[tuple[float, DistributionSpec]]] | None = None):
        self.stpn = stpn
        self.target = target
        T, P = len(stpn.transitions), len(stpn.places)
        pre = np.zeros((T, P), dtype=np.int64)
        post = np.zeros((T, P), dtype=np.int64)
        inhib = np.zeros((T, P), dtype=np.int64)
        reset = np.zeros((T, T), dtype=np.int64)
        for t in range(T):
            for p in stpn._pre[t]:
                pre[t, p] += 1
            for p in stpn._post[t]:
                post[t, p] += 1
            for p in stpn._inh[t]:
                inhib[t, p] = 1
            for u in stpn._reset[t]:
                reset[t, u] = 1
        tr = stpn.transitions
        en = _csr([[(stpn.place_index(p), OP_CODE[op], v) for p, op, v in t.enabling] for t in tr],
                  3, (np.int64, np.int64, np.int64))
        up = _csr([[(stpn.place_index(p), 0 if how == "set" else 1, v) for p, how, v in t.update] for t in tr],
                  3, (np.int64, np.int64, np.int64))
        xp = _Expolys()
        kind = np.zeros(T, dtype=np.int64)
        p1 = np.zeros(T)
        p2 = np.zeros(T)
        xp_start = np.full(T + 1, -1, dtype=np.int64)
        for i, t in enumerate(tr):
            d = t.dist
            kind[i] = KIND_CODE[d.kind]
            if d.kind in ("DET", "EXP"):
                p1[i] = d.params[0]
            elif d.kind in ("UNIFORM", "ERLANG"):
                p1[i], p2[i] = d.params
            elif d.kind == "EXPOLY":
                xp_start[i] = xp.add(d)
                p1[i] = xp_start[i]
                p2[i] = xp.count()
        rows = []
        proposals = dict(proposals or {})
        for name in proposals:
            stpn.transition_index(name)
        for i, t in enumerate(tr):
            comps = proposals.get(t.name, [])
            if comps and t.dist.is_derived:
                raise ModelError(f"proposal for {t.name}: IMM/DET transitions have no density to change")
            tot = sum(w for w, _ in comps)
            row = []
            for w, spec in comps:
                if spec.is_derived:
                    raise ModelError(f"proposal for {t.name}: components need a density")
                lo_i = xp.add(spec) if spec.kind == "EXPOLY" else -1
                row.append((KIND_CODE[spec.kind],
                            float(spec.params[0]) if spec.kind != "EXPOLY" else float(lo_i),
                            float(spec.params[1]) if spec.kind in ("UNIFORM", "ERLANG") else
                            (float(xp.count()) if spec.kind == "EXPOLY" else 0.0),
                            w / tot, lo_i))
            if comps:
                _check_cover(t.name, t.dist, [s for _, s in comps])
            rows.append(row)
        pr = _csr(rows, 5, (np.int64, np.float64, np.float64, np.float64, np.int64))
        tg = [(stpn.place_index(p), OP_CODE[op], v) for p, op, v in target.clauses]
        self.has_proposals = bool(proposals)
        self.arrays = NetArrays(
            pre, post, inhib, en[0], en[1], en[2], en[3],
            up[0], up[1], up[2], up[3], reset,
            kind, p1, p2,
            np.array([t.weight for t in tr]), np.array([t.priority for t in tr], dtype=np.int64),
            xp_start, np.array(xp.lo + [0.0]), np.array(xp.hi + [0.0]), np.array(xp.cum + [0.0]),
            np.array(xp.pdf + [(0, 0)], dtype=np.int64).reshape(-1, 2),
            np.array(xp.cdf + [(0, 0)], dtype=np.int64).reshape(-1, 2),
            np.array(xp.tc + [0.0]), np.array(xp.ta + [0], dtype=np.int64), np.array(xp.tr + [0.0]),
            pr[0], pr[1], pr[2], pr[3], pr[4], pr[5],
            np.array([c[0] for c in tg], dtype=np.int64), np.array([c[1] for c in tg], dtype=np.int64),
            np.array([c[2] for c in tg], dtype=np.int64),
        )

    @property
    def n_transitions(self) -> int:
        return len(self.stpn.transitions)


def _check_cover(name: str, orig: DistributionSpec, comps: Sequence[DistributionSpec]) -> None:
    # the proposal must put density wherever the original does
    intervals = sorted((c.eft, c.lft) for c in comps)
    reach = orig.eft
    for lo, hi in intervals:
        if lo > reach + 1e-12:
            break
        reach = max(reach, hi)
    if reach < orig.lft - 1e-12:
        raise ModelError(f"proposal for {name} does not cover the support [{orig.eft}, {orig.lft}]")


# ---------------------------------------------------------------------------
# compiled kernels


@nb.njit(cache=True)
def _cmp(a, op, b):
    if op == 0:
        return a == b
    if op == 1:
        return a <= b
    if op == 2:
        return a >= b
    if op == 3:
        return a < b
    return a > b


@nb.njit(cache=True)
def _is_enabled(net, m, t):
    P = m.shape[0]
    for p in range(P):
        if m[p] < net.pre[t, p]:
            return False
        if net.inhib[t, p] and m[p] > 0:
            return False
    for k in range(net.en_start[t], net.en_start[t + 1]):
        if not _cmp(m[net.en_place[k]], net.en_op[k], net.en_val[k]):
            return False
    return True


@nb.njit(cache=True)
def _target(net, m):
    for k in range(net.tg_place.shape[0]):
        if not _cmp(m[net.tg_place[k]], net.tg_op[k], net.tg_val[k]):
            return False
    return True


@nb.njit(cache=True)
def _terms_eval(net, start, end, x):
    s = 0.0
    for k in range(start, end):
        v = net.tc[k]
        if net.ta[k] > 0:
            v *= x ** net.ta[k]
        if net.tr[k] != 0.0:
            v *= math.exp(-net.tr[k] * x)
        s += v
    return s


@nb.njit(cache=True)
def _expoly_pdf(net, first, stop, x):
    for k in range(first, stop):
        if net.pc_lo[k] <= x <= net.pc_hi[k]:
            return _terms_eval(net, net.pc_pdf[k, 0], net.pc_pdf[k, 1], x)
    return 0.0


@nb.njit(cache=True)
def _expoly_sample(net, first, stop):
    u = np.random.random()
    k = stop - 1
    for j in range(first, stop - 1):
        if u < net.pc_cum[j + 1]:
            k = j
            break
    goal = u - net.pc_cum[k]
    lo = net.pc_lo[k]
    hi = net.pc_hi[k]
    c0, c1 = net.pc_cdf[k, 0], net.pc_cdf[k, 1]
    if not math.isfinite(hi):
        hi = lo + 1.0
        while _terms_eval(net, c0, c1, hi) < goal and hi < 1e12:
            hi = lo + 2.0 * (hi - lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _terms_eval(net, c0, c1, mid) < goal:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * max(1.0, abs(hi)):
            break
    return 0.5 * (lo + hi)


@nb.njit(cache=True)
def _density(net, kind, p1, p2, x):
    if kind == 2:
        return p1 * math.exp(-p1 * x) if x >= 0.0 else 0.0
    if kind == 3:
        return 1.0 / (p2 - p1) if p1 <= x <= p2 else 0.0
    if kind == 4:
        if x < 0.0:
            return 0.0
        k = int(p1)
        f = 1.0
        for i in range(1, k):
            f *= i
        return p2 ** k * x ** (k - 1) * math.exp(-p2 * x) / f
    if kind == 5:
        return _expoly_pdf(net, int(p1), int(p2), x)
    return 0.0


@nb.njit(cache=True)
def _draw(net, kind, p1, p2):
    if kind == 0:
        return 0.0
    if kind == 1:
        return p1
    if kind == 2:
        return -math.log1p(-np.random.random()) / p1
    if kind == 3:
        return p1 + (p2 - p1) * np.random.random()
    if kind == 4:
        s = 0.0
        for _ in range(int(p1)):
            s += -math.log1p(-np.random.random())
        return s / p2
    return _expoly_sample(net, int(p1), int(p2))


@nb.njit(cache=True)
def _sample_ttf(net, t):
    """Time-to-fire of ``t`` and its likelihood factor."""
    a, b = net.pr_start[t], net.pr_start[t + 1]
    if a == b:
        return _draw(net, net.kind[t], net.p1[t], net.p2[t]), 1.0
    u = np.random.random()
    c = b - 1
    acc = 0.0
    for k in range(a, b):
        acc += net.pr_w[k]
        if u < acc:
            c = k
            break
    x = _draw(net, net.pr_kind[c], net.pr_p1[c], net.pr_p2[c])
    g = 0.0
    for k in range(a, b):
        g += net.pr_w[k] * _density(net, net.pr_kind[k], net.pr_p1[k], net.pr_p2[k], x)
    f = _density(net, net.kind[t], net.p1[t], net.p2[t], x)
    return x, f / g


@nb.njit(cache=True)
def _simulate(net, m0, due0, clock0, forced, skip_initial, horizons, mode, seed, zeno_cap, out, lik):
    np.random.seed(seed)
    n = due0.shape[0]
    T = net.kind.shape[0]
    H = horizons.shape[0]
    hmax = horizons[H - 1]
    en = np.zeros(T, dtype=np.bool_)
    en_inter = np.zeros(T, dtype=np.bool_)
    en_after = np.zeros(T, dtype=np.bool_)
    tied = np.zeros(T, dtype=np.int64)
    for r in range(n):
        m = m0.copy()
        due = due0[r].copy()
        clock = clock0[r]
        L = 1.0
        for t in range(T):
            en[t] = _is_enabled(net, m, t)
            if en[t] and math.isnan(due[t]):
                x, lf = _sample_ttf(net, t)
                due[t] = clock + x
                L *= lf
        first = forced
        recording = not skip_initial
        hp = 0
        while hp < H and horizons[hp] < clock:
            hp += 1
        if recording and mode == 0 and _target(net, m):
            for h in range(hp, H):
                out[r, h] = 1
            lik[r] = L
            continue
        steps = 0
        while True:
            tnext = np.inf
            for t in range(T):
                if en[t] and due[t] < tnext:
                    tnext = due[t]
            if first >= 0:
                chosen = first
                tnext = due[first]
            elif tnext < np.inf:
                tol = 1e-12 * max(1.0, abs(tnext))
                nt = 0
                top = -1
                for t in range(T):
                    if en[t] and due[t] <= tnext + tol:
                        if net.prio[t] > top:
                            top = net.prio[t]
                            nt = 0
                        if net.prio[t] == top:
                            tied[nt] = t
                            nt += 1
                chosen = tied[0]
                if nt > 1:
                    wsum = 0.0
                    for k in range(nt):
                        wsum += net.weight[tied[k]]
                    u = np.random.random() * wsum
                    acc = 0.0
                    chosen = tied[nt - 1]
                    for k in range(nt):
                        acc += net.weight[tied[k]]
                        if u < acc:
                            chosen = tied[k]
                            break
            else:
                chosen = -1
            if recording and mode == 1:
                tg = _target(net, m)
                while hp < H and horizons[hp] < tnext:
                    out[r, hp] = 1 if tg else 0
                    hp += 1
            if chosen < 0 or tnext > hmax:
                break
            steps += 1
            if steps > zeno_cap:
                lik[r] = np.nan
                return 1
            # token game with intermediate-marking persistence
            tmp = m.copy()
            for p in range(m.shape[0]):
                tmp[p] -= net.pre[chosen, p]
            for t in range(T):
                en_inter[t] = _is_enabled(net, tmp, t)
            for p in range(m.shape[0]):
                tmp[p] += net.post[chosen, p]
            for k in range(net.up_start[chosen], net.up_start[chosen + 1]):
                if net.up_kind[k] == 0:
                    tmp[net.up_place[k]] = net.up_val[k]
                else:
                    tmp[net.up_place[k]] += net.up_val[k]
            for t in range(T):
                en_after[t] = _is_enabled(net, tmp, t)
            for t in range(T):
                if en_after[t]:
                    keep = t != chosen and en[t] and en_inter[t] and net.reset[chosen, t] == 0
                    if not keep:
                        x, lf = _sample_ttf(net, t)
                        due[t] = tnext + x
                        L *= lf
                en[t] = en_after[t]
            m = tmp
            clock = tnext
            if first >= 0:
                first = -1
                if not recording:
                    recording = True
                    while hp < H and horizons[hp] < clock:
                        hp += 1
            if recording and mode == 0 and _target(net, m):
                while hp < H and horizons[hp] < clock:
                    hp += 1
                while hp < H:
                    out[r, hp] = 1
                    hp += 1
                break
        lik[r] = L
    return 0


def simulate(cnet: CompiledNet, n: int, horizons: Sequence[float], mode: str, seed: int,
             marking0: Sequence[int] | None = None, due0: np.ndarray | None = None,
             clock0: np.ndarray | float = 0.0, forced: int = -1, skip_initial: bool = False,
             zeno_cap: int = 10 ** 6) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``n`` runs.

    ``due0[r, t]`` is the absolute firing time of ``t`` in run ``r``; NaN
    entries of enabled transitions are sampled at start.  ``forced`` names a
    transition that must fire first regardless of ties; with ``skip_initial``
    the reward is recorded only from that first firing on.

    Returns ``(indicator, likelihood)`` with shapes ``(n, H)`` and ``(n,)``.
    """
    hz = np.asarray(horizons, dtype=float)
    if hz.ndim != 1 or hz.size == 0 or np.any(np.diff(hz) < 0):
        raise ValueError("horizons must be a non-empty increasing sequence")
    T = cnet.n_transitions
    m0 = np.asarray(cnet.stpn.initial_marking if marking0 is None else marking0, dtype=np.int64)
    if due0 is None:
        due0 = np.full((n, T), np.nan)
    due0 = np.ascontiguousarray(due0, dtype=float)
    clock = np.broadcast_to(np.asarray(clock0, dtype=float), (n,)).copy()
    out = np.zeros((n, hz.size), dtype=np.uint8)
    lik = np.ones(n)
    if n == 0:
        return out, lik
    status = _simulate(cnet.arrays, m0, due0, clock, int(forced), bool(skip_initial), hz,
                       0 if mode == "within" else 1, int(seed) % (2 ** 32), int(zeno_cap), out, lik)
    if status == 1:
        raise ZenoError(f"more than {zeno_cap} firings in one run before t={hz[-1]}")
    return out, lik
