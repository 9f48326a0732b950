"""Stochastic state classes and the depth-bounded transient tree.

A class keeps the joint density of its *continuous* timers (GEN times-to-fire
and usually the age timer) as a :class:`PiecewisePdf`.  IMM and DET timers,
and the age timer before the first stochastic firing, are *derived*: their
value is another continuous timer plus a constant, or a plain constant.  EXP
timers stay outside the density as a bundle of rates, because by
memorylessness they are unaffected by firings.

All timer values are measured from the moment the class was entered.  The
age timer holds minus the elapsed time at entry.  While it is continuous it is
stored relative to ``age_offset`` and recentred after every firing: its
support drifts away from 0 while its polynomial degree grows, and the
monomial coefficients would otherwise lose the mass to cancellation.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .expoly import (Expolynomial, PiecewisePdf, eliminate_piece, integrate_piece, multiply,
                     substitute)
from .scgraph import ScGraph, StateClass, initial_sc, successor_sc
from .stpn import Marking, MarkingPredicate, Stpn
from .zone import (INF, REF, DbmZone, add_variable, intersect_all, offset_variable, rename, reorder,
                   shift_all, swap_reference)

AGE = "@age"
OLD = "@ref"
XEXP = "@exp"
TIE_TOL = 1e-12

Pieces = list[tuple[DbmZone, Expolynomial]]


class PieceCapError(RuntimeError):
    code = "PIECE_CAP"


class NullProbabilityError(ValueError):
    pass


@dataclass(frozen=True)
class Derived:
    """Timer equal to ``x_anchor + offset`` (``anchor=None``: a constant)."""

    anchor: str | None
    offset: float


@dataclass(frozen=True)
class StochasticStateClass:
    marking: Marking
    pdf: PiecewisePdf
    derived: tuple[tuple[str, Derived], ...]
    exp_rates: tuple[tuple[str, float], ...]
    rho: float
    age_offset: float = 0.0

    @property
    def derived_map(self) -> dict[str, Derived]:
        return dict(self.derived)

    @property
    def exp_map(self) -> dict[str, float]:
        return dict(self.exp_rates)

    @property
    def continuous(self) -> tuple[str, ...]:
        return self.pdf.variables

    @property
    def timers(self) -> tuple[str, ...]:
        """Enabled transitions (age excluded)."""
        names = [v for v in self.continuous if v != AGE]
        names += [k for k, _ in self.derived if k != AGE]
        names += [k for k, _ in self.exp_rates]
        return tuple(names)

    @property
    def lambda_agg(self) -> float:
        return float(sum(r for _, r in self.exp_rates))

    @property
    def zone(self) -> DbmZone:
        """Smallest DBM containing the support of the density."""
        if not self.pdf.pieces:
            return DbmZone.unconstrained(self.continuous)
        b = np.max(np.stack([p.zone.bounds for p in self.pdf.pieces]), axis=0)
        return DbmZone(self.continuous, b)

    def value(self, var: str) -> tuple[str | None, float]:
        if var in self.continuous:
            return var, self.age_offset if var == AGE else 0.0
        d = self.derived_map.get(var)
        if d is None:
            raise KeyError(f"{var} has no continuous or derived value in this class")
        return d.anchor, d.offset

    def mass(self) -> float:
        return sum(integrate_piece(p.zone, p.poly) for p in self.pdf.pieces)

    def describe(self, stpn: Stpn) -> str:
        return (f"[{stpn.marking_str(self.marking)}] rho={self.rho:.6g} "
                f"pdf={list(self.continuous)} pieces={len(self.pdf.pieces)} "
                f"derived={ {k: (d.anchor, d.offset) for k, d in self.derived} } exp={self.exp_map}")


@dataclass(frozen=True)
class OffspringSource:
    """Class ``cls`` conditioned on ``gamma`` firing first."""

    cls: StochasticStateClass
    gamma: str
    pdf: PiecewisePdf
    derived: tuple[tuple[str, Derived], ...]
    exp_residual: tuple[tuple[str, float], ...]
    gamma_value: tuple[str | None, float]
    mu: float
    node: int = -1

    @property
    def weight(self) -> float:
        return self.cls.rho * self.mu

    def timer_value_exprs(self) -> dict[str, tuple[str | None, float]]:
        """Every non-EXP timer (and age) as ``(continuous var or None, offset)``."""
        out = {v: (v, 0.0) for v in self.pdf.variables if v != XEXP}
        if AGE in out:
            out[AGE] = (AGE, self.cls.age_offset)
        out.update({k: (d.anchor, d.offset) for k, d in self.derived})
        return out


# ---------------------------------------------------------------------------
# piece-list transformations; zones and polynomials always share variable order


def _aligned(z: DbmZone, p: Expolynomial) -> tuple[DbmZone, Expolynomial]:
    return z, p.reorder(z.variables)


def _restrict(pieces: Pieces, constraints: list[tuple[str, str, float]]) -> Pieces:
    out = []
    for z, p in pieces:
        z2 = intersect_all(z, constraints) if constraints else z
        if z2 is not None and z2.is_full_dimensional():
            out.append((z2, p))
    return out


def _times(pieces: Pieces, factor: Expolynomial) -> Pieces:
    return [_aligned(z, multiply(p, factor)) for z, p in pieces]


def _swap(pieces: Pieces, v: str) -> Pieces:
    # y' = y - x_v for every other y, and OLD = -x_v
    out = []
    for z, p in pieces:
        z2 = swap_reference(z, v, OLD)
        q = substitute(p, v, {OLD: -1.0})
        for y in p.variables:
            if y != v:
                q = substitute(q, y, {y: 1.0, OLD: -1.0})
        out.append(_aligned(z2, q))
    return out


def _shift(pieces: Pieces, c: float) -> Pieces:
    # every variable decreases by c
    out = []
    for z, p in pieces:
        q = p
        for y in p.variables:
            q = substitute(q, y, {y: 1.0, None: c})
        out.append(_aligned(shift_all(z, c), q))
    return out


def _promote(pieces: Pieces, old: str, new: str, c: float) -> Pieces:
    # new = old + c replaces old
    out = []
    for z, p in pieces:
        z2 = offset_variable(rename(z, {old: new}), new, c)
        q = substitute(p, old, {new: 1.0, None: -c})
        out.append(_aligned(z2, q))
    return out


def _merge(pieces: Pieces) -> Pieces:
    acc: dict = {}
    order = []
    for z, p in pieces:
        k = z.key()
        if k in acc:
            acc[k] = (acc[k][0], acc[k][1] + p)
        else:
            acc[k] = (z, p)
            order.append(k)
    return [acc[k] for k in order if not acc[k][1].is_zero()]


def _marginalize(pieces: Pieces, v: str) -> Pieces:
    out: Pieces = []
    for z, p in pieces:
        out.extend(eliminate_piece(z, p, v))
    return _merge(out)


def _density_product(pieces: Pieces, name: str, density: PiecewisePdf) -> Pieces:
    out = []
    for z, p in pieces:
        for dp in density.pieces:
            lo, hi = dp.zone.marginal_bounds(name)
            out.append(_aligned(add_variable(z, name, lo, hi), multiply(p, dp.poly)))
    return out


def _to_pdf(pieces: Pieces, order: Sequence[str]) -> PiecewisePdf:
    order = tuple(order)
    return PiecewisePdf.from_pieces(order, [(reorder(z, order), p) for z, p in pieces])


def _canonical_order(stpn: Stpn, names: Iterable[str]) -> list[str]:
    names = set(names)
    out = [AGE] if AGE in names else []
    out += [t.name for t in stpn.transitions if t.name in names]
    out += sorted(n for n in names if n not in out)
    return out


# ---------------------------------------------------------------------------
# classes


def initial_class(stpn: Stpn) -> StochasticStateClass:
    m = stpn.initial_marking
    en = stpn.enabled_indices(m)
    if not en:
        raise ValueError("initial marking enables no transition")
    pieces: Pieces = [(DbmZone.unconstrained(()), Expolynomial.constant(1.0))]
    derived = {AGE: Derived(None, 0.0)}
    exp: dict[str, float] = {}
    for t in en:
        _add_new(stpn.transitions[t].name, stpn.transitions[t].dist, derived, exp)
    pieces = _new_gen(stpn, en, pieces)
    order = _canonical_order(stpn, pieces[0][0].variables)
    return StochasticStateClass(m, _to_pdf(pieces, order), tuple(sorted(derived.items())),
                                tuple(exp.items()), 1.0)


def _add_new(name, dist, derived, exp):
    if dist.kind == "EXP":
        exp[name] = dist.rate
    elif dist.is_derived:
        derived[name] = Derived(None, dist.value)


def _new_gen(stpn: Stpn, indices: Iterable[int], pieces: Pieces) -> Pieces:
    for t in indices:
        spec = stpn.transitions[t]
        if spec.dist.is_gen:
            pieces = _density_product(pieces, spec.name, spec.dist.density(spec.name))
    return pieces


def condition_on_firing(stpn: Stpn, cls: StochasticStateClass, gamma: str) -> tuple[float, OffspringSource | None]:
    """Probability ``mu`` that ``gamma`` fires first, and the class density
    conditioned on that event (``None`` when ``mu = 0``)."""
    timers = cls.timers
    if gamma not in timers:
        raise ValueError(f"{gamma} is not enabled in this class")
    spec = stpn.transition(gamma)
    lam = cls.lambda_agg
    exp = cls.exp_map
    derived = cls.derived_map
    pieces: Pieces = [(pc.zone, pc.poly) for pc in cls.pdf.pieces]
    const = 1.0
    if gamma in exp:
        pieces = [_aligned(add_variable(z, XEXP, 0.0, INF), multiply(p, Expolynomial.monomial(XEXP, 0, lam, lam)))
                  for z, p in pieces]
        gval: tuple[str | None, float] = (XEXP, 0.0)
        const = exp[gamma] / lam
        residual = tuple((k, r) for k, r in cls.exp_rates if k != gamma)
    else:
        gval = cls.value(gamma)
        residual = cls.exp_rates
        if lam > 0:
            a, c = gval
            const *= math.exp(-lam * c)
            if a is not None:
                pieces = _times(pieces, Expolynomial.monomial(a, 0, lam))
    constraints = []
    tie_weight = spec.weight
    for b in timers:
        if b == gamma or b in exp:
            continue
        ab, cb = cls.value(b)
        if ab == gval[0]:
            d = cb - gval[1]
            if d < -TIE_TOL:
                return 0.0, None
            if d <= TIE_TOL:
                other = stpn.transition(b)
                if other.priority > spec.priority:
                    return 0.0, None
                if other.priority == spec.priority:
                    tie_weight += other.weight
            continue
        constraints.append((gval[0] or REF, ab or REF, cb - gval[1]))
    const *= spec.weight / tie_weight
    pieces = _restrict(pieces, constraints)
    if not pieces:
        return 0.0, None
    # measure the mass in the stored variable order; the iterated integral
    # can differ across orders by a few ulps of the largest coefficient
    pdf = _to_pdf(pieces, list(cls.continuous) + ([XEXP] if gamma in exp else []))
    mass = sum(integrate_piece(pc.zone, pc.poly) for pc in pdf.pieces)
    mu = const * mass
    if not mass > 0.0 or not mu > 0.0:
        return 0.0, None
    src = OffspringSource(cls, gamma, pdf.scale(1.0 / mass), tuple(sorted(derived.items())),
                          residual, gval, mu)
    return mu, src


def successor(stpn: Stpn, source: OffspringSource, piece_cap: int = 10 ** 4) -> StochasticStateClass:
    """Class reached after ``source.gamma`` fires."""
    cls = source.cls
    gamma = source.gamma
    g = stpn.transition_index(gamma)
    pieces: Pieces = [(pc.zone, pc.poly) for pc in source.pdf.pieces]
    derived = dict(source.derived)
    derived.pop(gamma, None)
    anchor, c = source.gamma_value
    # A: make the firing time the new reference
    if anchor is not None:
        pieces = _swap(pieces, anchor)
        nd = {}
        for k, d in derived.items():
            if d.anchor == anchor:
                nd[k] = Derived(None, d.offset)
            elif d.anchor is None:
                nd[k] = Derived(OLD, d.offset)
            else:
                nd[k] = d
        if anchor != gamma and anchor != XEXP:
            nd[anchor] = Derived(None, 0.0)
        derived = nd
    # B: constant part of the firing time
    if c != 0.0:
        pieces = _shift(pieces, c)
        derived = {k: Derived(None, d.offset - c) if d.anchor is None else d for k, d in derived.items()}
    # C: the old reference either carries dependents or is integrated out
    if anchor is not None:
        pieces, derived = _release(pieces, derived, OLD)
    out = stpn.fire_marking(cls.marking, g)
    keep = {stpn.transitions[u].name for u in out.persistent} | {AGE}
    # D: drop disabled, reset and fired timers
    derived = {k: d for k, d in derived.items() if k in keep}
    for v in list(pieces[0][0].variables if pieces else ()):
        if v not in keep:
            pieces, derived = _release(pieces, derived, v)
    exp = {k: r for k, r in source.exp_residual if k in keep}
    # E: newly enabled timers
    for u in out.newly_enabled:
        spec = stpn.transitions[u]
        _add_new(spec.name, spec.dist, derived, exp)
    pieces = _new_gen(stpn, out.newly_enabled, pieces)
    pieces = _merge(pieces)
    # stored age = true age - age_offset throughout the steps above
    age_offset = cls.age_offset
    if AGE in derived:
        d = derived[AGE]
        derived[AGE] = Derived(d.anchor, d.offset + age_offset)
        age_offset = 0.0
    elif pieces:
        pieces, derived, s = _recentre_age(pieces, derived)
        age_offset += s
    if len(pieces) > piece_cap:
        raise PieceCapError(f"class after {gamma} has {len(pieces)} pieces (cap {piece_cap}); "
                            "use a smaller expansion depth")
    variables = pieces[0][0].variables if pieces else ()
    order = _canonical_order(stpn, variables)
    return StochasticStateClass(out.marking, _to_pdf(pieces, order), tuple(sorted(derived.items())),
                                tuple(sorted(exp.items(), key=lambda kv: stpn.transition_index(kv[0]))),
                                cls.rho * source.mu, age_offset)


def _recentre_age(pieces: Pieces, derived: dict[str, Derived]) -> tuple[Pieces, dict[str, Derived], float]:
    """Shift the stored age so its support is centred on 0."""
    lo = min(z.marginal_bounds(AGE)[0] for z, _ in pieces)
    hi = max(z.marginal_bounds(AGE)[1] for z, _ in pieces)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return pieces, derived, 0.0
    s = 0.5 * (lo + hi)
    if s == 0.0:
        return pieces, derived, 0.0
    out = [_aligned(offset_variable(z, AGE, -s), substitute(p, AGE, {AGE: 1.0, None: s})) for z, p in pieces]
    nd = {k: Derived(AGE, d.offset + s) if d.anchor == AGE else d for k, d in derived.items()}
    return out, nd, s


def _release(pieces: Pieces, derived: dict[str, Derived], v: str) -> tuple[Pieces, dict[str, Derived]]:
    """Remove continuous ``v``: hand it over to a dependent timer if any,
    otherwise integrate it out."""
    deps = [k for k, d in derived.items() if d.anchor == v]
    if not deps:
        return _marginalize(pieces, v), derived
    w = AGE if AGE in deps else sorted(deps)[0]
    cw = derived[w].offset
    pieces = _promote(pieces, v, w, cw)
    nd = {}
    for k, d in derived.items():
        if k == w:
            continue
        nd[k] = Derived(w, d.offset - cw) if d.anchor == v else d
    return pieces, nd


# ---------------------------------------------------------------------------
# rewards of classes that satisfy the target


def _integrate(pieces: Pieces) -> float:
    return sum(integrate_piece(z, p) for z, p in pieces)


def entry_probability(cls: StochasticStateClass, t: float) -> float:
    """Probability (relative to ``rho``) that the class is entered by ``t``."""
    aA, cA = cls.value(AGE)
    if aA is None:
        return 1.0 if -cA <= t + TIE_TOL else 0.0
    pieces = _restrict([(p.zone, p.poly) for p in cls.pdf.pieces], [(REF, aA, cA + t)])
    return _integrate(pieces)


def det_target_weight(cls: StochasticStateClass, t: float, mode: str) -> float:
    """Reward mass of a target class at horizon ``t``.

    ``within``: probability the class is entered by ``t``.  ``at``: probability
    it is entered by ``t`` and still occupied at ``t``.
    """
    if mode == "within":
        return cls.rho * entry_probability(cls, t)
    if mode != "at":
        raise ValueError(f"unknown mode {mode!r}")
    aA, cA = cls.value(AGE)
    constraints = []
    if aA is None:
        if -cA > t + TIE_TOL:
            return 0.0
    else:
        constraints.append((REF, aA, cA + t))
    for v in cls.timers:
        if v in cls.exp_map:
            continue
        ai, ci = cls.value(v)
        if ai == aA:
            if not ci - cA - t > TIE_TOL:
                return 0.0
        else:
            constraints.append((aA or REF, ai or REF, ci - cA - t))
    pieces = _restrict([(p.zone, p.poly) for p in cls.pdf.pieces], constraints)
    lam = cls.lambda_agg
    const = 1.0
    if lam > 0:
        const = math.exp(-lam * (t + cA))
        if aA is not None:
            pieces = _times(pieces, Expolynomial.monomial(aA, 0, lam))
    return cls.rho * const * _integrate(pieces)


# ---------------------------------------------------------------------------
# transient tree


@dataclass
class TreeNode:
    id: int
    cls: StochasticStateClass
    depth: int
    parent: int
    via: str | None
    mu: float
    sc: StateClass | None
    status: str = "expanded"
    target: bool = False


@dataclass
class TransientTree:
    stpn: Stpn
    target: MarkingPredicate
    mode: str
    depth: float
    nodes: list[TreeNode] = field(default_factory=list)
    sources: list[OffspringSource] = field(default_factory=list)
    det_nodes: list[int] = field(default_factory=list)
    pruned_mass: float = 0.0
    horizon_mass: float = 0.0
    mu_edges: list[tuple[int, str, float, str]] = field(default_factory=list)

    @property
    def source_weight(self) -> float:
        return sum(s.weight for s in self.sources)

    def det_weights(self, times: Sequence[float]) -> np.ndarray:
        """Per det-target node, the reward mass at each horizon."""
        out = np.zeros((len(self.det_nodes), len(times)))
        for i, n in enumerate(self.det_nodes):
            cls = self.nodes[n].cls
            for j, t in enumerate(times):
                out[i, j] = det_target_weight(cls, t, self.mode)
        return out

    def frontier_mass(self) -> float:
        """Sources + target leaves + pruned branches (``within`` accounting)."""
        det = sum(self.nodes[n].cls.rho for n in self.det_nodes if self.nodes[n].status == "target")
        return self.source_weight + det + self.pruned_mass + self.horizon_mass

    def to_json(self) -> dict:
        st = self.stpn
        return {
            "mode": self.mode,
            "depth": None if math.isinf(self.depth) else int(self.depth),
            "nodes": [{"id": n.id, "parent": n.parent, "via": n.via, "mu": n.mu, "rho": n.cls.rho,
                       "depth": n.depth, "status": n.status, "marking": st.marking_dict(n.cls.marking),
                       "pieces": len(n.cls.pdf.pieces)} for n in self.nodes],
            "edges": [{"from": a, "transition": g, "mu": mu, "kind": k} for a, g, mu, k in self.mu_edges],
            "sources": [{"node": s.node, "transition": s.gamma, "weight": s.weight} for s in self.sources],
            "pruned_mass": self.pruned_mass,
        }


def expand_tree(stpn: Stpn, target: MarkingPredicate, depth: float, graph: ScGraph | None = None,
                mode: str = "within", piece_cap: int = 10 ** 4, horizon: float | None = None) -> TransientTree:
    """Breadth-first expansion up to ``depth`` firings (``math.inf`` for the
    complete tree).

    Target classes are leaves under ``within``; under ``at`` they are also
    expanded, since the target can be left again.  Firings leading to classes
    that cannot reach the target are pruned; at the depth bound every
    viable firing becomes an offspring source.  With ``horizon`` set, classes
    that surely start after it are cut off as they carry no reward.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if mode not in ("at", "within"):
        raise ValueError(f"unknown mode {mode!r}")
    tree = TransientTree(stpn, target, mode, depth)
    root_sc = initial_sc(stpn) if graph is not None else None

    def viable(sc: StateClass | None) -> bool:
        if graph is None or sc is None:
            return True
        i = graph.lookup(sc)
        return i is None or math.isfinite(graph.distance[i])

    root = TreeNode(0, initial_class(stpn), 0, -1, None, 1.0, root_sc)
    tree.nodes.append(root)
    if not viable(root_sc):
        root.status = "pruned"
        tree.pruned_mass = 1.0
        return tree
    queue = deque([root])
    while queue:
        node = queue.popleft()
        cls = node.cls
        if horizon is not None and entry_probability(cls, horizon) <= 0.0:
            node.status = "horizon"
            tree.horizon_mass += cls.rho
            continue
        if stpn.satisfies(cls.marking, target):
            node.target = True
            tree.det_nodes.append(node.id)
            if mode == "within":
                node.status = "target"
                continue
        timers = cls.timers
        if not timers:
            node.status = "dead"
            if not node.target:
                tree.pruned_mass += cls.rho
            continue
        order = sorted(timers, key=stpn.transition_index)
        for gamma in order:
            mu, src = condition_on_firing(stpn, cls, gamma)
            if src is None:
                tree.mu_edges.append((node.id, gamma, 0.0, "null"))
                continue
            sc = successor_sc(stpn, node.sc, gamma) if node.sc is not None else None
            if not viable(sc):
                tree.pruned_mass += cls.rho * mu
                tree.mu_edges.append((node.id, gamma, mu, "pruned"))
                continue
            if node.depth >= depth:
                tree.sources.append(OffspringSource(**{**src.__dict__, "node": node.id}))
                tree.mu_edges.append((node.id, gamma, mu, "source"))
                continue
            child_cls = successor(stpn, src, piece_cap)
            child = TreeNode(len(tree.nodes), child_cls, node.depth + 1, node.id, gamma, mu, sc)
            tree.nodes.append(child)
            tree.mu_edges.append((node.id, gamma, mu, "child"))
            queue.append(child)
        if node.depth >= depth:
            node.status = "frontier"
    return tree
