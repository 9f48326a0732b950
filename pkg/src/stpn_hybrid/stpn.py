"""Stochastic time Petri nets: model, JSON format and a reference simulator.

The reference simulator here is plain Python and favours clarity; batch
simulation for estimation goes through :mod:`stpn_hybrid.simkernel`, which
compiles the same semantics.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import jsonschema
import numpy as np
from scipy.optimize import brentq

from .expoly import Bound, Expolynomial, PiecewisePdf, evaluate, integrate_variable
from .zone import DbmZone

GEN_KINDS = ("UNIFORM", "ERLANG", "EXPOLY")
KINDS = ("IMM", "DET", "EXP") + GEN_KINDS
OPS = {
    "==": lambda a, b: a == b,
    "<=": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
}

Marking = tuple[int, ...]


class ModelError(ValueError):
    """Invalid model; the message starts with a JSON pointer when available."""


class SimulationError(RuntimeError):
    code = "SIM"


class ZenoError(SimulationError):
    code = "ZENO"


# ---------------------------------------------------------------------------
# distributions


@dataclass(frozen=True)
class DistributionSpec:
    """Firing-time distribution.

    ``params`` by kind: IMM ``()``, DET ``(value,)``, EXP ``(rate,)``,
    UNIFORM ``(a, b)``, ERLANG ``(k, rate)``, EXPOLY a tuple of pieces
    ``(lo, hi, ((c, a, rate), ...))`` on disjoint intervals.
    """

    kind: str
    params: tuple = ()

    def __post_init__(self):
        k, p = self.kind, self.params
        if k not in KINDS:
            raise ModelError(f"unknown distribution kind {k!r}")
        if k == "IMM" and p:
            raise ModelError("IMM takes no parameters")
        if k == "DET" and not (len(p) == 1 and 0 <= p[0] < math.inf):
            raise ModelError(f"DET value must be finite and >= 0, got {p}")
        if k == "EXP" and not (len(p) == 1 and 0 < p[0] < math.inf):
            raise ModelError(f"EXP rate must be positive, got {p}")
        if k == "UNIFORM" and not (len(p) == 2 and 0 <= p[0] < p[1] < math.inf):
            raise ModelError(f"UNIFORM needs 0 <= a < b, got {p}")
        if k == "ERLANG" and not (len(p) == 2 and int(p[0]) == p[0] and p[0] >= 1 and p[1] > 0):
            raise ModelError(f"ERLANG needs integer k >= 1 and rate > 0, got {p}")
        if k == "EXPOLY":
            self._check_expoly()

    def _check_expoly(self):
        pieces = self.params
        if not pieces:
            raise ModelError("EXPOLY needs at least one piece")
        prev = -math.inf
        for lo, hi, terms in pieces:
            if not (0 <= lo < hi) or lo < prev - 1e-12:
                raise ModelError(f"EXPOLY pieces must be ordered, disjoint and non-negative: {lo}, {hi}")
            prev = hi
            for c, a, r in terms:
                if int(a) != a or a < 0:
                    raise ModelError("EXPOLY exponents must be natural numbers")
        total = sum(self._piece_mass(i) for i in range(len(pieces)))
        if not math.isclose(total, 1.0, rel_tol=1e-6):
            raise ModelError(f"EXPOLY density integrates to {total}, not 1")

    # -- classification -------------------------------------------------

    @property
    def is_gen(self) -> bool:
        return self.kind in GEN_KINDS

    @property
    def is_derived(self) -> bool:
        return self.kind in ("IMM", "DET")

    @property
    def eft(self) -> float:
        k, p = self.kind, self.params
        if k in ("IMM", "EXP", "ERLANG"):
            return 0.0
        if k in ("DET", "UNIFORM"):
            return float(p[0])
        return float(p[0][0])

    @property
    def lft(self) -> float:
        k, p = self.kind, self.params
        if k == "IMM":
            return 0.0
        if k == "DET":
            return float(p[0])
        if k == "UNIFORM":
            return float(p[1])
        if k == "EXPOLY":
            return float(p[-1][1])
        return math.inf

    @property
    def value(self) -> float:
        """Deterministic firing time of IMM/DET."""
        return 0.0 if self.kind == "IMM" else float(self.params[0])

    @property
    def rate(self) -> float:
        return float(self.params[0])

    # -- densities ------------------------------------------------------

    def _poly_pieces(self, var: str) -> list[tuple[float, float, Expolynomial]]:
        k, p = self.kind, self.params
        if k == "UNIFORM":
            return [(p[0], p[1], Expolynomial.constant(1.0 / (p[1] - p[0]), (var,)))]
        if k == "ERLANG":
            n, lam = int(p[0]), float(p[1])
            c = lam ** n / math.factorial(n - 1)
            return [(0.0, math.inf, Expolynomial.monomial(var, n - 1, lam, c))]
        if k == "EXP":
            return [(0.0, math.inf, Expolynomial.monomial(var, 0, p[0], p[0]))]
        if k == "EXPOLY":
            return [(lo, hi, Expolynomial((var,), {((int(a),), (float(r),)): float(c) for c, a, r in terms}))
                    for lo, hi, terms in p]
        raise ModelError(f"{k} has no density")

    def density(self, var: str) -> PiecewisePdf:
        """The density as a one-variable piecewise expolynomial."""
        pieces = [(DbmZone.box({var: (lo, hi)}), f) for lo, hi, f in self._poly_pieces(var)]
        return PiecewisePdf.from_pieces((var,), pieces)

    def _piece_mass(self, i: int) -> float:
        lo, hi, f = self._poly_pieces("x")[i]
        return integrate_variable(f, "x", Bound.const(lo), Bound.const(hi)).constant_value()

    def pdf(self, x: float) -> float:
        k, p = self.kind, self.params
        if k == "UNIFORM":
            return 1.0 / (p[1] - p[0]) if p[0] <= x <= p[1] else 0.0
        if k == "EXP":
            return p[0] * math.exp(-p[0] * x) if x >= 0 else 0.0
        if k in ("ERLANG", "EXPOLY"):
            for lo, hi, f in self._poly_pieces("x"):
                if lo <= x <= hi:
                    return evaluate(f, [x])
            return 0.0
        raise ModelError(f"{k} has no density")

    def cdf(self, x: float) -> float:
        k, p = self.kind, self.params
        if k in ("IMM", "DET"):
            return 1.0 if x >= self.value else 0.0
        if k == "UNIFORM":
            return min(1.0, max(0.0, (x - p[0]) / (p[1] - p[0])))
        if k == "EXP":
            return 1.0 - math.exp(-p[0] * x) if x > 0 else 0.0
        total = 0.0
        for lo, hi, f in self._poly_pieces("x"):
            if x <= lo:
                break
            up = min(x, hi)
            total += integrate_variable(f, "x", Bound.const(lo), Bound.const(up)).constant_value()
        return min(1.0, max(0.0, total))

    def sample(self, rng: np.random.Generator) -> float:
        """Inverse-transform sample."""
        k, p = self.kind, self.params
        if k in ("IMM", "DET"):
            return self.value
        if k == "EXP":
            return -math.log1p(-rng.random()) / p[0]
        if k == "UNIFORM":
            return p[0] + (p[1] - p[0]) * rng.random()
        if k == "ERLANG":
            return sum(-math.log1p(-rng.random()) for _ in range(int(p[0]))) / p[1]
        u = rng.random()
        lo, hi = self.eft, self.lft
        if math.isinf(hi):
            hi = max(1.0, lo + 1.0)
            while self.cdf(hi) < u:
                hi *= 2.0
        return brentq(lambda x: self.cdf(x) - u, lo, hi, xtol=1e-13)

    def to_json(self) -> dict:
        k, p = self.kind, self.params
        if k == "IMM":
            return {"kind": k, "params": {}}
        if k == "DET":
            return {"kind": k, "params": {"value": p[0]}}
        if k == "EXP":
            return {"kind": k, "params": {"rate": p[0]}}
        if k == "UNIFORM":
            return {"kind": k, "params": {"a": p[0], "b": p[1]}}
        if k == "ERLANG":
            return {"kind": k, "params": {"k": int(p[0]), "rate": p[1]}}
        return {"kind": k, "params": {"pieces": [
            {"lo": lo, "hi": hi, "terms": [list(t) for t in terms]} for lo, hi, terms in p]}}

    def __str__(self) -> str:
        return f"{self.kind}{tuple(self.params) if self.kind != 'EXPOLY' else ''}"


def imm() -> DistributionSpec:
    return DistributionSpec("IMM")


def det(v: float) -> DistributionSpec:
    return DistributionSpec("DET", (float(v),))


def exp(rate: float) -> DistributionSpec:
    return DistributionSpec("EXP", (float(rate),))


def uniform(a: float, b: float) -> DistributionSpec:
    return DistributionSpec("UNIFORM", (float(a), float(b)))


def erlang(k: int, rate: float) -> DistributionSpec:
    return DistributionSpec("ERLANG", (int(k), float(rate)))


def sample_distribution(spec: DistributionSpec, rng: np.random.Generator) -> float:
    return spec.sample(rng)


# ---------------------------------------------------------------------------
# net structure


@dataclass(frozen=True)
class TransitionSpec:
    name: str
    dist: DistributionSpec
    pre: tuple[str, ...] = ()
    post: tuple[str, ...] = ()
    inhibit: tuple[str, ...] = ()
    enabling: tuple[tuple[str, str, int], ...] = ()
    update: tuple[tuple[str, str, int], ...] = ()
    reset: tuple[str, ...] = ()
    weight: float = 1.0
    priority: int = 0

    def __post_init__(self):
        if not self.weight > 0:
            raise ModelError(f"transition {self.name}: weight must be positive")
        for _, op, _v in self.enabling:
            if op not in OPS:
                raise ModelError(f"transition {self.name}: unknown comparator {op!r}")
        for _, how, _v in self.update:
            if how not in ("set", "add"):
                raise ModelError(f"transition {self.name}: update must be set or add")


@dataclass(frozen=True)
class MarkingPredicate:
    """Conjunction of ``place op value`` comparisons."""

    clauses: tuple[tuple[str, str, int], ...]

    @classmethod
    def parse(cls, text: str) -> "MarkingPredicate":
        clauses = []
        for part in re.split(r"\s*(?:&&|,|\band\b)\s*", text.strip()):
            if not part:
                continue
            m = re.fullmatch(r"\s*([A-Za-z_][\w.]*)\s*(==|<=|>=|<|>)\s*(-?\d+)\s*", part)
            if not m:
                raise ModelError(f"cannot parse target clause {part!r}")
            clauses.append((m.group(1), m.group(2), int(m.group(3))))
        if not clauses:
            raise ModelError("empty target predicate")
        return cls(tuple(clauses))

    def __str__(self) -> str:
        return " && ".join(f"{p}{op}{v}" for p, op, v in self.clauses)


@dataclass(frozen=True)
class FiringOutcome:
    marking: Marking
    persistent: tuple[int, ...]
    newly_enabled: tuple[int, ...]


class Stpn:
    """Immutable stochastic time Petri net."""

    def __init__(self, places: Sequence[str], transitions: Sequence[TransitionSpec],
                 initial_marking: Mapping[str, int], name: str = "stpn"):
        self.name = name
        self.places = tuple(places)
        self.transitions = tuple(transitions)
        if len(set(self.places)) != len(self.places):
            raise ModelError("/places: duplicate place names")
        names = [t.name for t in self.transitions]
        if len(set(names)) != len(names):
            raise ModelError("/transitions: duplicate transition names")
        self._pidx = {p: i for i, p in enumerate(self.places)}
        self._tidx = {t: i for i, t in enumerate(names)}
        for ti, t in enumerate(self.transitions):
            base = f"/transitions/{ti}"
            for key in ("pre", "post", "inhibit"):
                for j, p in enumerate(getattr(t, key)):
                    if p not in self._pidx:
                        raise ModelError(f"{base}/{key}/{j}: undeclared place {p!r}")
            for j, (p, _, _) in enumerate(t.enabling):
                if p not in self._pidx:
                    raise ModelError(f"{base}/enabling/{j}/place: undeclared place {p!r}")
            for j, (p, _, _) in enumerate(t.update):
                if p not in self._pidx:
                    raise ModelError(f"{base}/update/{j}/place: undeclared place {p!r}")
            for j, r in enumerate(t.reset):
                if r not in self._tidx:
                    raise ModelError(f"{base}/reset/{j}: undeclared transition {r!r}")
        m0 = [0] * len(self.places)
        for p, v in initial_marking.items():
            if p not in self._pidx:
                raise ModelError(f"/initial_marking/{p}: undeclared place")
            if int(v) != v or v < 0:
                raise ModelError(f"/initial_marking/{p}: token count must be a natural number")
            m0[self._pidx[p]] = int(v)
        self.initial_marking: Marking = tuple(m0)
        # index-based views used on hot paths
        self._pre = [tuple(self._pidx[p] for p in t.pre) for t in self.transitions]
        self._post = [tuple(self._pidx[p] for p in t.post) for t in self.transitions]
        self._inh = [tuple(self._pidx[p] for p in t.inhibit) for t in self.transitions]
        self._en = [tuple((self._pidx[p], OPS[op], v) for p, op, v in t.enabling) for t in self.transitions]
        self._upd = [tuple((self._pidx[p], how, v) for p, how, v in t.update) for t in self.transitions]
        self._reset = [frozenset(self._tidx[r] for r in t.reset) for t in self.transitions]

    # -- lookup -----------------------------------------------------------

    def place_index(self, p: str) -> int:
        return self._pidx[p]

    def transition_index(self, t: str) -> int:
        try:
            return self._tidx[t]
        except KeyError:
            raise ModelError(f"unknown transition {t!r}") from None

    def transition(self, t: str | int) -> TransitionSpec:
        return self.transitions[t if isinstance(t, int) else self.transition_index(t)]

    def marking(self, tokens: Mapping[str, int] | None = None) -> Marking:
        m = [0] * len(self.places)
        for p, v in (tokens or {}).items():
            m[self._pidx[p]] = int(v)
        return tuple(m)

    def marking_dict(self, m: Marking) -> dict[str, int]:
        return {p: v for p, v in zip(self.places, m) if v}

    def marking_str(self, m: Marking) -> str:
        return ",".join(f"{p}={v}" for p, v in zip(self.places, m) if v) or "{}"

    def marking_hash(self, m: Marking) -> str:
        return hashlib.sha1(self.marking_str(m).encode()).hexdigest()[:12]

    # -- semantics --------------------------------------------------------

    def is_enabled(self, m: Marking, t: int) -> bool:
        for p in self._pre[t]:
            if m[p] < 1:
                return False
        for p in self._inh[t]:
            if m[p] > 0:
                return False
        for p, op, v in self._en[t]:
            if not op(m[p], v):
                return False
        return True

    def enabled_indices(self, m: Marking) -> tuple[int, ...]:
        return tuple(t for t in range(len(self.transitions)) if self.is_enabled(m, t))

    def fire_marking(self, m: Marking, t: int) -> FiringOutcome:
        """Token game for one firing with intermediate-marking persistence.

        A transition other than ``t`` stays persistent iff it is enabled
        before the firing, after token removal and in the final marking, and
        ``t`` does not reset it.
        """
        if not self.is_enabled(m, t):
            raise SimulationError(f"transition {self.transitions[t].name} is not enabled")
        tmp = list(m)
        for p in self._pre[t]:
            tmp[p] -= 1
        inter = tuple(tmp)
        for p in self._post[t]:
            tmp[p] += 1
        for p, how, v in self._upd[t]:
            tmp[p] = v if how == "set" else tmp[p] + v
            if tmp[p] < 0:
                raise SimulationError(f"update of {self.transitions[t].name} drives {self.places[p]} negative")
        new = tuple(tmp)
        before = self.enabled_indices(m)
        after = self.enabled_indices(new)
        reset = self._reset[t]
        persistent = tuple(u for u in after if u != t and u in before and u not in reset
                           and self.is_enabled(inter, u))
        pset = set(persistent)
        newly = tuple(u for u in after if u not in pset)
        return FiringOutcome(new, persistent, newly)

    def satisfies(self, m: Marking, pred: MarkingPredicate) -> bool:
        for p, op, v in pred.clauses:
            if p not in self._pidx:
                raise ModelError(f"target refers to undeclared place {p!r}")
            if not OPS[op](m[self._pidx[p]], v):
                return False
        return True

    # -- serialisation ----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "places": list(self.places),
            "transitions": [{
                "name": t.name,
                "pre": list(t.pre),
                "post": list(t.post),
                "inhibit": list(t.inhibit),
                "enabling": [{"place": p, "op": op, "value": v} for p, op, v in t.enabling],
                "update": [{"place": p, how: v} for p, how, v in t.update],
                "reset": list(t.reset),
                "dist": t.dist.to_json(),
                "weight": t.weight,
                "priority": t.priority,
            } for t in self.transitions],
            "initial_marking": {p: v for p, v in zip(self.places, self.initial_marking) if v},
        }

    def __repr__(self) -> str:
        return f"Stpn({self.name!r}, {len(self.places)} places, {len(self.transitions)} transitions)"


def enabled(stpn: Stpn, m: Marking | Mapping[str, int]) -> set[str]:
    if isinstance(m, Mapping):
        m = stpn.marking(m)
    return {stpn.transitions[t].name for t in stpn.enabled_indices(m)}


def default_target(stpn: Stpn) -> MarkingPredicate:
    if "Target" not in stpn.places:
        raise ModelError("model has no place named Target; pass an explicit target predicate")
    return MarkingPredicate((("Target", ">=", 1),))


# ---------------------------------------------------------------------------
# JSON model format

_NUM = {"type": "number"}
_NAT = {"type": "integer", "minimum": 0}
_NAMES = {"type": "array", "items": {"type": "string"}}

MODEL_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["places", "transitions", "initial_marking"],
    "properties": {
        "name": {"type": "string"},
        "places": {"type": "array", "items": {"type": "string", "minLength": 1}},
        "initial_marking": {"type": "object", "additionalProperties": _NAT},
        "transitions": {"type": "array", "items": {
            "type": "object",
            "required": ["name", "dist"],
            "additionalProperties": False,
            "properties": {
                "name": {"type": "string", "minLength": 1},
                "pre": _NAMES, "post": _NAMES, "inhibit": _NAMES, "reset": _NAMES,
                "enabling": {"type": "array", "items": {
                    "type": "object", "required": ["place", "op", "value"], "additionalProperties": False,
                    "properties": {"place": {"type": "string"},
                                   "op": {"enum": list(OPS)},
                                   "value": {"type": "integer"}}}},
                "update": {"type": "array", "items": {
                    "type": "object", "required": ["place"], "additionalProperties": False,
                    "properties": {"place": {"type": "string"}, "set": _NAT, "add": {"type": "integer"}},
                    "oneOf": [{"required": ["set"]}, {"required": ["add"]}]}},
                "dist": {"type": "object", "required": ["kind"], "additionalProperties": False,
                         "properties": {"kind": {"enum": list(KINDS)},
                                        "params": {"type": ["object", "array"]}}},
                "weight": {"type": "number", "exclusiveMinimum": 0},
                "priority": _NAT,
            }}},
    },
}

_PARAM_NAMES = {"IMM": (), "DET": ("value",), "EXP": ("rate",), "UNIFORM": ("a", "b"),
                "ERLANG": ("k", "rate")}


def _pointer(path: Iterable) -> str:
    return "/" + "/".join(str(p) for p in path)


def _dist_from_json(d: dict, where: str) -> DistributionSpec:
    kind = d["kind"]
    params = d.get("params", {})
    try:
        if kind == "EXPOLY":
            pieces = params["pieces"] if isinstance(params, dict) else params
            out = tuple((float(pc["lo"]), float(pc["hi"]),
                         tuple((float(c), int(a), float(r)) for c, a, r in pc["terms"]))
                        for pc in pieces)
            return DistributionSpec(kind, out)
        names = _PARAM_NAMES[kind]
        if isinstance(params, dict):
            missing = [n for n in names if n not in params]
            if missing:
                raise ModelError(f"{where}/params: missing {missing}")
            vals = tuple(params[n] for n in names)
        else:
            vals = tuple(params)
            if len(vals) != len(names):
                raise ModelError(f"{where}/params: {kind} takes {len(names)} parameters")
        return DistributionSpec(kind, tuple(float(v) if n != "k" else int(v) for n, v in zip(names, vals)))
    except ModelError as e:
        if str(e).startswith("/"):
            raise
        raise ModelError(f"{where}: {e}") from None
    except (KeyError, TypeError, ValueError) as e:
        raise ModelError(f"{where}/params: malformed parameters ({e})") from None


def stpn_from_json(doc: dict, name: str = "stpn") -> Stpn:
    validator = jsonschema.Draft7Validator(MODEL_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ModelError(f"{_pointer(e.absolute_path)}: {e.message}")
    transitions = []
    for i, t in enumerate(doc["transitions"]):
        where = f"/transitions/{i}"
        dist = _dist_from_json(t["dist"], f"{where}/dist")
        update = tuple((u["place"], "set" if "set" in u else "add", int(u.get("set", u.get("add"))))
                       for u in t.get("update", []))
        try:
            transitions.append(TransitionSpec(
                name=t["name"], dist=dist,
                pre=tuple(t.get("pre", [])), post=tuple(t.get("post", [])),
                inhibit=tuple(t.get("inhibit", [])),
                enabling=tuple((c["place"], c["op"], int(c["value"])) for c in t.get("enabling", [])),
                update=update, reset=tuple(t.get("reset", [])),
                weight=float(t.get("weight", 1.0)), priority=int(t.get("priority", 0))))
        except ModelError as e:
            raise ModelError(f"{where}: {e}") from None
    return Stpn(doc["places"], transitions, doc["initial_marking"], name=doc.get("name", name))


def load_json_model(path: str) -> Stpn:
    import os
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ModelError(f"/: malformed JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
    return stpn_from_json(doc, name=os.path.splitext(os.path.basename(path))[0])


# ---------------------------------------------------------------------------
# reference simulator


@dataclass
class SimState:
    """Single-owner simulation state: marking, model clock, and remaining
    time-to-fire of every enabled transition."""

    marking: Marking
    clock: float = 0.0
    pending: dict[int, float] = field(default_factory=dict)
    stream: int = 0

    def copy(self) -> "SimState":
        return SimState(self.marking, self.clock, dict(self.pending), self.stream)


def initial_state(stpn: Stpn, rng: np.random.Generator, stream: int = 0) -> SimState:
    m = stpn.initial_marking
    pend = {t: stpn.transitions[t].dist.sample(rng) for t in stpn.enabled_indices(m)}
    return SimState(m, 0.0, pend, stream)


def choose_next(stpn: Stpn, state: SimState, rng: np.random.Generator) -> int:
    """Minimum time-to-fire, then maximum priority, then a weighted switch."""
    if not state.pending:
        raise SimulationError("no enabled transition")
    tmin = min(state.pending.values())
    tol = 1e-12 * max(1.0, abs(tmin))
    tied = [t for t, v in state.pending.items() if v <= tmin + tol]
    if len(tied) == 1:
        return tied[0]
    top = max(stpn.transitions[t].priority for t in tied)
    tied = sorted(t for t in tied if stpn.transitions[t].priority == top)
    if len(tied) == 1:
        return tied[0]
    w = np.array([stpn.transitions[t].weight for t in tied])
    return tied[int(np.searchsorted(np.cumsum(w) / w.sum(), rng.random(), side="right"))]


def fire(stpn: Stpn, state: SimState, t: int | str, rng: np.random.Generator) -> SimState:
    """Fire ``t``, which must hold the minimal remaining time-to-fire."""
    if isinstance(t, str):
        t = stpn.transition_index(t)
    if t not in state.pending:
        raise SimulationError(f"transition {stpn.transitions[t].name} is not enabled")
    delta = state.pending[t]
    if delta > min(state.pending.values()) + 1e-12 * max(1.0, abs(delta)):
        raise SimulationError(f"transition {stpn.transitions[t].name} is not the next to fire")
    out = stpn.fire_marking(state.marking, t)
    pend = {u: state.pending[u] - delta for u in out.persistent}
    for u in out.newly_enabled:
        pend[u] = stpn.transitions[u].dist.sample(rng)
    return SimState(out.marking, state.clock + delta, pend, state.stream)


def run_transient(stpn: Stpn, init: SimState, horizon: float, target: MarkingPredicate,
                  mode: str, rng: np.random.Generator, zeno_cap: int = 10 ** 6) -> int:
    """One trajectory; 1 iff the target holds at ``horizon`` (``at``) or at
    some time up to ``horizon`` (``within``)."""
    if mode not in ("at", "within"):
        raise ValueError(f"mode must be 'at' or 'within', got {mode!r}")
    if horizon < init.clock:
        raise ValueError("horizon precedes the initial clock")
    state = init.copy()
    firings = 0
    while True:
        hit = stpn.satisfies(state.marking, target)
        if mode == "within" and hit:
            return 1
        nxt = state.clock + min(state.pending.values()) if state.pending else math.inf
        if nxt > horizon:
            return int(hit) if mode == "at" else 0
        firings += 1
        if firings > zeno_cap:
            raise ZenoError(f"more than {zeno_cap} firings before t={horizon}")
        state = fire(stpn, state, choose_next(stpn, state, rng), rng)
