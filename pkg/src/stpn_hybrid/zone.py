"""Difference bound matrices over timer variables.

A zone over variables ``v1..vn`` is stored as an ``(n+1) x (n+1)`` matrix
``b`` where index 0 is the reference variable ``*`` (always 0) and
``b[i, j]`` bounds ``x_i - x_j <= b[i, j]``.  Only non-strict bounds are
represented.  Functions returning a zone return ``None`` when the constraint
system has no solution.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

REF = "*"
INF = math.inf
EPS = 1e-9
MAX_TIMERS = 32


class ZoneError(ValueError):
    pass


class DbmZone:
    """Immutable difference-bound constraint system.

    ``variables`` excludes the reference; ``bounds`` includes it at index 0.
    Instances built through :func:`canonicalize` (or any operation in this
    module) are in closed normal form.
    """

    __slots__ = ("variables", "bounds", "_index")

    def __init__(self, variables: Sequence[str], bounds: np.ndarray):
        variables = tuple(variables)
        n = len(variables) + 1
        bounds = np.asarray(bounds, dtype=float)
        if bounds.shape != (n, n):
            raise ZoneError(f"bounds must be {n}x{n}, got {bounds.shape}")
        if len(set(variables)) != len(variables) or REF in variables:
            raise ZoneError(f"bad variable list {variables}")
        bounds = bounds.copy()
        bounds.setflags(write=False)
        self.variables = variables
        self.bounds = bounds
        self._index = {v: i + 1 for i, v in enumerate(variables)}

    # -- construction -----------------------------------------------------

    @classmethod
    def unconstrained(cls, variables: Sequence[str]) -> "DbmZone":
        n = len(variables) + 1
        b = np.full((n, n), INF)
        np.fill_diagonal(b, 0.0)
        return cls(variables, b)

    @classmethod
    def box(cls, intervals: dict[str, tuple[float, float]]) -> "DbmZone":
        """Product of intervals ``lo <= x <= hi``, already canonical."""
        names = list(intervals)
        z = cls.unconstrained(names)
        b = z.bounds.copy()
        for name, (lo, hi) in intervals.items():
            i = z._index[name]
            b[i, 0] = hi
            b[0, i] = -lo
        out = canonicalize(DbmZone(names, b))
        if out is None:
            raise ZoneError(f"empty box {intervals}")
        return out

    # -- access -----------------------------------------------------------

    def index(self, var: str) -> int:
        if var == REF:
            return 0
        try:
            return self._index[var]
        except KeyError:
            raise ZoneError(f"unknown zone variable {var!r}") from None

    def bound(self, i: str, j: str) -> float:
        """Upper bound of ``x_i - x_j``."""
        return float(self.bounds[self.index(i), self.index(j)])

    @property
    def dimension(self) -> int:
        return len(self.variables)

    def contains(self, point: Sequence[float], tol: float = 1e-12) -> bool:
        x = np.concatenate(([0.0], np.asarray(point, dtype=float)))
        diff = x[:, None] - x[None, :]
        return bool(np.all(diff <= self.bounds + tol))

    def is_full_dimensional(self, eps: float = EPS) -> bool:
        """True iff the zone has positive Lebesgue measure."""
        s = self.bounds + self.bounds.T
        np.fill_diagonal(s, INF)
        return bool(np.all(s > eps))

    def key(self, digits: int = 9) -> tuple:
        """Hashable canonical form, rounded to absorb float noise."""
        return (self.variables, tuple(round(float(v), digits) if math.isfinite(v) else v
                                      for v in self.bounds.ravel()))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DbmZone):
            return NotImplemented
        return self.variables == other.variables and np.array_equal(self.bounds, other.bounds)

    def __hash__(self) -> int:
        return hash(self.key())

    def __repr__(self) -> str:
        parts = []
        for v in self.variables:
            lo, hi = marginal_bounds(self, v)
            parts.append(f"{v}∈[{lo:g},{hi:g}]")
        return f"DbmZone({', '.join(parts)})"

    # -- convenience wrappers ---------------------------------------------

    def intersect(self, i: str, j: str, b: float) -> "DbmZone | None":
        return intersect(self, i, j, b)

    def intersect_all(self, constraints: Iterable[tuple[str, str, float]]) -> "DbmZone | None":
        return intersect_all(self, constraints)

    def eliminate(self, var: str) -> "DbmZone":
        return eliminate(self, var)

    def marginal_bounds(self, var: str) -> tuple[float, float]:
        return marginal_bounds(self, var)


def _closure(b: np.ndarray) -> np.ndarray | None:
    b = b.copy()
    n = b.shape[0]
    for k in range(n):
        np.minimum(b, b[:, k, None] + b[None, k, :], out=b)
    d = np.diagonal(b)
    if np.any(d < -EPS):
        return None
    np.fill_diagonal(b, 0.0)
    return b


def canonicalize(z: DbmZone) -> DbmZone | None:
    """All-pairs shortest-path normal form; ``None`` on a negative cycle."""
    if z.dimension > MAX_TIMERS:
        raise ZoneError(f"zone has {z.dimension} timers, more than the cap of {MAX_TIMERS}")
    b = _closure(z.bounds)
    if b is None:
        return None
    return DbmZone(z.variables, b)


def _tighten(z: DbmZone, i: int, j: int, c: float) -> DbmZone | None:
    # incremental closure for one new edge, O(n^2)
    if c >= z.bounds[i, j]:
        return z
    if c + z.bounds[j, i] < -EPS:
        return None
    b = z.bounds
    via = np.minimum(b[:, i, None] + c + b[None, j, :], INF)
    nb = np.minimum(b, via)
    np.fill_diagonal(nb, 0.0)
    return DbmZone(z.variables, nb)


def intersect(z: DbmZone, i: str, j: str, b: float) -> DbmZone | None:
    """Add ``x_i - x_j <= b`` and re-close; ``None`` if the result is empty."""
    return _tighten(z, z.index(i), z.index(j), float(b))


def intersect_all(z: DbmZone, constraints: Iterable[tuple[str, str, float]]) -> DbmZone | None:
    out: DbmZone | None = z
    for i, j, b in constraints:
        out = intersect(out, i, j, b)
        if out is None:
            return None
    return out


def eliminate(z: DbmZone, var: str) -> DbmZone:
    """Exact projection removing ``var`` (zone assumed canonical)."""
    k = z.index(var)
    if k == 0:
        raise ZoneError("cannot eliminate the reference variable")
    keep = [i for i in range(z.bounds.shape[0]) if i != k]
    names = [v for v in z.variables if v != var]
    return DbmZone(names, z.bounds[np.ix_(keep, keep)])


def marginal_bounds(z: DbmZone, var: str) -> tuple[float, float]:
    i = z.index(var)
    return -float(z.bounds[0, i]) + 0.0, float(z.bounds[i, 0])


def add_variable(z: DbmZone, var: str, lo: float, hi: float) -> DbmZone:
    """Append an independent variable with support ``[lo, hi]``."""
    if lo > hi + EPS:
        raise ZoneError(f"empty interval for {var}: [{lo}, {hi}]")
    n = z.bounds.shape[0]
    b = np.empty((n + 1, n + 1))
    b[:n, :n] = z.bounds
    # an independent variable only relates to the others through the reference
    b[n, :n] = hi + z.bounds[0, :]
    b[:n, n] = z.bounds[:, 0] - lo
    b[n, n] = 0.0
    return DbmZone(z.variables + (var,), b)


def rename(z: DbmZone, mapping: dict[str, str]) -> DbmZone:
    return DbmZone([mapping.get(v, v) for v in z.variables], z.bounds)


def reorder(z: DbmZone, variables: Sequence[str]) -> DbmZone:
    if sorted(variables) != sorted(z.variables):
        raise ZoneError(f"reorder needs a permutation of {z.variables}, got {variables}")
    idx = [0] + [z.index(v) for v in variables]
    return DbmZone(variables, z.bounds[np.ix_(idx, idx)])


def swap_reference(z: DbmZone, var: str, new_name: str) -> DbmZone:
    """Re-express the zone relative to ``var``.

    Every variable ``y`` becomes ``y - x_var``; ``var`` takes the role of the
    reference and the old reference becomes the variable ``new_name`` whose
    value is ``-x_var``.
    """
    k = z.index(var)
    n = z.bounds.shape[0]
    perm = list(range(n))
    perm[0], perm[k] = k, 0
    names = list(z.variables)
    names[k - 1] = new_name
    return DbmZone(names, z.bounds[np.ix_(perm, perm)])


def offset_variable(z: DbmZone, var: str, c: float) -> DbmZone:
    """Substitute ``y = x_var + c`` (the variable keeps its name)."""
    i = z.index(var)
    b = z.bounds.copy()
    b[i, :] += c
    b[:, i] -= c
    b[i, i] = 0.0
    return DbmZone(z.variables, b)


def shift_all(z: DbmZone, c: float) -> DbmZone:
    """Every variable decreases by the constant ``c``."""
    b = z.bounds.copy()
    b[1:, 0] -= c
    b[0, 1:] += c
    return DbmZone(z.variables, b)


def shift_after_firing(z: DbmZone, fired: str) -> DbmZone:
    """Condition on ``fired`` being minimal, shift survivors by it and drop it.

    The age variable (if any) is shifted like every other timer; callers that
    do not want a variable in the competition must remove it beforehand.
    """
    constraints = [(fired, v, 0.0) for v in z.variables if v != fired and v != "age"]
    cond = intersect_all(z, constraints)
    if cond is None:
        raise ZoneError(f"{fired!r} cannot fire first in this zone")
    swapped = swap_reference(cond, fired, "__old_ref")
    return eliminate(swapped, "__old_ref")


def intersection(a: DbmZone, b: DbmZone) -> DbmZone | None:
    """Intersection of two zones over the same variables (in any order)."""
    if set(a.variables) != set(b.variables):
        raise ZoneError("zones must share their variables")
    if a.variables != b.variables:
        b = reorder(b, a.variables)
    return canonicalize(DbmZone(a.variables, np.minimum(a.bounds, b.bounds)))


def constraints_of(z: DbmZone) -> list[tuple[str, str, float]]:
    """Finite off-diagonal bounds as ``(i, j, b)`` triples."""
    names = (REF,) + z.variables
    n = len(names)
    out = []
    for i in range(n):
        for j in range(n):
            if i != j and math.isfinite(z.bounds[i, j]):
                out.append((names[i], names[j], float(z.bounds[i, j])))
    return out
