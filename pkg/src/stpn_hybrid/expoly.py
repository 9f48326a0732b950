"""Multivariate expolynomials and their exact integration over DBM zones.

A term is ``c * prod_j x_j**a_j * exp(-l_j * x_j)``; an :class:`Expolynomial`
is a sum of terms over an ordered variable list.  A :class:`PiecewisePdf`
attaches one expolynomial to each DBM sub-zone of a partition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from typing import Iterable, Mapping, Sequence

import numpy as np

from .zone import EPS, REF, DbmZone, eliminate, intersect_all, intersection

Key = tuple[tuple[int, ...], tuple[float, ...]]


class ExpolyError(ValueError):
    pass


class NonIntegrableError(ExpolyError):
    pass


class DegenerateSupportError(ExpolyError):
    pass


def _snap(rate: float) -> float:
    r = round(float(rate), 12)
    if abs(r) < 1e-9:
        return 0.0
    return r + 0.0


@dataclass(frozen=True)
class ExpoTerm:
    coefficient: float
    exponents: tuple[int, ...]
    rates: tuple[float, ...]


@dataclass(frozen=True)
class Bound:
    """Integration limit ``x_var + offset``; ``var=None`` means a constant."""

    var: str | None
    offset: float

    @classmethod
    def const(cls, c: float) -> "Bound":
        return cls(None, float(c))

    @property
    def is_infinite(self) -> bool:
        return self.var is None and math.isinf(self.offset)


class _Accumulator:
    # exact (fsum) merge per key; drops sums that are pure cancellation noise
    __slots__ = ("parts",)

    def __init__(self):
        self.parts: dict[Key, list[float]] = {}

    def add(self, exps: tuple[int, ...], rates: tuple[float, ...], c: float) -> None:
        if c == 0.0:
            return
        self.parts.setdefault((exps, rates), []).append(c)

    def terms(self) -> dict[Key, float]:
        out = {}
        for k, cs in self.parts.items():
            c = cs[0] if len(cs) == 1 else math.fsum(cs)
            if c != 0.0 and abs(c) > 1e-14 * sum(map(abs, cs)):
                out[k] = c
        return out


class Expolynomial:
    __slots__ = ("variables", "_terms")

    def __init__(self, variables: Sequence[str], terms: Mapping[Key, float] | Iterable[ExpoTerm] = ()):
        self.variables = tuple(variables)
        n = len(self.variables)
        acc = _Accumulator()
        items = terms.items() if isinstance(terms, Mapping) else (
            ((t.exponents, t.rates), t.coefficient) for t in terms)
        for (exps, rates), c in items:
            if len(exps) != n or len(rates) != n:
                raise ExpolyError(f"term arity does not match variables {self.variables}")
            if any(a < 0 or int(a) != a for a in exps):
                raise ExpolyError(f"exponents must be natural numbers, got {exps}")
            acc.add(tuple(int(a) for a in exps), tuple(_snap(r) for r in rates), float(c))
        self._terms = dict(sorted(acc.terms().items()))

    # -- construction -----------------------------------------------------

    @classmethod
    def constant(cls, c: float, variables: Sequence[str] = ()) -> "Expolynomial":
        n = len(variables)
        return cls(variables, {((0,) * n, (0.0,) * n): c})

    @classmethod
    def monomial(cls, var: str, exponent: int = 0, rate: float = 0.0,
                 coefficient: float = 1.0) -> "Expolynomial":
        return cls((var,), {((exponent,), (rate,)): coefficient})

    @classmethod
    def _raw(cls, variables: tuple[str, ...], terms: dict[Key, float]) -> "Expolynomial":
        obj = cls.__new__(cls)
        obj.variables = variables
        obj._terms = dict(sorted(terms.items()))
        return obj

    # -- inspection -------------------------------------------------------

    @property
    def terms(self) -> tuple[ExpoTerm, ...]:
        return tuple(ExpoTerm(c, e, r) for (e, r), c in self._terms.items())

    def items(self):
        return self._terms.items()

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def constant_value(self) -> float:
        if self.variables:
            raise ExpolyError(f"not a constant: depends on {self.variables}")
        return sum(self._terms.values())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Expolynomial):
            return NotImplemented
        if set(self.variables) != set(other.variables):
            return False
        other = other.reorder(self.variables)
        if self._terms.keys() != other._terms.keys():
            return False
        return all(math.isclose(c, other._terms[k], rel_tol=1e-12, abs_tol=1e-300)
                   for k, c in self._terms.items())

    __hash__ = None

    def __repr__(self) -> str:
        if not self._terms:
            return "Expolynomial(0)"
        parts = []
        for (exps, rates), c in self._terms.items():
            s = f"{c:.6g}"
            for v, a, r in zip(self.variables, exps, rates):
                if a:
                    s += f"*{v}" + (f"^{a}" if a > 1 else "")
                if r:
                    s += f"*e^(-{r:g}{v})"
            parts.append(s)
        return " + ".join(parts)

    # -- variable bookkeeping --------------------------------------------

    def reorder(self, variables: Sequence[str]) -> "Expolynomial":
        """Re-index onto ``variables``, which must contain all current ones."""
        variables = tuple(variables)
        if variables == self.variables:
            return self
        missing = set(self.variables) - set(variables)
        if missing:
            raise ExpolyError(f"cannot drop variables {sorted(missing)} by reordering")
        pos = {v: i for i, v in enumerate(self.variables)}
        idx = [pos.get(v) for v in variables]
        terms = {}
        for (exps, rates), c in self._terms.items():
            e = tuple(exps[i] if i is not None else 0 for i in idx)
            r = tuple(rates[i] if i is not None else 0.0 for i in idx)
            terms[(e, r)] = c
        return Expolynomial._raw(variables, terms)

    def rename(self, mapping: Mapping[str, str]) -> "Expolynomial":
        return Expolynomial._raw(tuple(mapping.get(v, v) for v in self.variables), self._terms)

    def drop_variable(self, var: str) -> "Expolynomial":
        """Remove a variable the function does not depend on."""
        k = self.variables.index(var)
        terms = {}
        for (exps, rates), c in self._terms.items():
            if exps[k] or rates[k]:
                raise ExpolyError(f"function depends on {var}")
            terms[(exps[:k] + exps[k + 1:], rates[:k] + rates[k + 1:])] = c
        return Expolynomial._raw(self.variables[:k] + self.variables[k + 1:], terms)

    # -- arithmetic -------------------------------------------------------

    def scale(self, c: float) -> "Expolynomial":
        if c == 0:
            return Expolynomial(self.variables)
        return Expolynomial._raw(self.variables, {k: v * c for k, v in self._terms.items()})

    def __add__(self, other: "Expolynomial") -> "Expolynomial":
        variables = self.variables + tuple(v for v in other.variables if v not in self.variables)
        a, b = self.reorder(variables), other.reorder(variables)
        acc = _Accumulator()
        for (e, r), c in a._terms.items():
            acc.add(e, r, c)
        for (e, r), c in b._terms.items():
            acc.add(e, r, c)
        return Expolynomial._raw(variables, acc.terms())

    def __sub__(self, other: "Expolynomial") -> "Expolynomial":
        return self + other.scale(-1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        return multiply(self, other)

    __rmul__ = __mul__


# ---------------------------------------------------------------------------
# pointwise evaluation


def evaluate(f: Expolynomial, point: Sequence[float]) -> float:
    x = [float(v) for v in point]
    if len(x) != len(f.variables):
        raise ExpolyError(f"point has {len(x)} coordinates, function has {len(f.variables)} variables")
    total = 0.0
    for (exps, rates), c in f._terms.items():
        val = c
        for xi, a, r in zip(x, exps, rates):
            if a:
                val *= xi ** a
            if r:
                val *= math.exp(-r * xi)
        total += val
    return total


def evaluate_many(f: Expolynomial, points: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != len(f.variables):
        raise ExpolyError("point dimension mismatch")
    out = np.zeros(pts.shape[0])
    for (exps, rates), c in f._terms.items():
        val = np.full(pts.shape[0], c)
        for j, (a, r) in enumerate(zip(exps, rates)):
            if a:
                val *= pts[:, j] ** a
            if r:
                val *= np.exp(-r * pts[:, j])
        out += val
    return out


def multiply(f: Expolynomial, g: Expolynomial) -> Expolynomial:
    variables = f.variables + tuple(v for v in g.variables if v not in f.variables)
    a, b = f.reorder(variables), g.reorder(variables)
    acc = _Accumulator()
    for (ea, ra), ca in a._terms.items():
        for (eb, rb), cb in b._terms.items():
            acc.add(tuple(x + y for x, y in zip(ea, eb)),
                    tuple(_snap(x + y) for x, y in zip(ra, rb)), ca * cb)
    return Expolynomial._raw(variables, acc.terms())


# ---------------------------------------------------------------------------
# substitution of a variable by a linear expression


def _power_expansion(atoms: list[tuple[int | None, float]], p: int):
    """Expand ``(sum of atoms)**p``; atoms are ``(position|None, coefficient)``.

    Yields ``(coefficient, {position: power})``.
    """
    m = len(atoms)
    for ks in product(range(p + 1), repeat=m):
        if sum(ks) != p:
            continue
        coef = math.factorial(p)
        powers: dict[int, int] = {}
        for (pos, a), k in zip(atoms, ks):
            coef = coef / math.factorial(k) * a ** k
            if pos is not None and k:
                powers[pos] = powers.get(pos, 0) + k
        yield coef, powers


def substitute(f: Expolynomial, var: str, expr: Mapping[str | None, float]) -> Expolynomial:
    """Replace ``var`` by ``sum(coef * y) + expr[None]``.

    ``expr`` maps variable names to their coefficients; the key ``None``
    holds the constant.  New variables are appended at the end.
    """
    k = f.variables.index(var)
    others = f.variables[:k] + f.variables[k + 1:]
    new_vars = others + tuple(v for v in expr if v is not None and v not in others)
    pos = {v: i for i, v in enumerate(new_vars)}
    const = float(expr.get(None, 0.0))
    atoms: list[tuple[int | None, float]] = [(pos[v], float(a)) for v, a in expr.items()
                                             if v is not None and a != 0]
    if const:
        atoms.append((None, const))
    n = len(new_vars)
    acc = _Accumulator()
    for (exps, rates), c in f._terms.items():
        a, lam = exps[k], rates[k]
        base_e = list(exps[:k] + exps[k + 1:]) + [0] * (n - len(others))
        base_r = list(rates[:k] + rates[k + 1:]) + [0.0] * (n - len(others))
        # exp(-lam * (sum a_i y_i + const))
        cc = c * math.exp(-lam * const) if lam and const else c
        r = list(base_r)
        for p_, coef in atoms:
            if p_ is not None:
                r[p_] = r[p_] + lam * coef
        r_t = tuple(_snap(v) for v in r)
        if a == 0:
            acc.add(tuple(base_e), r_t, cc)
            continue
        for coef, powers in _power_expansion(atoms, a):
            e = list(base_e)
            for p_, q in powers.items():
                e[p_] += q
            acc.add(tuple(e), r_t, cc * coef)
    return Expolynomial._raw(new_vars, acc.terms())


# ---------------------------------------------------------------------------
# integration


@lru_cache(maxsize=4096)
def _antiderivative(a: int, lam: float) -> tuple[tuple[float, int], ...]:
    """``F(x) = exp(-lam x) * sum(c * x**p)`` with ``F' = x**a exp(-lam x)``."""
    if lam == 0.0:
        return ((1.0 / (a + 1), a + 1),)
    out = []
    falling = 1.0
    for k in range(a + 1):
        out.append((-falling / lam ** (k + 1), a - k))
        falling *= a - k
    return tuple(out)


def _eval_antiderivative(a: int, lam: float, bound: Bound, upper: bool):
    """Antiderivative at ``bound`` as a list of ``(coef, power_of_bound_var)``.

    The factor ``exp(-lam * x_var)`` is implied for symbolic bounds.
    """
    parts = _antiderivative(a, lam)
    if bound.var is None and math.isinf(bound.offset):
        if (bound.offset > 0 and lam > 0) or (bound.offset < 0 and lam < 0):
            return []
        side = "upper" if upper else "lower"
        raise NonIntegrableError(f"x^{a} e^(-{lam} x) diverges at the {side} limit {bound.offset}")
    c0 = bound.offset
    scale = math.exp(-lam * c0) if lam and c0 else 1.0
    out = []
    for coef, p in parts:
        if bound.var is None:
            out.append((coef * scale * c0 ** p, 0))
        else:
            for r in range(p + 1):
                out.append((coef * scale * math.comb(p, r) * c0 ** (p - r), r))
    return out


_GL_X, _GL_W = np.polynomial.legendre.leggauss(32)
# below this |lam| * width, F(hi) - F(lo) cancels badly and quadrature is exact
_GL_SPAN = 16.0


def _definite(a: int, lam: float, lo: float, hi: float) -> float:
    """``int_lo^hi x**a exp(-lam x) dx`` for finite constant limits."""
    w = hi - lo
    if abs(lam) * w > _GL_SPAN or a >= len(_GL_X):
        vals = _eval_antiderivative(a, lam, Bound.const(hi), True) + \
            [(-v, q) for v, q in _eval_antiderivative(a, lam, Bound.const(lo), False)]
        return math.fsum(v for v, _ in vals)
    x = 0.5 * w * _GL_X + 0.5 * (hi + lo)
    return float(0.5 * w * np.dot(_GL_W, x ** a * np.exp(-lam * x)))


def integrate_variable(f: Expolynomial, var: str, lower: Bound, upper: Bound) -> Expolynomial:
    """Exact ``int_{lower}^{upper} f d var`` as an expolynomial in the rest."""
    k = f.variables.index(var)
    for b in (lower, upper):
        if b.var == var:
            raise ExpolyError("integration bound cannot depend on the integration variable")
    others = f.variables[:k] + f.variables[k + 1:]
    extra = tuple(b.var for b in (lower, upper)
                  if b.var is not None and b.var not in others)
    extra = tuple(dict.fromkeys(extra))
    new_vars = others + extra
    pos = {v: i for i, v in enumerate(new_vars)}
    acc = _Accumulator()
    for (exps, rates), c in f._terms.items():
        a, lam = exps[k], rates[k]
        base_e = exps[:k] + exps[k + 1:] + (0,) * len(extra)
        base_r = rates[:k] + rates[k + 1:] + (0.0,) * len(extra)
        if lower.var is None and upper.var is None and math.isfinite(lower.offset) \
                and math.isfinite(upper.offset):
            acc.add(base_e, base_r, c * _definite(a, lam, lower.offset, upper.offset))
            continue
        for bound, sign in ((upper, 1.0), (lower, -1.0)):
            vals = _eval_antiderivative(a, lam, bound, upper=sign > 0)
            if not vals:
                continue
            if bound.var is None:
                acc.add(base_e, base_r, sign * c * math.fsum(v for v, _ in vals))
                continue
            j = pos[bound.var]
            r = list(base_r)
            r[j] = _snap(r[j] + lam)
            r_t = tuple(r)
            for v, p in vals:
                e = list(base_e)
                e[j] += p
                acc.add(tuple(e), r_t, sign * c * v)
    return Expolynomial._raw(new_vars, acc.terms())


# ---------------------------------------------------------------------------
# piecewise densities over DBM partitions


@dataclass(frozen=True)
class Piece:
    zone: DbmZone
    poly: Expolynomial

    def __post_init__(self):
        if self.zone.variables != self.poly.variables:
            object.__setattr__(self, "poly", self.poly.reorder(self.zone.variables))


@dataclass(frozen=True)
class PiecewisePdf:
    variables: tuple[str, ...]
    pieces: tuple[Piece, ...]

    @classmethod
    def single(cls, zone: DbmZone, poly: Expolynomial) -> "PiecewisePdf":
        return cls(zone.variables, (Piece(zone, poly),))

    @classmethod
    def from_pieces(cls, variables: Sequence[str], pieces: Iterable[tuple[DbmZone, Expolynomial]]) -> "PiecewisePdf":
        from .zone import reorder
        variables = tuple(variables)
        out = []
        for z, p in pieces:
            if z.variables != variables:
                z = reorder(z, variables)
            if p.is_zero():
                continue
            out.append(Piece(z, p.reorder(variables)))
        return cls(variables, tuple(out))

    def __len__(self) -> int:
        return len(self.pieces)

    def scale(self, c: float) -> "PiecewisePdf":
        return PiecewisePdf(self.variables, tuple(Piece(p.zone, p.poly.scale(c)) for p in self.pieces))

    def evaluate(self, point: Sequence[float]) -> float:
        for piece in self.pieces:
            if piece.zone.contains(point):
                return evaluate(piece.poly, point)
        return 0.0

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(pts.shape[0])
        done = np.zeros(pts.shape[0], dtype=bool)
        full = np.hstack([np.zeros((pts.shape[0], 1)), pts])
        for piece in self.pieces:
            b = piece.zone.bounds
            inside = ~done
            n = b.shape[0]
            for i in range(n):
                for j in range(n):
                    if i != j and math.isfinite(b[i, j]):
                        inside &= full[:, i] - full[:, j] <= b[i, j] + 1e-12
            if inside.any():
                out[inside] = evaluate_many(piece.poly, pts[inside])
                done |= inside
        return out


# sub-zones thinner than this carry only float noise; EPS would drop real mass
SLIVER = 1e-12


def _undominated(b: np.ndarray, k: int, cands: list[int], upper: bool) -> list[int]:
    tol = 1e-12
    keep = []
    for j in cands:
        dominated = False
        for i in cands:
            if i == j:
                continue
            if upper:
                dom = b[i, j] + b[k, i] <= b[k, j] + tol
                mutual = dom and b[j, i] + b[k, j] <= b[k, i] + tol
            else:
                dom = b[j, i] + b[i, k] <= b[j, k] + tol
                mutual = dom and b[i, j] + b[j, k] <= b[i, k] + tol
            if dom and (not mutual or i < j):
                dominated = True
                break
        if not dominated:
            keep.append(j)
    return keep


def eliminate_piece(zone: DbmZone, poly: Expolynomial, var: str) -> list[tuple[DbmZone, Expolynomial]]:
    """Integrate ``var`` out of one piece, splitting the projected zone so that
    every resulting sub-zone has a single symbolic lower and upper limit."""
    names = (REF,) + zone.variables
    k = zone.index(var)
    b = zone.bounds
    n = len(names)
    uppers = _undominated(b, k, [j for j in range(n) if j != k and math.isfinite(b[k, j])], True)
    lowers = _undominated(b, k, [j for j in range(n) if j != k and math.isfinite(b[j, k])], False)
    out = []
    for ju in uppers or [None]:
        for jl in lowers or [None]:
            cons = []
            if ju is not None:
                cons += [(names[ju], names[i], b[k, i] - b[k, ju]) for i in uppers if i != ju]
            if jl is not None:
                cons += [(names[i], names[jl], b[i, k] - b[jl, k]) for i in lowers if i != jl]
            sub = intersect_all(zone, cons) if cons else zone
            if sub is None or not sub.is_full_dimensional(SLIVER):
                continue
            up = Bound(None, math.inf) if ju is None else Bound(None if ju == 0 else names[ju], float(b[k, ju]))
            lo = Bound(None, -math.inf) if jl is None else Bound(None if jl == 0 else names[jl], -float(b[jl, k]))
            g = integrate_variable(poly, var, lo, up)
            if g.is_zero():
                continue
            zp = eliminate(sub, var)
            out.append((zp, g.reorder(zp.variables)))
    return out


def integrate_piece(zone: DbmZone, poly: Expolynomial) -> float:
    """Exact integral of ``poly`` over ``zone`` by iterated elimination in
    reverse variable order."""
    if not zone.is_full_dimensional(SLIVER):
        return 0.0
    leaves = []
    stack = [(zone, poly.reorder(zone.variables))]
    while stack:
        z, p = stack.pop()
        if not z.variables:
            if not p.is_zero():
                leaves.append(p.constant_value())
            continue
        stack.extend(eliminate_piece(z, p, z.variables[-1]))
    total = math.fsum(leaves)
    if not math.isfinite(total):
        raise NonIntegrableError("integral is not finite")
    return total


def integrate_over_zone(f: PiecewisePdf, zone: DbmZone | None = None) -> float:
    total = 0.0
    for piece in f.pieces:
        z = piece.zone if zone is None else intersection(piece.zone, zone)
        if z is None:
            continue
        total += integrate_piece(z, piece.poly)
    return total


def mass(f: PiecewisePdf) -> float:
    return integrate_over_zone(f)


def normalize(f: PiecewisePdf) -> tuple[PiecewisePdf, float]:
    m = mass(f)
    if not math.isfinite(m):
        raise NonIntegrableError(f"total mass is {m}")
    if m <= 0.0:
        raise DegenerateSupportError("total mass is zero")
    return f.scale(1.0 / m), m


def marginalize(f: PiecewisePdf, var: str) -> PiecewisePdf:
    """Integrate ``var`` out of every piece."""
    out: list[tuple[DbmZone, Expolynomial]] = []
    for piece in f.pieces:
        out.extend(eliminate_piece(piece.zone, piece.poly, var))
    variables = tuple(v for v in f.variables if v != var)
    return PiecewisePdf.from_pieces(variables, out)


def marginal_pdf(f: PiecewisePdf, var: str) -> PiecewisePdf:
    """One-dimensional marginal of ``var``."""
    g = f
    for v in reversed(f.variables):
        if v != var:
            g = marginalize(g, v)
    return g


def marginal_cdf(f: PiecewisePdf, var: str, xs: Sequence[float]) -> np.ndarray:
    """Exact CDF of ``var`` under ``f`` evaluated at ``xs``."""
    from .zone import intersect
    g = marginal_pdf(f, var)
    out = np.zeros(len(xs))
    for idx, x in enumerate(xs):
        total = 0.0
        for piece in g.pieces:
            z = intersect(piece.zone, var, REF, float(x))
            if z is not None:
                total += integrate_piece(z, piece.poly)
        out[idx] = total
    return out


def piece_product(f: PiecewisePdf, g: PiecewisePdf) -> PiecewisePdf:
    """Product of two piecewise functions over disjoint variable sets."""
    from .zone import DbmZone as _Z
    if set(f.variables) & set(g.variables):
        raise ExpolyError("piece_product needs disjoint variables")
    variables = f.variables + g.variables
    out = []
    nf = len(f.variables) + 1
    for pf in f.pieces:
        for pg in g.pieces:
            n = len(variables) + 1
            bmat = np.full((n, n), math.inf)
            bmat[:nf, :nf] = pf.zone.bounds
            idx = [0] + list(range(nf, n))
            bmat[np.ix_(idx, idx)] = np.minimum(bmat[np.ix_(idx, idx)], pg.zone.bounds)
            from .zone import canonicalize
            z = canonicalize(_Z(variables, bmat))
            if z is None or not z.is_full_dimensional():
                continue
            out.append((z, multiply(pf.poly, pg.poly)))
    return PiecewisePdf.from_pieces(variables, out)


EPS_MASS = EPS
