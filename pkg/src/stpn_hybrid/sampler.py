"""Drawing initial timings for simulation offspring from a class density.

Two samplers are provided: random-walk Metropolis-Hastings with a tuned
proposal width and autocorrelation-driven thinning, and importance sampling
from a product proposal built on the marginal bounds of the support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy.stats import chi2

from .expoly import Expolynomial, PiecewisePdf, integrate_piece
from .ssc import AGE, XEXP, OffspringSource
from .stpn import Stpn


class SamplerError(RuntimeError):
    code = "SAMPLER"


# ---------------------------------------------------------------------------
# compiled density


@dataclass
class CompiledPdf:
    variables: tuple[str, ...]
    cons_start: np.ndarray
    cons_i: np.ndarray
    cons_j: np.ndarray
    cons_b: np.ndarray
    term_start: np.ndarray
    coef: np.ndarray
    exps: np.ndarray
    rates: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    pdf: PiecewisePdf = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.variables)

    def arrays(self):
        return (self.cons_start, self.cons_i, self.cons_j, self.cons_b,
                self.term_start, self.coef, self.exps, self.rates)

    def __call__(self, x) -> float:
        return float(_pdf_value(self.arrays(), np.asarray(x, dtype=float)))

    def evaluate_many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=float)
        out = np.empty(pts.shape[0])
        _pdf_many(self.arrays(), pts, out)
        return out


def compile_pdf(pdf: PiecewisePdf) -> CompiledPdf:
    D = len(pdf.variables)
    cs, ci, cj, cb = [0], [], [], []
    ts, co, ex, ra = [0], [], [], []
    lo = np.full(D, np.inf)
    hi = np.full(D, -np.inf)
    for piece in pdf.pieces:
        b = piece.zone.bounds
        for i in range(D + 1):
            for j in range(D + 1):
                if i != j and math.isfinite(b[i, j]):
                    ci.append(i)
                    cj.append(j)
                    cb.append(b[i, j])
        cs.append(len(ci))
        for (e, r), c in piece.poly.items():
            co.append(c)
            ex.append(e)
            ra.append(r)
        ts.append(len(co))
        lo = np.minimum(lo, -b[0, 1:])
        hi = np.maximum(hi, b[1:, 0])
    return CompiledPdf(
        pdf.variables, np.array(cs, dtype=np.int64), np.array(ci, dtype=np.int64),
        np.array(cj, dtype=np.int64), np.array(cb, dtype=float), np.array(ts, dtype=np.int64),
        np.array(co, dtype=float), np.array(ex, dtype=np.int64).reshape(len(co), D),
        np.array(ra, dtype=float).reshape(len(co), D), lo + 0.0, hi, pdf)


@nb.njit(cache=True)
def _pdf_value(arrs, x):
    cons_start, cons_i, cons_j, cons_b, term_start, coef, exps, rates = arrs
    D = x.shape[0]
    for k in range(cons_start.shape[0] - 1):
        inside = True
        for c in range(cons_start[k], cons_start[k + 1]):
            xi = 0.0 if cons_i[c] == 0 else x[cons_i[c] - 1]
            xj = 0.0 if cons_j[c] == 0 else x[cons_j[c] - 1]
            if xi - xj > cons_b[c] + 1e-12:
                inside = False
                break
        if inside:
            s = 0.0
            for t in range(term_start[k], term_start[k + 1]):
                v = coef[t]
                ex = 0.0
                for d in range(D):
                    if exps[t, d] > 0:
                        v *= x[d] ** exps[t, d]
                    ex -= rates[t, d] * x[d]
                if ex != 0.0:
                    v *= math.exp(ex)
                s += v
            return s
    return 0.0


@nb.njit(cache=True)
def _pdf_many(arrs, pts, out):
    for r in range(pts.shape[0]):
        out[r] = _pdf_value(arrs, pts[r])


# ---------------------------------------------------------------------------
# Metropolis-Hastings


@dataclass
class MhConfig:
    sigma: np.ndarray | None = None
    warmup_rounds: int = 100
    warmup_steps: int = 100
    band: tuple[float, float] = (0.2, 0.3)
    factor: float = 1.25
    thin_start: int = 100
    thin_step: int = 100
    thin_max: int = 20000
    lags: int = 20
    alpha: float = 0.05
    test_samples: int = 1000
    box_cap: float = 1e3
    max_start_attempts: int = 10 ** 6


@dataclass
class MhTuning:
    sigma: np.ndarray
    thin: int
    start: np.ndarray
    acceptance: float
    lb_statistic: np.ndarray


@nb.njit(cache=True)
def _mh_chain(arrs, x0, f0, sigma, n_out, thin, seed, out):
    np.random.seed(seed)
    D = x0.shape[0]
    x = x0.copy()
    fx = f0
    acc = 0
    prop = np.empty(D)
    for s in range(n_out):
        for _ in range(thin):
            for d in range(D):
                prop[d] = x[d] + sigma[d] * np.random.standard_normal()
            fp = _pdf_value(arrs, prop)
            if fp > 0.0 and (fp >= fx or np.random.random() < fp / fx):
                for d in range(D):
                    x[d] = prop[d]
                fx = fp
                acc += 1
        for d in range(D):
            out[s, d] = x[d]
    return x, fx, acc


def mh_step(cpdf: CompiledPdf, x: np.ndarray, sigma: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One random-walk step: accept ``x'`` with probability ``min(1, f(x')/f(x))``."""
    x = np.asarray(x, dtype=float)
    fx = cpdf(x)
    if not fx > 0:
        raise SamplerError("current state has zero density")
    prop = x + np.asarray(sigma) * rng.standard_normal(x.shape)
    fp = cpdf(prop)
    if fp >= fx or (fp > 0 and rng.random() < fp / fx):
        return prop
    return x


def _capped_box(cpdf: CompiledPdf, cap: float) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = cpdf.lo.copy(), cpdf.hi.copy()
    for d in range(cpdf.dim):
        if not math.isfinite(lo[d]) and not math.isfinite(hi[d]):
            lo[d], hi[d] = -cap, cap
        elif not math.isfinite(hi[d]):
            hi[d] = lo[d] + cap
        elif not math.isfinite(lo[d]):
            lo[d] = hi[d] - cap
    return lo, hi


def find_start(cpdf: CompiledPdf, rng: np.random.Generator, cap: float = 1e3,
               max_attempts: int = 10 ** 6) -> np.ndarray:
    """Rejection sampling from the (capped) bounding box until ``f > 0``."""
    lo, hi = _capped_box(cpdf, cap)
    tried = 0
    while tried < max_attempts:
        k = min(10000, max_attempts - tried)
        pts = lo + (hi - lo) * rng.random((k, cpdf.dim))
        f = cpdf.evaluate_many(pts)
        ok = np.flatnonzero(f > 0)
        if ok.size:
            return pts[ok[0]]
        tried += k
    raise SamplerError(f"no point of positive density in {max_attempts} attempts")


def ljung_box(series: np.ndarray, lags: int = 20, alpha: float = 0.05) -> tuple[np.ndarray, bool]:
    """Per-dimension Ljung-Box statistics and the Bonferroni-adjusted verdict.

    A constant dimension has undefined autocorrelation and counts as a
    rejection.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, D = x.shape
    if n <= lags:
        raise ValueError(f"need more than {lags} observations, got {n}")
    xc = x - x.mean(axis=0)
    denom = np.sum(xc * xc, axis=0)
    Q = np.full(D, np.inf)
    for d in range(D):
        if denom[d] <= 1e-300 * n:
            continue
        acf = np.array([np.dot(xc[k:, d], xc[:-k, d]) for k in range(1, lags + 1)]) / denom[d]
        Q[d] = n * (n + 2) * np.sum(acf ** 2 / (n - np.arange(1, lags + 1)))
    crit = chi2.ppf(1.0 - alpha / D, lags)
    return Q, bool(np.any(Q > crit))


def adapt_sigma(sigma: np.ndarray, rate: float, cfg: MhConfig) -> np.ndarray:
    """Widen above the acceptance band, narrow below it."""
    lo, hi = cfg.band
    if rate > hi:
        return sigma * cfg.factor
    if rate < lo:
        return sigma / cfg.factor
    return sigma


def _seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2 ** 32))


def mh_warmup(cpdf: CompiledPdf, cfg: MhConfig, rng: np.random.Generator) -> MhTuning:
    """Tune the proposal width, then the thinning step."""
    D = cpdf.dim
    x = find_start(cpdf, rng, cfg.box_cap, cfg.max_start_attempts)
    fx = cpdf(x)
    sigma = np.ones(D) if cfg.sigma is None else np.asarray(cfg.sigma, dtype=float).copy()
    buf = np.empty((1, D))
    rate = 0.0
    for _ in range(cfg.warmup_rounds):
        x, fx, acc = _mh_chain(cpdf.arrays(), x, fx, sigma, 1, cfg.warmup_steps, _seed(rng), buf)
        rate = acc / cfg.warmup_steps
        sigma = adapt_sigma(sigma, rate, cfg)
    thin = cfg.thin_start
    out = np.empty((cfg.test_samples, D))
    while True:
        x, fx, _ = _mh_chain(cpdf.arrays(), x, fx, sigma, cfg.test_samples, thin, _seed(rng), out)
        Q, reject = ljung_box(out, cfg.lags, cfg.alpha)
        if not reject or thin >= cfg.thin_max:
            break
        thin += cfg.thin_step
    return MhTuning(sigma, thin, x.copy(), rate, Q)


def mh_sample(cpdf: CompiledPdf, n: int, cfg: MhConfig | None, rng: np.random.Generator,
              tuning: MhTuning | None = None) -> tuple[np.ndarray, MhTuning]:
    cfg = cfg or MhConfig()
    if cpdf.dim == 0:
        return np.zeros((n, 0)), MhTuning(np.zeros(0), 0, np.zeros(0), 1.0, np.zeros(0))
    tuning = tuning or mh_warmup(cpdf, cfg, rng)
    out = np.empty((n, cpdf.dim))
    x, _, _ = _mh_chain(cpdf.arrays(), tuning.start, cpdf(tuning.start), tuning.sigma, n, tuning.thin,
                        _seed(rng), out)
    return out, tuning


# ---------------------------------------------------------------------------
# importance sampling


@dataclass
class IsConfig:
    lam: float = 1.0
    max_attempts: int = 10 ** 6


def _proposal_kinds(cpdf: CompiledPdf) -> np.ndarray:
    kinds = np.zeros(cpdf.dim, dtype=np.int64)
    for d in range(cpdf.dim):
        fl, fh = math.isfinite(cpdf.lo[d]), math.isfinite(cpdf.hi[d])
        if fl and fh:
            kinds[d] = 0 if cpdf.hi[d] > cpdf.lo[d] else 3
        elif fl:
            kinds[d] = 1
        elif fh:
            kinds[d] = 2
        else:
            raise SamplerError(f"{cpdf.variables[d]} is unbounded on both sides")
    return kinds


def proposal_expolynomial(cpdf: CompiledPdf, lam: float) -> Expolynomial:
    """The product proposal as a single expolynomial term."""
    kinds = _proposal_kinds(cpdf)
    c = 1.0
    rates = []
    for d, k in enumerate(kinds):
        lo, hi = cpdf.lo[d], cpdf.hi[d]
        if k == 0:
            c /= hi - lo
            rates.append(0.0)
        elif k == 1:
            c *= lam * math.exp(lam * lo)
            rates.append(lam)
        elif k == 2:
            c *= lam * math.exp(-lam * hi)
            rates.append(-lam)
        else:
            raise SamplerError("degenerate dimension in the support")
    D = cpdf.dim
    return Expolynomial(cpdf.variables, {((0,) * D, tuple(rates)): c})


def acceptance_mass(cpdf: CompiledPdf, lam: float) -> float:
    """Exact proposal mass falling on the support of ``f``."""
    g = proposal_expolynomial(cpdf, lam)
    return sum(integrate_piece(p.zone, g) for p in cpdf.pdf.pieces)


@nb.njit(cache=True)
def _is_draw(arrs, lo, hi, kinds, lam, n, seed, max_attempts, out, fvals, gvals):
    np.random.seed(seed)
    D = lo.shape[0]
    x = np.empty(D)
    for s in range(n):
        tries = 0
        while True:
            tries += 1
            if tries > max_attempts:
                return s
            g = 1.0
            for d in range(D):
                if kinds[d] == 0:
                    x[d] = lo[d] + (hi[d] - lo[d]) * np.random.random()
                    g /= hi[d] - lo[d]
                elif kinds[d] == 1:
                    e = -math.log1p(-np.random.random()) / lam
                    x[d] = lo[d] + e
                    g *= lam * math.exp(-lam * e)
                else:
                    e = -math.log1p(-np.random.random()) / lam
                    x[d] = hi[d] - e
                    g *= lam * math.exp(-lam * e)
            f = _pdf_value(arrs, x)
            if f > 0.0:
                break
        for d in range(D):
            out[s, d] = x[d]
        fvals[s] = f
        gvals[s] = g
    return n


def is_sample(cpdf: CompiledPdf, n: int, cfg: IsConfig | None, rng: np.random.Generator,
              mass: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``n`` proposal draws restricted to the support and their likelihoods
    ``L = f / f_proposal * mass``."""
    cfg = cfg or IsConfig()
    if cpdf.dim == 0:
        return np.zeros((n, 0)), np.ones(n)
    kinds = _proposal_kinds(cpdf)
    if mass is None:
        mass = acceptance_mass(cpdf, cfg.lam)
    out = np.empty((n, cpdf.dim))
    f = np.empty(n)
    g = np.empty(n)
    got = _is_draw(cpdf.arrays(), cpdf.lo, cpdf.hi, kinds, float(cfg.lam), n, _seed(rng),
                   int(cfg.max_attempts), out, f, g)
    if got < n:
        raise SamplerError(f"importance sampler exceeded {cfg.max_attempts} rejections for one draw")
    return out, f / g * mass


# ---------------------------------------------------------------------------
# offspring assembly


@dataclass
class OffspringBatch:
    marking: tuple[int, ...]
    due: np.ndarray       # absolute firing times, NaN where disabled
    clock: np.ndarray     # entry time of the class
    forced: int
    likelihood: np.ndarray
    timings: np.ndarray   # the sampled density variables


@dataclass
class PreparedSource:
    """Per-source sampler state reusable across replications."""

    source: OffspringSource
    cpdf: CompiledPdf
    mass: float | None = None
    tuning: MhTuning | None = None


def prepare(source: OffspringSource, method: str, is_cfg: IsConfig | None = None) -> PreparedSource:
    cp = compile_pdf(source.pdf)
    ps = PreparedSource(source, cp)
    if method == "is" and cp.dim:
        ps.mass = acceptance_mass(cp, (is_cfg or IsConfig()).lam)
    return ps


def draw_offspring(stpn: Stpn, prep: PreparedSource, n: int, method: str, rng: np.random.Generator,
                   mh_cfg: MhConfig | None = None, is_cfg: IsConfig | None = None) -> OffspringBatch:
    src = prep.source
    if method == "mh":
        X, tuning = mh_sample(prep.cpdf, n, mh_cfg, rng, prep.tuning)
        prep.tuning = tuning
        L = np.ones(n)
    elif method == "is":
        X, L = is_sample(prep.cpdf, n, is_cfg, rng, prep.mass)
    else:
        raise ValueError(f"unknown sampler {method!r}")
    col = {v: X[:, i] for i, v in enumerate(src.pdf.variables)}

    def value(expr):
        a, c = expr
        return np.full(n, c) if a is None else col[a] + c

    exprs = src.timer_value_exprs()
    elapsed = -value(exprs[AGE])
    T = len(stpn.transitions)
    due = np.full((n, T), np.nan)
    for name, expr in exprs.items():
        if name == AGE:
            continue
        due[:, stpn.transition_index(name)] = elapsed + value(expr)
    g = stpn.transition_index(src.gamma)
    fire_at = col[XEXP] if src.gamma_value[0] == XEXP else value(src.gamma_value)
    if src.gamma_value[0] == XEXP:
        due[:, g] = elapsed + fire_at
    for name, rate in src.exp_residual:
        due[:, stpn.transition_index(name)] = elapsed + fire_at + rng.exponential(1.0 / rate, n)
    return OffspringBatch(src.cls.marking, due, elapsed, g, L, X)
