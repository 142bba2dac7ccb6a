"""Polynomial approximations of activations and gradient clipping.

Polynomials are stored in the Chebyshev basis over their fit interval and
evaluated under encryption by recursive splitting on power-of-two Chebyshev
terms, which keeps the multiplicative depth at ceil(log2(degree)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as cheb

from .engine import Engine, SlotVector
from .exceptions import ConvergenceError, LevelError
from .packing import PackedMatrix

METHODS = ("least-squares", "minimax")


# -- reference functions ------------------------------------------------------


def clip_reference(x, m):
    """Hard clip to [-m, m]."""
    if m <= 0:
        raise ValueError("clip threshold must be positive")
    return np.clip(x, -m, m)


def tanh_clip(x, m):
    if m <= 0:
        raise ValueError("clip threshold must be positive")
    return m * np.tanh(x / m)


def soft_clip(x, m):
    """x + ln((1 + e^-(x+m)) / (1 + e^(x-m))), written with logaddexp for range."""
    if m <= 0:
        raise ValueError("clip threshold must be positive")
    x = np.asarray(x)
    return x + np.logaddexp(0, -(x + m)) - np.logaddexp(0, x - m)


def sigmoid(x):
    x = np.asarray(x)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(x):
    return np.logaddexp(0, x)


_ACTIVATIONS = {
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2, (-4.0, 4.0)),
    "sigmoid": (sigmoid, lambda x: sigmoid(x) * (1.0 - sigmoid(x)), (-8.0, 8.0)),
    "softplus": (softplus, sigmoid, (-8.0, 8.0)),
}

CLIP_VARIANTS = {"hard": clip_reference, "tanh": tanh_clip, "soft": soft_clip}


@dataclass(frozen=True)
class ClipSpec:
    threshold: float = 5.0
    variant: str = "soft"

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError(f"clip threshold must be positive, got {self.threshold}")
        if self.variant not in CLIP_VARIANTS:
            raise ValueError(f"unknown clip variant {self.variant!r}")

    def __call__(self, x):
        return CLIP_VARIANTS[self.variant](x, self.threshold)


# -- polynomial type ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PolyApprox:
    coeffs: np.ndarray
    interval: tuple[float, float]
    degree: int
    method: str = "minimax"
    target: str = "custom"
    max_error: float = float("nan")

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64)
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)
        a, b = self.interval
        if not a < b:
            raise ValueError(f"interval must satisfy a < b, got {self.interval}")
        object.__setattr__(self, "interval", (float(a), float(b)))
        if self.degree != c.size - 1:
            raise ValueError(f"degree {self.degree} does not match {c.size} coefficients")

    def to_unit(self, x):
        a, b = self.interval
        return (2.0 * np.asarray(x, dtype=np.float64) - (a + b)) / (b - a)

    def __call__(self, x):
        return cheb.chebval(self.to_unit(x), self.coeffs)

    @property
    def depth(self) -> int:
        return depth_for_degree(self.degree)

    def to_monomial(self) -> np.ndarray:
        """Power-basis coefficients in the original variable, lowest first."""
        series = cheb.Chebyshev(self.coeffs, domain=list(self.interval))
        return series.convert(kind=np.polynomial.Polynomial).coef

    def derivative(self) -> "PolyApprox":
        a, b = self.interval
        d = cheb.chebder(self.coeffs) * (2.0 / (b - a))
        if d.size == 0:
            d = np.zeros(1)
        return PolyApprox(d, self.interval, d.size - 1, self.method, f"d/dx {self.target}")


def depth_for_degree(degree: int) -> int:
    return 0 if degree <= 1 else math.ceil(math.log2(degree))


def _eval_target(f, x):
    try:
        return np.asarray(f(x.astype(np.longdouble)), dtype=np.float64)
    except (TypeError, ValueError):
        return np.asarray(f(x), dtype=np.float64)


def _parity(f, a, b):
    """Return (parity, offset): odd/even/None, and the constant that has to be
    removed first for functions like the sigmoid that are odd about a level."""
    if abs(a + b) > 1e-12 * max(abs(a), abs(b)):
        return None, 0.0
    xs = np.linspace(0, b, 257)[1:]
    fp, fm = _eval_target(f, xs), _eval_target(f, -xs)
    scale = max(1.0, np.max(np.abs(fp)))
    if np.max(np.abs(fp - fm)) <= 1e-12 * scale:
        return "even", 0.0
    mid = 0.5 * (fp + fm)
    if np.max(np.abs(mid - mid[0])) <= 1e-12 * scale:
        return "odd", float(mid[0])
    return None, 0.0


def _basis(parity, degree):
    if parity == "odd":
        return list(range(1, degree + 1, 2))
    if parity == "even":
        return list(range(0, degree + 1, 2))
    return list(range(degree + 1))


def fit(target: Callable, interval, degree: int, method: str = "minimax", name: str = "custom",
        grid_size: int = 100_001, max_iter: int = 100, tol: float = 1e-6) -> PolyApprox:
    """Fit ``target`` on ``interval`` with a degree-``degree`` polynomial.

    Odd or even targets on a symmetric interval are fitted in the matching
    half basis, so symmetry is exact in the result.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    a, b = float(interval[0]), float(interval[1])
    if not a < b:
        raise ValueError("interval must satisfy a < b")
    parity, offset = _parity(target, a, b)
    g = lambda t: _eval_target(target, (b - a) / 2.0 * t + (a + b) / 2.0) - offset
    ks = _basis(parity, degree)
    lo = 0.0 if parity else -1.0
    grid = np.linspace(lo, 1.0, grid_size)
    gy = g(grid)
    if method == "least-squares":
        A = np.stack([cheb.chebval(grid, np.eye(k + 1)[k]) for k in ks], axis=1)
        sol, *_ = np.linalg.lstsq(A, gy, rcond=None)
        c = np.zeros(degree + 1)
        c[ks] = sol
    else:
        c = _remez(g, gy, grid, ks, degree, lo, max_iter, tol)
    err = np.max(np.abs(cheb.chebval(grid, c) - gy))
    c[0] += offset
    return PolyApprox(c, (a, b), degree, method, name, float(err))


def _remez(g, gy, grid, ks, degree, lo, max_iter, tol):
    n = len(ks)
    m = n + 1
    j = np.arange(m)
    if lo == 0.0:
        pts = np.sort(np.cos(np.pi * (j + 0.5) / (2 * m)))
    else:
        pts = np.sort(np.cos(np.pi * j / (m - 1)))
    basis = lambda x: np.stack([cheb.chebval(x, np.eye(k + 1)[k]) for k in ks], axis=1)
    Bgrid = basis(grid)
    scale = max(1.0, np.max(np.abs(gy)))
    prev = None
    c = np.zeros(degree + 1)
    err = None
    for _ in range(max_iter):
        A = np.empty((m, m))
        A[:, :n] = basis(pts)
        A[:, n] = (-1.0) ** j
        sol = np.linalg.solve(A, g(pts))
        c = np.zeros(degree + 1)
        c[ks] = sol[:n]
        err = Bgrid @ sol[:n] - gy
        E = np.max(np.abs(err))
        if E <= 1e-13 * scale:
            return c
        if prev is not None and abs(E - prev) < tol:
            return c
        prev = E
        ext = _alternating_extrema(err)
        if len(ext) < m:
            raise ConvergenceError(
                f"only {len(ext)} alternating extrema for {m} reference points", (grid, err)
            )
        pts = grid[_best_window(ext, err, m)]
    raise ConvergenceError(f"Remez did not converge in {max_iter} iterations", (grid, err))


def _alternating_extrema(err):
    s = np.sign(err)
    s[s == 0] = 1
    cuts = np.flatnonzero(np.diff(s) != 0) + 1
    bounds = np.concatenate([[0], cuts, [err.size]])
    return np.array([lo + np.argmax(np.abs(err[lo:hi])) for lo, hi in zip(bounds[:-1], bounds[1:])])


def _best_window(ext, err, m):
    # contiguous run of m extrema that contains the global maximum and has the
    # largest smallest magnitude
    mags = np.abs(err[ext])
    top = int(np.argmax(mags))
    best, best_val = 0, -1.0
    for start in range(max(0, top - m + 1), min(top, len(ext) - m) + 1):
        v = mags[start : start + m].min()
        if v > best_val:
            best, best_val = start, v
    return ext[best : best + m]


def save_poly(path, poly: PolyApprox):
    """Write a polynomial as key,value lines (coefficients in the Chebyshev basis)."""
    lines = ["key,value", f"target,{poly.target}", f"method,{poly.method}", f"degree,{poly.degree}",
             f"interval_lo,{poly.interval[0]!r}", f"interval_hi,{poly.interval[1]!r}",
             f"max_error,{poly.max_error!r}"]
    lines += [f"c{k},{float(c)!r}" for k, c in enumerate(poly.coeffs)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_poly(path) -> PolyApprox:
    with open(path, encoding="utf-8") as fh:
        rows = [ln.rstrip("\n").split(",", 1) for ln in fh if ln.strip()]
    if not rows or rows[0] != ["key", "value"]:
        raise ValueError(f"{path}: not a polynomial file")
    kv = dict(r for r in rows[1:] if len(r) == 2)
    try:
        deg = int(kv["degree"])
        coeffs = [float(kv[f"c{k}"]) for k in range(deg + 1)]
        iv = (float(kv["interval_lo"]), float(kv["interval_hi"]))
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: malformed polynomial file ({exc})") from None
    return PolyApprox(coeffs, iv, deg, kv.get("method", "minimax"), kv.get("target", "custom"),
                      float(kv.get("max_error", "nan")))


def activation_library(name: str, degree: int = 7, interval=None, method: str = "minimax"):
    """Fit an activation and its analytic derivative; returns (poly, dpoly)."""
    if name not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(_ACTIVATIONS)}")
    f, df, default = _ACTIVATIONS[name]
    iv = default if interval is None else interval
    poly = fit(f, iv, degree, method, name)
    dpoly = fit(df, iv, max(1, degree - 1), method, f"d/dx {name}")
    return poly, dpoly


def clip_poly(spec: ClipSpec, degree: int = 7, interval=(-60.0, 60.0), method: str = "minimax") -> PolyApprox:
    return fit(spec, interval, degree, method, f"{spec.variant}-clip m={spec.threshold:g}")


def error_profile(poly: PolyApprox, reference: Callable, lo=None, hi=None, n: int = 2001):
    """Sample points, reference values, polynomial values and errors."""
    a, b = poly.interval
    xs = np.linspace(a if lo is None else lo, b if hi is None else hi, n)
    ref = np.asarray(reference(xs), dtype=np.float64)
    val = poly(xs)
    return xs, ref, val, val - ref


# -- encrypted evaluation -----------------------------------------------------


class RangeGuard:
    """Records the largest |input| seen by polynomial evaluations (diagnostic only)."""

    def __init__(self):
        self.max_abs = 0.0
        self.out_of_range = 0

    def observe(self, slots: np.ndarray, interval):
        if slots.size:
            self.max_abs = max(self.max_abs, float(np.max(np.abs(slots))))
            self.out_of_range += int(np.count_nonzero((slots < interval[0]) | (slots > interval[1])))


@dataclass(frozen=True)
class ExactFunction:
    """A function applied slot-wise at the level cost of a degree-``degree`` polynomial.

    Used for exact-activation baselines: values are the true function, level
    bookkeeping matches the approximated pipeline.
    """

    fn: Callable
    degree: int = 7
    target: str = "exact"
    interval: tuple[float, float] = (-np.inf, np.inf)

    @property
    def depth(self) -> int:
        return depth_for_degree(self.degree)

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=np.float64))


def _split(c: np.ndarray, m: int):
    """p = q*T_m + r for a Chebyshev series of degree < 2m."""
    d = c.size - 1
    q = np.zeros(d - m + 1)
    q[0] = c[m]
    q[1:] = 2.0 * c[m + 1 :]
    r = c[:m].copy()
    for k in range(1, d - m + 1):
        r[m - k] -= q[k] / 2.0
    return q, r


class _ChebEvaluator:
    def __init__(self, eng: Engine, t: SlotVector, baby: int):
        self.eng = eng
        self.T = {1: t}
        self.baby = baby

    def power(self, k: int) -> SlotVector:
        if k not in self.T:
            eng = self.eng
            if k & (k - 1) == 0:
                h = self.power(k // 2)
                self.T[k] = eng.lincomb([(2.0, eng.mul(h, h))], -1.0)
            else:
                m = 1 << (k.bit_length() - 1)
                prod = eng.mul(self.power(m), self.power(k - m))
                if 2 * m - k == 0:
                    self.T[k] = eng.lincomb([(2.0, prod)], -1.0)
                else:
                    self.T[k] = eng.lincomb([(2.0, prod), (-1.0, self.power(2 * m - k))])
        return self.T[k]

    def leaf(self, c: np.ndarray) -> SlotVector:
        terms = [(float(c[k]), self.power(k)) for k in range(1, c.size) if c[k] != 0.0]
        if not terms:
            terms = [(0.0, self.T[1])]
        return self.eng.lincomb(terms, float(c[0]))

    def run(self, c: np.ndarray) -> SlotVector:
        c = np.trim_zeros(c, "b")
        if c.size == 0:
            c = np.zeros(1)
        d = c.size - 1
        if d < self.baby:
            return self.leaf(c)
        m = 1 << (d.bit_length() - 1)
        q, r = _split(c, m)
        if q.size == 1:
            lc = self.leaf(r) if np.any(r) else None
            terms = [(float(q[0]), self.power(m))]
            if lc is None:
                return self.eng.lincomb(terms)
            return self.eng.lincomb(terms + [(1.0, lc)])
        return self.eng.add(self.eng.mul(self.run(q), self.power(m)), self.run(r))


def _eval_slotvector(eng: Engine, fn, c: SlotVector, guard: RangeGuard | None) -> SlotVector:
    depth = fn.depth
    if c.encrypted and c.level < depth:
        raise LevelError(f"evaluation needs {depth} levels, ciphertext has {c.level}; bootstrap first")
    if guard is not None:
        guard.observe(c.slots, fn.interval)
    target = c.level - depth
    if isinstance(fn, ExactFunction):
        out = SlotVector(eng.params.round_to_grid(fn(c.slots)), c.level, c.encrypted, c.owner)
        return eng.drop_level(out, target) if c.encrypted else out
    if not c.encrypted:
        return SlotVector(eng.params.round_to_grid(fn(c.slots)), c.level, False)
    a, b = fn.interval
    t = eng.lincomb([(2.0 / (b - a), c)], -(a + b) / (b - a))
    baby = 1 << max(1, math.ceil(math.log2(math.sqrt(fn.degree + 1))))
    out = _ChebEvaluator(eng, t, baby).run(np.asarray(fn.coeffs))
    if out.level < target:
        raise AssertionError("polynomial evaluation exceeded its depth budget")
    return eng.drop_level(out, target)


def eval_encrypted(eng: Engine, fn, x, guard: RangeGuard | None = None):
    """Apply a PolyApprox (or ExactFunction) element-wise to a ciphertext or packed matrix.

    Consumes exactly ``fn.depth`` levels. Inputs outside the fit interval are
    evaluated as-is; ``guard`` can record how far out they went.
    """
    if isinstance(x, PackedMatrix):
        return x.map(lambda c: _eval_slotvector(eng, fn, c, guard))
    return _eval_slotvector(eng, fn, x, guard)
