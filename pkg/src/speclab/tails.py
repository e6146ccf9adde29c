"""Heavy-tail laws for the single-site disorder variable.

A law is described by the function f with survival mu[x, inf) = 1/f(x) on the
upper tail. Two families are supported: power laws with logarithmic
corrections, f(x) = x**p * log(x)**(-k), and stretched exponentials,
f(x) = exp(x**delta). Below the tail region the survival formula is not a
valid distribution for every family, so all sub-tail mass is concentrated in
an atom at `clamp_point`, the smallest point >= max(R, 1) where f reaches 1
and is increasing from there on. Sampling is exact inverse-transform above
the clamp: omega = f^{-1}(max(1/u, f(clamp_point))) for uniform u, which
makes P(omega >= x) = min(1, 1/f(x)) for every x above the clamp.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

FAMILIES = ("power_log", "stretched_exp")


class DomainError(ValueError):
    """Argument outside the mathematical domain of the requested operation."""


class ConvergenceError(RuntimeError):
    """Iterative inversion failed to reach the requested tolerance."""


def invert_increasing(
    func: Callable[[float], float],
    y: float,
    lo: float,
    hi: float | None = None,
    rtol: float = 1e-12,
    max_iter: int = 200,
    dfunc: Callable[[float], float] | None = None,
) -> float:
    """Solve func(x) = y for x >= lo, func strictly increasing on [lo, inf).

    Brackets the root by doubling, narrows it by bisection, and polishes with
    Newton steps whenever the Newton candidate stays inside the bracket.
    """
    f_lo = func(lo)
    if y < f_lo * (1.0 - 1e-13):
        raise DomainError(f"target {y} below func({lo}) = {f_lo}")
    if y <= f_lo:
        return lo
    a, fa = lo, f_lo
    if hi is None:
        b = lo + 1.0 if lo <= 0 else 2.0 * lo
        for _ in range(max_iter):
            fb = func(b)
            if fb >= y:
                break
            a, fa = b, fb
            b = 2.0 * b if b > 0 else b + 1.0
        else:
            raise ConvergenceError(f"could not bracket target {y}")
        fb = func(b)
    else:
        b = hi
        fb = func(b)
        if fb < y:
            raise DomainError(f"target {y} above func({hi}) = {fb}")
    x = 0.5 * (a + b)
    for it in range(max_iter):
        fx = func(x)
        if abs(fx - y) <= rtol * abs(y):
            if dfunc is not None:
                # one polish step to land near machine accuracy
                d = dfunc(x)
                if d > 0:
                    x2 = x - (fx - y) / d
                    if a < x2 < b:
                        return x2
            return x
        if fx < y:
            a, fa = x, fx
        else:
            b, fb = x, fx
        x_new = None
        if dfunc is not None:
            d = dfunc(x)
            if d > 0:
                cand = x - (fx - y) / d
                if a < cand < b:
                    x_new = cand
        x = x_new if x_new is not None else 0.5 * (a + b)
        if b - a <= 4.0 * np.finfo(float).eps * max(abs(a), abs(b)):
            return x
    raise ConvergenceError(f"no convergence after {max_iter} iterations (target {y})")


@dataclass(frozen=True)
class TailLaw:
    """Tail function family with derived monotonicity threshold and clamp.

    Construct through :func:`power_log` or :func:`stretched_exp`.
    """

    family: str
    p: float = 0.0
    k: int = 0
    delta: float = 0.0
    monotone_from: float = field(init=False, default=0.0)
    clamp_point: float = field(init=False, default=0.0)

    def __post_init__(self) -> None:
        if self.family == "power_log":
            if self.p <= 0:
                raise ValueError(f"p must be > 0, got {self.p}")
            if self.k < 0 or int(self.k) != self.k:
                raise ValueError(f"k must be a nonnegative integer, got {self.k}")
            if self.k == 0:
                R, clamp = 0.0, 1.0
            else:
                R = math.exp(self.k / self.p)
                if _f_power_log(R, self.p, self.k) >= 1.0:
                    clamp = R
                else:
                    clamp = invert_increasing(
                        lambda x: _f_power_log(x, self.p, self.k), 1.0, lo=R
                    )
        elif self.family == "stretched_exp":
            if not 0.0 < self.delta <= 1.0:
                raise ValueError(f"delta must be in (0, 1], got {self.delta}")
            R, clamp = 0.0, 0.0
        else:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        object.__setattr__(self, "monotone_from", R)
        object.__setattr__(self, "clamp_point", clamp)

    @property
    def f_at_clamp(self) -> float:
        return f_eval(self, self.clamp_point) if self.clamp_point > 0 else 1.0

    def to_dict(self) -> dict:
        if self.family == "power_log":
            return {"family": "power_log", "p": self.p, "k": self.k}
        return {"family": "stretched_exp", "delta": self.delta}

    @staticmethod
    def from_dict(d: dict) -> "TailLaw":
        family = d["family"]
        if family == "power_log":
            return power_log(float(d["p"]), int(d.get("k", 0)))
        if family == "stretched_exp":
            return stretched_exp(float(d["delta"]))
        raise ValueError(f"unknown family {family!r}")


def power_log(p: float, k: int = 0) -> TailLaw:
    """Law with f(x) = x**p * log(x)**(-k)."""
    return TailLaw("power_log", p=p, k=k)


def stretched_exp(delta: float) -> TailLaw:
    """Law with f(x) = exp(x**delta)."""
    return TailLaw("stretched_exp", delta=delta)


def _f_power_log(x: float, p: float, k: int) -> float:
    return x ** p * math.log(x) ** (-k) if k else x ** p


def f_eval(law: TailLaw, x):
    """Evaluate f. Scalar in, scalar out; array in, array out."""
    arr = np.asarray(x, dtype=np.float64)
    if law.family == "power_log":
        lower = 1.0 if law.k >= 1 else 0.0
        if np.any(arr <= lower):
            raise DomainError(f"f_eval requires x > {lower} for this law")
        out = arr ** law.p
        if law.k:
            out = out * np.log(arr) ** (-law.k)
    else:
        if np.any(arr < 0):
            raise DomainError("f_eval requires x >= 0 for stretched_exp")
        out = np.exp(arr ** law.delta)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def f_derivative(law: TailLaw, x: float) -> float:
    """f'(x) on the increasing branch."""
    if law.family == "power_log":
        lx = math.log(x)
        return x ** (law.p - 1.0) * lx ** (-(law.k + 1)) * (law.p * lx - law.k) \
            if law.k else law.p * x ** (law.p - 1.0)
    return law.delta * x ** (law.delta - 1.0) * math.exp(x ** law.delta)


def f_inv(law: TailLaw, y: float, rtol: float = 1e-12) -> float:
    """Inverse of f on [clamp_point, inf); |f(result) - y| <= rtol*y."""
    fc = law.f_at_clamp
    if y < fc * (1.0 - 1e-13):
        raise DomainError(f"y = {y} below f(clamp_point) = {fc}")
    if y <= fc:
        return law.clamp_point
    if law.family == "power_log":
        if law.k == 0:
            return y ** (1.0 / law.p)
        return invert_increasing(
            lambda x: _f_power_log(x, law.p, law.k),
            y,
            lo=law.clamp_point,
            rtol=rtol,
            dfunc=lambda x: f_derivative(law, x),
        )
    return math.log(y) ** (1.0 / law.delta)


def _f_inv_array(law: TailLaw, y: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    if law.family == "power_log" and law.k == 0:
        return y ** (1.0 / law.p)
    if law.family == "stretched_exp":
        return np.log(y) ** (1.0 / law.delta)
    return np.array([f_inv(law, float(v), rtol) for v in np.ravel(y)]).reshape(y.shape)


def tail_prob(law: TailLaw, x):
    """min(1, 1/f(x)) above the clamp, 1 below it. Scalar or array.

    1/f is formed directly (exp(-x**delta), or x**(-p) * log(x)**k) so huge
    arguments underflow to 0 instead of overflowing f.
    """
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if np.any(arr < 0):
        raise DomainError("tail_prob requires x >= 0")
    out = np.ones_like(arr)
    mask = arr >= law.clamp_point
    if np.any(mask):
        vals = arr[mask]
        if law.family == "power_log":
            inv = vals ** (-law.p)
            if law.k:
                inv = inv * np.log(vals) ** law.k
        else:
            inv = np.exp(-(vals ** law.delta))
        out[mask] = np.minimum(1.0, inv)
    if np.isscalar(x) or np.asarray(x).ndim == 0:
        return float(out[0])
    return out


def sample_omega(law: TailLaw, u: float) -> float:
    """Inverse-transform sample from one uniform u in (0, 1)."""
    if not 0.0 < u < 1.0:
        raise DomainError(f"u must be in (0, 1), got {u}")
    return f_inv(law, max(1.0 / u, law.f_at_clamp))


def sample_omega_array(law: TailLaw, u: np.ndarray) -> np.ndarray:
    """Vectorized :func:`sample_omega`; u must lie in (0, 1]."""
    y = np.maximum(1.0 / np.asarray(u, dtype=np.float64), law.f_at_clamp)
    return _f_inv_array(law, y)


def site_tail_prob(law: TailLaw, weight, gamma: float, x: float):
    """P(f(V(n))/gamma >= x) at sites of the given weight(s).

    Equals tail_prob(law, weight * f_inv(gamma * x)); for unit weights this is
    exactly 1/(gamma*x).
    """
    if gamma <= 0 or x <= 0:
        raise DomainError("gamma and x must be positive")
    threshold = f_inv(law, gamma * x)
    return tail_prob(law, np.asarray(weight, dtype=np.float64) * threshold) \
        if not np.isscalar(weight) else tail_prob(law, weight * threshold)
