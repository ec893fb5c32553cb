"""Special functions, adaptive quadrature and bracketed root finding.

Thin contract layer over :mod:`scipy.special`, :mod:`scipy.integrate` and
:mod:`scipy.optimize`. Every routine validates its inputs and turns silent
library warnings into explicit exceptions so that callers never consume an
unconverged number.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, optimize, special


class NumericsError(Exception):
    """Base class for numerical failures."""


class DomainError(NumericsError, ValueError):
    pass


class ConvergenceError(NumericsError):
    """Quadrature ran out of subdivisions.

    The best available estimate and its error bound are kept on the
    exception so the caller can decide whether they are good enough.
    """

    def __init__(self, message: str, estimate: float, error: float):
        super().__init__(f"{message} (estimate={estimate!r}, error={error!r})")
        self.estimate = estimate
        self.error = error


class BracketError(NumericsError, ValueError):
    pass


@dataclass(frozen=True)
class QuadratureSpec:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_subdivisions: int = 2000

    def __post_init__(self):
        if not self.abs_tol > 0 or not self.rel_tol > 0:
            raise ValueError("abs_tol and rel_tol must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")


DEFAULT_QUADRATURE = QuadratureSpec()


def _check_finite(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite, got {x!r}")
    return arr


def bessel_i0(x):
    """Modified Bessel function of the first kind, order zero.

    Monotone to within a few ulp (the underlying Chebyshev kernels are not
    monotone at the last bit).
    """
    arr = _check_finite(x)
    if np.any(arr < 0):
        raise DomainError(f"bessel_i0 requires x >= 0, got {x!r}")
    out = np.maximum(special.i0(arr), 1.0)
    return float(out) if out.ndim == 0 else out


def bessel_i0_scaled(x):
    """``exp(-x) * I0(x)``, which stays bounded for large ``x``."""
    arr = _check_finite(x)
    if np.any(arr < 0):
        raise DomainError(f"bessel_i0_scaled requires x >= 0, got {x!r}")
    out = np.minimum(special.i0e(arr), 1.0)
    return float(out) if out.ndim == 0 else out


def bessel_j0(x):
    """Bessel function of the first kind, order zero."""
    arr = _check_finite(x)
    out = special.j0(arr)
    return float(out) if out.ndim == 0 else out


def integrate_1d(
    f: Callable[[float], float],
    a: float,
    b: float,
    spec: QuadratureSpec = DEFAULT_QUADRATURE,
    points=None,
) -> float:
    """Adaptive Gauss-Kronrod integral of ``f`` over ``[a, b]``.

    ``b`` may be ``math.inf``. ``points`` lists interior breakpoints
    (discontinuities of ``f``) and is only honoured on finite ranges.
    """
    if math.isnan(a) or math.isnan(b) or math.isinf(a):
        raise DomainError(f"invalid integration range [{a}, {b}]")
    if b == a:
        return 0.0
    if b < a:
        return -integrate_1d(f, b, a, spec, points)
    kwargs = dict(epsabs=spec.abs_tol, epsrel=spec.rel_tol, limit=spec.max_subdivisions)
    if points is not None and math.isfinite(b):
        inner = [p for p in points if a < p < b]
        if inner:
            kwargs["points"] = inner
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, err = integrate.quad(f, a, b, **kwargs)
        except integrate.IntegrationWarning as exc:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", integrate.IntegrationWarning)
                value, err = integrate.quad(f, a, b, **kwargs)
            raise ConvergenceError(str(exc).splitlines()[0], value, err) from None
    return float(value)


def integrate_2d(
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    x_range: tuple[float, float],
    y_range: tuple[float, float],
    spec: QuadratureSpec = DEFAULT_QUADRATURE,
) -> float:
    """Globally adaptive tensor Gauss-Kronrod cubature over a rectangle.

    ``f(x, y)`` receives equally shaped arrays and must return an array of
    the same shape. Upper limits may be ``math.inf``.
    """
    (x0, x1), (y0, y1) = x_range, y_range
    if x1 <= x0 or y1 <= y0:
        if x1 == x0 or y1 == y0:
            return 0.0
        raise DomainError(f"empty rectangle {x_range} x {y_range}")

    def vec(pts):
        return f(pts[:, 0], pts[:, 1])

    res = integrate.cubature(
        vec,
        [x0, y0],
        [x1, y1],
        rule="gk21",
        rtol=spec.rel_tol,
        atol=spec.abs_tol,
        max_subdivisions=spec.max_subdivisions,
    )
    if res.status != "converged":
        raise ConvergenceError(
            "2-D cubature did not converge", float(res.estimate), float(res.error)
        )
    return float(res.estimate)


def find_root_bracketed(
    f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12
) -> float:
    """Root of ``f`` inside ``[lo, hi]`` by Brent's bracketed method."""
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if not (np.isfinite(flo) and np.isfinite(fhi)) or flo * fhi > 0:
        raise BracketError(f"f({lo})={flo!r} and f({hi})={fhi!r} do not bracket a root")
    return float(optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500))
