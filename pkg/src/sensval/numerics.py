"""Numeric kernel: normal and Student-t distribution functions, bracketed
root finding, quadrature on (0, 1), and a seeded generator with
reproducible substreams.

The heavy lifting is delegated to scipy (``special.ndtr``/``ndtri``,
``special.stdtr``, ``optimize.brentq``, ``integrate.quad``) and to numpy's
``SeedSequence``; this module pins down domains, error behaviour and
tolerances so the rest of the package does not touch those APIs directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate as _integrate
from scipy import optimize as _optimize
from scipy import special as _special

from .exceptions import BracketError, DomainError, IntegrationError

__all__ = [
    "norm_cdf",
    "norm_sf",
    "norm_pdf",
    "norm_quantile",
    "norm_isf",
    "t_density",
    "t_log_density",
    "t_cdf",
    "t_sf",
    "find_root",
    "integrate",
    "Rng",
]


def norm_cdf(x):
    """Standard normal CDF. Accepts scalars or arrays."""
    return _special.ndtr(x)


def norm_sf(x):
    """Standard normal upper tail ``1 - norm_cdf(x)``, accurate in the tail."""
    return _special.ndtr(np.negative(x))


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return out if out.ndim else float(out)


def _check_prob(p):
    arr = np.asarray(p, dtype=float)
    if np.any(~(arr > 0.0)) or np.any(~(arr < 1.0)):
        raise DomainError(f"probability must lie in (0, 1), got {p!r}")


def norm_quantile(p):
    """Inverse of :func:`norm_cdf` on (0, 1).

    Raises
    ------
    DomainError
        If any ``p`` is outside the open unit interval.
    """
    _check_prob(p)
    return _special.ndtri(p)


def norm_isf(alpha):
    """Upper-``alpha`` quantile of the standard normal, ``norm_quantile(1 - alpha)``.

    Computed as ``-ndtri(alpha)`` so small ``alpha`` keeps full precision.
    """
    _check_prob(alpha)
    return -_special.ndtri(alpha)


def _check_dof(dof):
    if not dof > 0:
        raise DomainError(f"degrees of freedom must be positive, got {dof!r}")


def t_log_density(x, dof):
    _check_dof(dof)
    x = np.asarray(x, dtype=float)
    v = float(dof)
    const = (
        _special.gammaln((v + 1.0) / 2.0)
        - _special.gammaln(v / 2.0)
        - 0.5 * math.log(v * math.pi)
    )
    out = const - (v + 1.0) / 2.0 * np.log1p(x * x / v)
    return out if out.ndim else float(out)


def t_density(x, dof):
    """Student-t density with ``dof`` degrees of freedom."""
    out = np.exp(t_log_density(x, dof))
    return out if np.ndim(out) else float(out)


def t_cdf(x, dof):
    _check_dof(dof)
    return _special.stdtr(dof, x)


def t_sf(x, dof):
    _check_dof(dof)
    return _special.stdtr(dof, np.negative(x))


def find_root(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12) -> float:
    """Root of a monotone function inside ``[lo, hi]``.

    Brent's method; the returned point lies in a bracket of width at most
    ``tol`` (absolute) around the true root.

    Raises
    ------
    BracketError
        If ``f(lo)`` and ``f(hi)`` have the same strict sign.
    """
    flo, fhi = f(lo), f(hi)
    if not (np.isfinite(flo) and np.isfinite(fhi)):
        raise BracketError(f"non-finite function value at bracket ends: f({lo})={flo}, f({hi})={fhi}")
    if flo == 0.0:
        return float(lo)
    if fhi == 0.0:
        return float(hi)
    if (flo > 0) == (fhi > 0):
        raise BracketError(f"no sign change on [{lo}, {hi}]: f(lo)={flo:.6g}, f(hi)={fhi:.6g}")
    return float(_optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500))


def integrate(
    f: Callable[[float], float],
    tol: float = 1e-10,
    lo: float = 0.0,
    hi: float = 1.0,
    points=None,
) -> float:
    """Adaptive Gauss-Kronrod quadrature of ``f`` over ``(lo, hi)``.

    QUADPACK's QAGS never evaluates the endpoints and extrapolates across
    integrable endpoint singularities such as ``u**-0.4``.

    Raises
    ------
    IntegrationError
        If ``f`` returns a non-finite value or the error estimate exceeds
        ``max(100 * tol, 1e-6)``.
    """

    def checked(u):
        v = f(u)
        if not np.isfinite(v):
            raise IntegrationError(f"integrand is not finite at u={u!r}: {v!r}")
        return v

    value, err = _integrate.quad(
        checked, lo, hi, epsabs=tol, epsrel=tol, limit=500, points=points
    )
    if not np.isfinite(value) or err > max(100 * tol, 1e-6) * max(1.0, abs(value)):
        raise IntegrationError(f"quadrature did not converge: value={value!r}, error={err!r}")
    return float(value)


@dataclass(frozen=True)
class Rng:
    """Seeded generator factory with independent, reproducible substreams.

    ``Rng(seed, stream_id)`` always yields the same numpy ``Generator``
    regardless of what other streams have been drawn from; substreams are
    addressed by a path of integers through ``SeedSequence.spawn_key``.

    >>> a = Rng(7, 3).generator().random()
    >>> b = Rng(7, 3).generator().random()
    >>> a == b
    True
    """

    seed: int = 0
    stream_id: int = 0
    path: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0 or any(k < 0 for k in self.path):
            raise DomainError("seed, stream_id and substream indices must be nonnegative")

    def substream(self, k: int) -> "Rng":
        return Rng(self.seed, self.stream_id, self.path + (int(k),))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,) + self.path)
        return np.random.Generator(np.random.PCG64(ss))
