"""Behaviour of the sensitivity value under a fixed alternative.

An :class:`AltModel` is the distribution ``F`` of a single pair difference
under random assignment with a genuine effect.  From it we get ``g(u)``,
the probability that a difference at absolute-value quantile ``u`` is
positive, the limit ``mu_F`` of the statistic, its variance ``sigma_F^2``,
and the normal laws of the transformed sensitivity value used for power and
design calculations.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate as _integrate

from ._parallel import pmap
from .exceptions import DomainError, ParseError
from .numerics import (
    Rng,
    find_root,
    integrate,
    norm_cdf,
    norm_isf,
    norm_pdf,
    t_cdf,
    t_log_density,
)
from .scores import ScoreSpec, psi_norms, score_vector, ustat_exact_scores
from .senscore import gamma_to_kappa

__all__ = [
    "AltModel",
    "AsymptoticLaw",
    "g_function",
    "mu_F",
    "wilcoxon_law",
    "sigma_F_simulated",
    "asymptotic_law",
    "kappa_law_asymptotic",
    "kappa_law_finite",
    "power",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_U_MAX = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class AltModel:
    """Distribution of a pair difference.

    Families: ``normal`` with ``(d, s)`` for ``N(d, s^2)``; ``t`` with
    ``(dof, d)`` for a Student-t shifted by ``d``; ``empirical`` with the
    observed samples.  The empirical model uses a Gaussian kernel with a
    small bandwidth wherever a density or continuous CDF is needed, and the
    raw samples for resampling and Wilcoxon pair probabilities.
    """

    family: str
    params: tuple = ()
    samples: tuple = ()

    def __post_init__(self):
        fam = self.family.lower()
        object.__setattr__(self, "family", fam)
        if fam == "normal":
            d, s = (float(v) for v in self.params)
            if not s > 0:
                raise DomainError(f"normal scale must be positive, got {s}")
            object.__setattr__(self, "params", (d, s))
        elif fam == "t":
            dof, d = (float(v) for v in self.params)
            if not dof > 0:
                raise DomainError(f"t degrees of freedom must be positive, got {dof}")
            object.__setattr__(self, "params", (dof, d))
        elif fam == "empirical":
            x = tuple(float(v) for v in self.samples)
            if len(x) < 2 or not all(math.isfinite(v) for v in x):
                raise DomainError("empirical model needs at least 2 finite samples")
            object.__setattr__(self, "samples", x)
            arr = np.asarray(x)
            sd = float(arr.std(ddof=1))
            h = 0.5 * 1.06 * sd * arr.size ** (-0.2) if sd > 0 else 1e-3 * max(1.0, float(np.abs(arr).max()))
            object.__setattr__(self, "params", (h,))
        else:
            raise DomainError(f"unknown alternative family {self.family!r}")

    @classmethod
    def normal(cls, d: float, s: float = 1.0) -> "AltModel":
        return cls("normal", (d, s))

    @classmethod
    def t(cls, dof: float, d: float) -> "AltModel":
        return cls("t", (dof, d))

    @classmethod
    def empirical(cls, samples) -> "AltModel":
        return cls("empirical", (), tuple(np.asarray(samples, dtype=float).ravel()))

    @classmethod
    def parse(cls, text: str) -> "AltModel":
        """Parse ``normal:d,s``, ``t:dof,d`` or ``empirical:<path>``."""
        name, _, rest = text.strip().partition(":")
        name = name.strip().lower()
        try:
            if name == "empirical":
                raw = Path(rest).read_text()
                vals = []
                for tok in re.split(r"[,\s]+", raw.strip()):
                    try:
                        vals.append(float(tok))
                    except ValueError:
                        continue
                return cls.empirical(vals)
            vals = tuple(float(v) for v in rest.split(",") if v.strip())
            if name == "normal" and len(vals) == 1:
                vals = vals + (1.0,)
            return cls(name, vals)
        except (ValueError, DomainError, OSError) as exc:
            raise ParseError(f"bad alternative spec {text!r}: {exc}") from exc

    def __str__(self):
        if self.family == "empirical":
            return f"empirical(n={len(self.samples)})"
        return f"{self.family}:" + ",".join(f"{v:g}" for v in self.params)

    @property
    def is_symmetric_null(self) -> bool:
        return (self.family == "normal" and self.params[0] == 0.0) or (
            self.family == "t" and self.params[1] == 0.0
        )

    # -- distribution functions ------------------------------------------

    def logpdf(self, y):
        y = np.asarray(y, dtype=float)
        if self.family == "normal":
            d, s = self.params
            z = (y - d) / s
            return -0.5 * z * z - _LOG_SQRT_2PI - math.log(s)
        if self.family == "t":
            dof, d = self.params
            return np.asarray(t_log_density(y - d, dof))
        (h,) = self.params
        x = np.asarray(self.samples)
        z = (y[..., None] - x) / h
        m = (-0.5 * z * z).max(axis=-1, keepdims=True)
        return (np.log(np.exp(-0.5 * z * z - m).mean(axis=-1)) + m[..., 0]) - _LOG_SQRT_2PI - math.log(h)

    def pdf(self, y):
        return np.exp(self.logpdf(y))

    def cdf(self, y):
        y = np.asarray(y, dtype=float)
        if self.family == "normal":
            d, s = self.params
            return norm_cdf((y - d) / s)
        if self.family == "t":
            dof, d = self.params
            return t_cdf(y - d, dof)
        (h,) = self.params
        return norm_cdf((y[..., None] - np.asarray(self.samples)) / h).mean(axis=-1)

    def sf(self, y):
        y = np.asarray(y, dtype=float)
        if self.family == "normal":
            d, s = self.params
            return norm_cdf((d - y) / s)
        if self.family == "t":
            dof, d = self.params
            return t_cdf(d - y, dof)
        (h,) = self.params
        return norm_cdf((np.asarray(self.samples) - y[..., None]) / h).mean(axis=-1)

    def abs_cdf(self, y):
        """``F+(y) = P(|Y| <= y) = F(y) - F(-y)`` for ``y >= 0``."""
        return self.cdf(y) - self.cdf(-np.asarray(y, dtype=float))

    def abs_sf(self, y):
        """``1 - F+(y) = S(y) + F(-y)``, accurate in the far tail."""
        return self.sf(y) + self.cdf(-np.asarray(y, dtype=float))

    def abs_quantile(self, u: float, tol: float = 1e-10) -> float:
        """``(F+)^{-1}(u)`` by bracketed root finding, growing the bracket geometrically."""
        if not 0.0 < u < 1.0:
            raise DomainError(f"u must lie in (0, 1), got {u!r}")
        if u <= 0.5:
            f = lambda y: float(self.abs_cdf(y)) - u
        else:
            f = lambda y: (1.0 - u) - float(self.abs_sf(y))
        hi = 1.0
        while f(hi) < 0:
            hi *= 2.0
            if hi > 1e300:
                raise DomainError(f"could not bracket the |Y| quantile at u={u!r}")
        lo = hi / 2.0 if hi > 1.0 else 0.0
        if f(lo) > 0:
            lo = 0.0
        return find_root(f, lo, hi, tol=tol * max(1.0, hi))

    def sample(self, gen: np.random.Generator, size) -> np.ndarray:
        if self.family == "normal":
            d, s = self.params
            return gen.normal(d, s, size)
        if self.family == "t":
            dof, d = self.params
            return gen.standard_t(dof, size) + d
        return gen.choice(np.asarray(self.samples), size=size, replace=True)


def g_function(alt: AltModel, u: float) -> float:
    """Probability that a difference at absolute-value quantile ``u`` is positive.

    ``g(u) = f(y) / (f(y) + f(-y))`` with ``y = (F+)^{-1}(u)``, computed from
    log densities so it stays accurate far in the tail.
    """
    if not 0.0 < u < 1.0:
        raise DomainError(f"u must lie in (0, 1), got {u!r}")
    y = alt.abs_quantile(u)
    diff = float(alt.logpdf(-y) - alt.logpdf(y))
    if diff > 700:
        return 0.0
    return 1.0 / (1.0 + math.exp(diff))


def _g_safe(alt: AltModel, u: float) -> float:
    return g_function(alt, min(max(u, 1e-300), _U_MAX))


def _psi_l1(spec: ScoreSpec) -> float:
    if spec.family in ("beta", "binary"):
        return 1.0
    return psi_norms(spec)[0]


def mu_F(spec: ScoreSpec, alt: AltModel, tol: float = 1e-8) -> float:
    """Limit of the signed score statistic, ``<psi, g> / ||psi||_1``, by quadrature."""
    if alt.is_symmetric_null:
        return 0.5
    if spec.family == "binary":
        tl, tu = spec.params
        val = integrate(lambda u: _g_safe(alt, u), tol=tol, lo=tl, hi=tu)
        return val / (tu - tl)
    val = integrate(lambda u: float(spec.psi(u)) * _g_safe(alt, u), tol=tol)
    return val / _psi_l1(spec)


@dataclass(frozen=True)
class AsymptoticLaw:
    """Normal limit of the statistic: mean ``mu_F``, variance ``sigma_F_sq / I``."""

    mu_F: float
    sigma_F_sq: float
    sigma_q_sq: float
    provenance: str = "closed_form"

    @property
    def design_sensitivity(self) -> float:
        return math.inf if self.mu_F >= 1.0 else self.mu_F / (1.0 - self.mu_F)

    @property
    def sigma_F(self) -> float:
        return math.sqrt(self.sigma_F_sq)

    @property
    def sigma_q(self) -> float:
        return math.sqrt(self.sigma_q_sq)

    @classmethod
    def null(cls, sigma_q_sq: float) -> "AsymptoticLaw":
        """Law under no effect: ``mu_F = 1/2`` and ``sigma_F^2 = sigma_q^2 / 4``."""
        return cls(0.5, sigma_q_sq / 4.0, sigma_q_sq, "null")


def _pair_probabilities(alt: AltModel) -> tuple[float, float]:
    """``P(Y1 + Y2 > 0)`` and ``P(Y1 + Y2 > 0, Y1 + Y3 > 0)``."""
    if alt.family == "normal":
        d, s = alt.params
        shift = 2.0 * d / s
        mu = float(norm_cdf(math.sqrt(2.0) * d / s))
        p2 = _integrate.quad(
            lambda z: norm_pdf(z) * float(norm_cdf(shift + z)) ** 2, -np.inf, np.inf,
            epsabs=1e-13, epsrel=1e-12, limit=200,
        )[0]
        return mu, float(p2)
    if alt.family == "t":
        # conditional on Y1 = x, P(Y2 > -x) = F(x + 2d) in the centred variable
        dof, d = alt.params
        f0 = lambda x: math.exp(t_log_density(x, dof))
        cond = lambda x: float(t_cdf(x + 2.0 * d, dof))
        opts = dict(epsabs=1e-13, epsrel=1e-12, limit=400)
        mu = _integrate.quad(lambda x: f0(x) * cond(x), -np.inf, np.inf, **opts)[0]
        p2 = _integrate.quad(lambda x: f0(x) * cond(x) ** 2, -np.inf, np.inf, **opts)[0]
        return float(mu), float(p2)
    x = np.asarray(alt.samples)
    frac = np.array([(xi + x > 0).mean() for xi in x])
    return float(frac.mean()), float((frac**2).mean())


def wilcoxon_law(alt: AltModel, reading: str = "standard") -> AsymptoticLaw:
    """Closed-form law of Wilcoxon's signed rank statistic.

    ``mu_F = P(Y1 + Y2 > 0)`` and
    ``sigma_F^2 = 4 [P(Y1 + Y2 > 0, Y1 + Y3 > 0) - mu_F^2]``.

    ``reading="printed"`` evaluates the alternative arrangement
    ``4 [mu_F - P(Y1 + Y2 > 0, Y1 + Y3 > 0)^2]`` instead; it is kept only for
    auditing and does not give the variance of the statistic.
    """
    mu, p2 = _pair_probabilities(alt)
    if reading == "standard":
        var = 4.0 * (p2 - mu * mu)
    elif reading == "printed":
        var = 4.0 * (mu - p2 * p2)
    else:
        raise DomainError(f"unknown reading {reading!r}")
    return AsymptoticLaw(mu, max(var, 0.0), 4.0 / 3.0, f"closed_form:{reading}")


def _rank_scores(spec: ScoreSpec, I: int) -> np.ndarray:
    """Scores by rank ``1..I`` for tie-free data without zeros."""
    if spec.family == "wilcoxon":
        return np.arange(1, I + 1, dtype=float)
    if spec.family == "ustat" and I >= spec.params[0]:
        return ustat_exact_scores(I, *spec.params)
    return np.asarray(spec.psi(np.arange(1, I + 1) / (I + 1.0)), dtype=float)


def _simulate_T(spec: ScoreSpec, alt: AltModel, I: int, B: int, rng: Rng) -> np.ndarray:
    gen = rng.generator()
    y = alt.sample(gen, (B, I))
    absy = np.abs(y)
    tie_free = np.all(y != 0) and all(np.unique(row).size == I for row in absy)
    if tie_free:
        table = _rank_scores(spec, I)
        order = np.argsort(absy, axis=1)
        pos = np.take_along_axis(y, order, axis=1) > 0
        return pos @ table / table.sum()
    out = np.empty(B)
    for b in range(B):
        sv = score_vector(spec, y[b])
        out[b] = sv.q[y[b] > 0].sum() / sv.sum_q if sv.sum_q > 0 else math.nan
    return out


_SIM_BLOCK = 250


def simulate_statistic(
    spec: ScoreSpec, alt: AltModel, I: int, B: int, rng: Rng, threads: int | None = 1
) -> np.ndarray:
    """``B`` draws of the signed score statistic on ``I`` iid pairs from ``alt``.

    Replicates are generated in fixed blocks, each from its own substream,
    so the output does not depend on ``threads``.
    """
    blocks = [(k, min(_SIM_BLOCK, B - start)) for k, start in enumerate(range(0, B, _SIM_BLOCK))]
    parts = pmap(lambda kb: _simulate_T(spec, alt, I, kb[1], rng.substream(kb[0])), blocks, threads)
    return np.concatenate(parts)


def sigma_F_simulated(
    spec: ScoreSpec,
    alt: AltModel,
    I_sim: int = 500,
    B: int = 2000,
    rng: Rng | None = None,
    threads: int | None = 1,
) -> float:
    """Sample variance of ``sqrt(I_sim) * T`` over ``B`` simulated datasets."""
    if I_sim < 30:
        raise DomainError("I_sim must be at least 30")
    if B < 1000:
        raise DomainError("B must be at least 1000")
    t = simulate_statistic(spec, alt, I_sim, B, rng or Rng(), threads)
    t = t[np.isfinite(t)]
    return float(I_sim * t.var(ddof=1))


_CLOSED_FORM_SPECS = (ScoreSpec.wilcoxon(), ScoreSpec.ustat(2, 2, 2), ScoreSpec.beta(2, 1))


def asymptotic_law(
    spec: ScoreSpec,
    alt: AltModel,
    I_sim: int = 500,
    B: int = 2000,
    rng: Rng | None = None,
    threads: int | None = 1,
) -> AsymptoticLaw:
    """Law for any score family: ``mu_F`` by quadrature, ``sigma_F^2`` in
    closed form for Wilcoxon-equivalent scores and by simulation otherwise."""
    mu = mu_F(spec, alt)
    _, _, sq = psi_norms(spec)
    if spec in _CLOSED_FORM_SPECS:
        var = wilcoxon_law(alt).sigma_F_sq
        prov = "closed_form"
    elif alt.is_symmetric_null:
        var = sq / 4.0
        prov = "null"
    else:
        var = sigma_F_simulated(spec, alt, I_sim, B, rng or Rng(), threads)
        seed = (rng or Rng()).seed
        prov = f"simulated(B={B}, I_sim={I_sim}, seed={seed})"
    return AsymptoticLaw(mu, var, sq, prov)


def kappa_law_asymptotic(law: AsymptoticLaw, alpha: float, I: float) -> tuple[float, float]:
    """Mean and sd of the limiting normal law of the transformed sensitivity value.

    ``mean = mu_F - sigma_q z_alpha sqrt(mu_F (1 - mu_F)) / sqrt(I)``,
    ``sd = sigma_F / sqrt(I)``.
    """
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    if not I >= 1:
        raise DomainError("I must be at least 1")
    if math.isinf(I):
        return law.mu_F, 0.0
    z = float(norm_isf(alpha))
    root_i = math.sqrt(I)
    mu = law.mu_F
    return mu - law.sigma_q * z * math.sqrt(mu * (1 - mu)) / root_i, law.sigma_F / root_i


def _finite_center_sd(mu: float, eta: float, sigma_F: float, I: float) -> tuple[float, float]:
    if eta == 0.0:
        return mu, (0.0 if math.isinf(I) else sigma_F / math.sqrt(I))
    r = math.sqrt(4.0 * eta * mu * (1.0 - mu) + eta * eta)
    center = mu - ((2.0 * mu - 1.0) * eta + r) / (2.0 * (1.0 + eta))
    if math.isinf(I):
        return center, 0.0
    sd = sigma_F / (math.sqrt(I) * (1.0 + eta)) * abs(1.0 + eta * (2.0 * mu - 1.0) / r)
    return center, sd


def finite_center(mu: float, eta: float) -> float:
    """Center of the finite-sample approximation as a function of ``(mu_F, eta)``."""
    return _finite_center_sd(mu, eta, 0.0, math.inf)[0]


def kappa_law_finite(law: AsymptoticLaw, alpha: float, I: float) -> tuple[float, float]:
    """Finite-sample normal approximation with ``eta = sigma_q^2 z_alpha^2 / I``.

    center = mu_F - ((2 mu_F - 1) eta + sqrt(4 eta mu_F (1 - mu_F) + eta^2)) / (2 (1 + eta))
    sd     = sigma_F / (sqrt(I) (1 + eta)) * (1 + eta (2 mu_F - 1) / sqrt(4 eta mu_F (1 - mu_F) + eta^2))
    """
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    if not I >= 1:
        raise DomainError("I must be at least 1")
    z = float(norm_isf(alpha))
    eta = 0.0 if math.isinf(I) else law.sigma_q_sq * z * z / I
    return _finite_center_sd(law.mu_F, eta, law.sigma_F, I)


def power(law: AsymptoticLaw, alpha: float, I: float, gamma: float, version: str = "asymptotic") -> float:
    """Power of a sensitivity analysis at sensitivity level ``gamma``.

    ``version``:
      * ``"asymptotic"`` -- ``Phi((sqrt(I)(mu_F - kappa) - sigma_q z_alpha sqrt(mu_F(1-mu_F))) / sigma_F)``
      * ``"finite"`` -- ``P(kappa* > kappa)`` under :func:`kappa_law_finite`
      * ``"no_constant"`` -- ``Phi(sqrt(I)(mu_F - kappa) / sigma_F)``
    """
    kappa = float(gamma_to_kappa(gamma))
    if version == "asymptotic":
        mean, sd = kappa_law_asymptotic(law, alpha, I)
    elif version == "finite":
        mean, sd = kappa_law_finite(law, alpha, I)
    elif version == "no_constant":
        mean, sd = law.mu_F, (law.sigma_F / math.sqrt(I) if not math.isinf(I) else 0.0)
    else:
        raise DomainError(f"unknown power version {version!r}")
    if sd == 0.0:
        return 1.0 if mean > kappa else 0.0
    return float(norm_cdf((mean - kappa) / sd))
