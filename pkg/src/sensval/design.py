"""Study-design calculators built on the finite-sample law of the
transformed sensitivity value.

* :func:`critical_sample_size` -- when is it better to analyse only the
  subgroup with the larger effect?
* :func:`choose_score` / :func:`binary_score_grid` -- which score function
  maximises the predicted sensitivity value?
* :func:`split_rates` / :func:`split_minimum_sample` -- screening by sample
  splitting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .asymptotics import (
    AltModel,
    AsymptoticLaw,
    asymptotic_law,
    finite_center,
    g_function,
    kappa_law_finite,
    mu_F,
)
from .exceptions import BracketError, DomainError
from .numerics import Rng, find_root, integrate, norm_cdf, norm_isf, norm_quantile
from .scores import ScoreSpec, psi_norms

__all__ = [
    "SubgroupSpec",
    "critical_sample_size",
    "critical_sample_size_grid",
    "ScoreChoiceRow",
    "ScoreChoiceReport",
    "choose_score",
    "BinaryGrid",
    "binary_score_grid",
    "SplitSpec",
    "split_rates",
    "split_bound",
    "split_equalized_bound",
    "split_minimum_sample",
]

WILCOXON_SIGMA_Q_SQ = 4.0 / 3.0


@dataclass(frozen=True)
class SubgroupSpec:
    mu_F1: float
    mu_F2: float
    pi1: float
    alpha: float = 0.05
    sigma_q_sq: float = WILCOXON_SIGMA_Q_SQ

    def __post_init__(self):
        if not (0.5 <= self.mu_F2 < 1 and 0.5 <= self.mu_F1 < 1):
            raise DomainError("subgroup means must lie in [1/2, 1)")
        if self.mu_F1 < self.mu_F2:
            raise DomainError("subgroup 1 must have the larger mean")
        if not 0 < self.pi1 < 1:
            raise DomainError("pi1 must lie in (0, 1)")
        if not 0 < self.alpha < 1:
            raise DomainError("alpha must lie in (0, 1)")
        if not self.sigma_q_sq > 0:
            raise DomainError("sigma_q_sq must be positive")

    @property
    def pooled_mu(self) -> float:
        return self.pi1 * self.mu_F1 + (1.0 - self.pi1) * self.mu_F2

    @property
    def eta_scale(self) -> float:
        """``sigma_q^2 z_alpha^2``, so that ``eta = eta_scale / I``."""
        z = float(norm_isf(self.alpha))
        return self.sigma_q_sq * z * z

    def center_gap(self, eta: float) -> float:
        """Subgroup-1 center minus pooled center at pooled ``eta``."""
        return finite_center(self.mu_F1, eta / self.pi1) - finite_center(self.pooled_mu, eta)


_ETA_LO, _ETA_HI = 1e-8, 10.0


def critical_sample_size(sub: SubgroupSpec) -> tuple[float, float]:
    """Sample size ``I*`` above which the larger-effect subgroup alone wins.

    Solves ``center(pooled mu, eta) = center(mu_F1, eta / pi1)`` for ``eta``
    on ``(1e-8, 10]`` and returns ``(I*, eta*)`` with
    ``I* = sigma_q^2 z_alpha^2 / eta*``.  The bracket is scanned on a log
    grid first and the first sign change is refined.

    Raises
    ------
    DomainError
        If the subgroups have equal means (no crossing exists).
    BracketError
        If the centers do not cross inside the searched range.
    """
    if not sub.mu_F1 > sub.pooled_mu:
        raise DomainError("subgroups have equal means; pooling never loses, so there is no finite I*")
    grid = np.geomspace(_ETA_LO, _ETA_HI, 400)
    gaps = np.array([sub.center_gap(e) for e in grid])
    change = np.nonzero(np.sign(gaps[:-1]) != np.sign(gaps[1:]))[0]
    if change.size == 0:
        raise BracketError("subgroup and pooled centers do not cross for eta in (1e-8, 10]")
    k = change[0]
    eta = find_root(sub.center_gap, grid[k], grid[k + 1], tol=1e-14)
    return sub.eta_scale / eta, eta


def critical_sample_size_grid(
    pi1: float,
    n: int = 50,
    alpha: float = 0.05,
    sigma_q_sq: float = WILCOXON_SIGMA_Q_SQ,
    lo: float = 0.5,
    hi: float = 10.0 / 11.0,
) -> list[tuple[float, float, float]]:
    """``(mu_F1, mu_F2, I*)`` over an ``n x n`` equally spaced grid with ``mu_F1 > mu_F2``."""
    mus = np.linspace(lo, hi, n)
    rows = []
    for m1 in mus:
        for m2 in mus:
            if m1 <= m2:
                continue
            try:
                i_star, _ = critical_sample_size(SubgroupSpec(m1, m2, pi1, alpha, sigma_q_sq))
            except (DomainError, BracketError):
                i_star = math.nan
            rows.append((float(m1), float(m2), float(i_star)))
    return rows


@dataclass(frozen=True)
class ScoreChoiceRow:
    spec: ScoreSpec
    mu_F: float
    sigma_q_sq: float
    sigma_F_sq: float
    center: float
    sd: float
    value: float
    rank: int = 0


@dataclass
class ScoreChoiceReport:
    rows: list[ScoreChoiceRow]
    I: float
    alpha: float
    summary: str

    @property
    def best(self) -> ScoreChoiceRow:
        return self.rows[0]


def _summarize(center: float, sd: float, summary) -> float:
    if summary in ("mean", "median"):
        return center
    kind, p = summary
    if kind != "quantile":
        raise DomainError(f"unknown summary {summary!r}")
    return center + sd * float(norm_quantile(p))


def choose_score(
    candidates: Sequence[ScoreSpec],
    alt: AltModel,
    I: float,
    alpha: float = 0.05,
    summary="mean",
    rng: Rng | None = None,
    I_sim: int = 500,
    B: int = 2000,
    threads: int | None = 1,
) -> ScoreChoiceReport:
    """Rank candidate score functions by a summary of the predicted sensitivity value.

    ``summary`` is ``"mean"``, ``"median"`` (identical under the normal
    approximation) or ``("quantile", p)``.  At ``I = inf`` every summary
    reduces to ``mu_F``, so no variance is needed.
    """
    if not candidates:
        raise DomainError("need at least one candidate score")
    if isinstance(summary, str) and summary.startswith("quantile"):
        summary = ("quantile", float(summary.partition(":")[2]))
    rng = rng or Rng()
    rows = []
    for k, spec in enumerate(candidates):
        if math.isinf(I):
            mu = mu_F(spec, alt)
            law = AsymptoticLaw(mu, math.nan, psi_norms(spec)[2], "not_needed")
            center, sd = mu, 0.0
        else:
            law = asymptotic_law(spec, alt, I_sim, B, rng.substream(k), threads)
            center, sd = kappa_law_finite(law, alpha, I)
        rows.append(
            ScoreChoiceRow(spec, law.mu_F, law.sigma_q_sq, law.sigma_F_sq, center, sd, _summarize(center, sd, summary))
        )
    order = sorted(range(len(rows)), key=lambda i: (-rows[i].value, i))
    ranked = [
        ScoreChoiceRow(**{**rows[i].__dict__, "rank": r + 1}) for r, i in enumerate(order)
    ]
    label = summary if isinstance(summary, str) else f"quantile:{summary[1]:g}"
    return ScoreChoiceReport(ranked, I, alpha, label)


@dataclass
class BinaryGrid:
    taus: np.ndarray
    mean_kappa: np.ndarray  # [i, j] for tau_l = taus[i], tau_u = taus[j]; NaN where i >= j
    best_tau_l: float
    best_tau_u: float
    best_mean_kappa: float

    def rows(self):
        for i, tl in enumerate(self.taus):
            for j, tu in enumerate(self.taus):
                if j > i:
                    yield float(tl), float(tu), float(self.mean_kappa[i, j])


def binary_score_grid(alt: AltModel, I: float, alpha: float = 0.05, grid_step: float = 0.01) -> BinaryGrid:
    """Predicted mean of the transformed sensitivity value for every binary
    score ``(tau_l, tau_u)`` on a grid over ``[0, 1]``.

    Uses ``mu_F = int_{tau_l}^{tau_u} g / (tau_u - tau_l)`` and
    ``sigma_q^2 = 1 / (tau_u - tau_l)``; the integral of ``g`` is tabulated
    once on the grid.
    """
    if not 0 < grid_step <= 0.05:
        raise DomainError("grid_step must lie in (0, 0.05]")
    n = int(round(1.0 / grid_step))
    taus = np.linspace(0.0, 1.0, n + 1)
    g = lambda u: g_function(alt, min(max(u, 1e-300), float(np.nextafter(1.0, 0.0))))
    pieces = [integrate(g, tol=1e-10, lo=a, hi=b) for a, b in zip(taus[:-1], taus[1:])]
    G = np.concatenate([[0.0], np.cumsum(pieces)])
    z = float(norm_isf(alpha))
    means = np.full((n + 1, n + 1), np.nan)
    for i in range(n + 1):
        for j in range(i + 1, n + 1):
            width = taus[j] - taus[i]
            mu = (G[j] - G[i]) / width
            eta = 0.0 if math.isinf(I) else z * z / (width * I)
            means[i, j] = finite_center(mu, eta)
    i, j = np.unravel_index(np.nanargmax(means), means.shape)
    return BinaryGrid(taus, means, float(taus[i]), float(taus[j]), float(means[i, j]))


@dataclass(frozen=True)
class SplitSpec:
    """Sample-splitting screen: keep outcomes whose sensitivity value on a
    ``1 - zeta`` fraction, computed at level ``alpha_tilde``, exceeds ``kappa_tilde``."""

    zeta: float
    kappa_tilde: float
    alpha_tilde: float
    alpha_FP: float
    alpha_FN: float
    law: AsymptoticLaw
    null_law: AsymptoticLaw | None = field(default=None)

    def __post_init__(self):
        for name in ("zeta", "alpha_tilde", "alpha_FP", "alpha_FN"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise DomainError(f"{name} must lie in (0, 1), got {v!r}")
        if not 0 < self.kappa_tilde < 1:
            raise DomainError("kappa_tilde must lie in (0, 1)")
        if self.null_law is None:
            object.__setattr__(self, "null_law", AsymptoticLaw.null(self.law.sigma_q_sq))


def split_rates(split: SplitSpec, I: float) -> tuple[float, float]:
    """False positive rate (against the null law) and false negative rate
    (against ``split.law``) of the screening step on ``(1 - zeta) I`` pairs."""
    n = (1.0 - split.zeta) * I
    root_n = math.sqrt(n)
    z = float(norm_isf(split.alpha_tilde))
    k = split.kappa_tilde
    sq = split.law.sigma_q

    def exceed_prob(law: AsymptoticLaw) -> float:
        mu = law.mu_F
        arg = (-root_n * (mu - k) + sq * z * math.sqrt(mu * (1.0 - mu))) / law.sigma_F
        return float(norm_cdf(arg))

    fpr = 1.0 - exceed_prob(split.null_law)
    fnr = exceed_prob(split.law)
    return fpr, fnr


def split_bound(split: SplitSpec, alpha_tilde: float | None = None, kappa_tilde: float | None = None) -> float:
    """Lower bound on ``sqrt((1 - zeta) I)`` that keeps both error rates below target.

    The larger of ``(z_FP - z_tilde) (sigma_q / 2) / (kappa_tilde - 1/2)`` and
    ``(sigma_F z_FN + sigma_q z_tilde sqrt(mu_F (1 - mu_F))) / (mu_F - kappa_tilde)``.
    """
    a = split.alpha_tilde if alpha_tilde is None else alpha_tilde
    k = split.kappa_tilde if kappa_tilde is None else kappa_tilde
    mu = split.law.mu_F
    if not 0.5 < k < mu:
        raise DomainError("the bound needs 1/2 < kappa_tilde < mu_F")
    sq, sf = split.law.sigma_q, split.law.sigma_F
    zt = float(norm_isf(a))
    first = (float(norm_isf(split.alpha_FP)) - zt) * sq / 2.0 / (k - 0.5)
    second = (sf * float(norm_isf(split.alpha_FN)) + sq * zt * math.sqrt(mu * (1.0 - mu))) / (mu - k)
    return max(first, second)


def split_equalized_bound(split: SplitSpec, alpha_tilde: float) -> float:
    """Bound after choosing ``kappa_tilde`` so the two terms of :func:`split_bound` agree."""
    mu = split.law.mu_F
    sq, sf = split.law.sigma_q, split.law.sigma_F
    zt = float(norm_isf(alpha_tilde))
    num = (
        sf * float(norm_isf(split.alpha_FN))
        + sq * zt * math.sqrt(mu * (1.0 - mu))
        + (float(norm_isf(split.alpha_FP)) - zt) * sq / 2.0
    )
    return num / (mu - 0.5)


def split_minimum_sample(split: SplitSpec) -> tuple[float, float, float]:
    """Smallest ``(1 - zeta) I`` over ``(alpha_tilde, kappa_tilde)``.

    The optimum is at ``alpha_tilde = alpha_FP`` with ``kappa_tilde``
    decreasing to 1/2 (an infimum, not attained).  Returns
    ``(required (1 - zeta) I, alpha_FP, 0.5)``.

    Raises
    ------
    DomainError
        If ``mu_F <= 1/2``.
    """
    mu = split.law.mu_F
    if not mu > 0.5:
        raise DomainError("a screen needs mu_F > 1/2")
    root = split_equalized_bound(split, split.alpha_FP)
    return root * root, split.alpha_FP, 0.5
