"""Signed score statistic, p-value bounds under the Gamma sensitivity model,
and sensitivity values.

Throughout, ``kappa = Gamma / (1 + Gamma)`` and the upper bounding variable
is ``sum_i q_i W_i / sum_i q_i`` with ``W_i ~ Bernoulli(kappa)``.  Three
ways of evaluating its tail are provided: the normal approximation, Monte
Carlo with common random numbers, and exact enumeration for small ``I``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .exceptions import BudgetError, DegenerateSampleError, DomainError, ParseError
from .numerics import Rng, norm_isf, norm_sf
from .scores import PairDiffs, ScoreSpec, ScoreVector, score_vector

__all__ = [
    "Tail",
    "Method",
    "GammaBound",
    "SensResult",
    "statistic",
    "pvalue_bounds_normal",
    "pvalue_bounds_mc",
    "pvalue_bounds_exact",
    "kappa_star_closed",
    "kappa_closed_formula",
    "kappa_star_search",
    "two_sided",
    "sensitivity_table",
    "sensitivity_value",
    "gamma_to_kappa",
    "kappa_to_gamma",
    "EXACT_MAX_I",
]

EXACT_MAX_I = 22
DEFAULT_B = 100_000
DEFAULT_TOL = 1e-4
# relative slack when comparing a bounding-variable draw with the observed sum
_TIE_EPS = 1e-9


class Tail(str, Enum):
    GREATER = "greater"
    LESS = "less"
    TWO_SIDED = "two_sided"

    @classmethod
    def parse(cls, text) -> "Tail":
        if isinstance(text, Tail):
            return text
        key = str(text).strip().lower().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ParseError(f"unknown tail {text!r}; expected greater, less or two-sided") from None


@dataclass(frozen=True)
class Method:
    """How the bounding-variable tail is evaluated.

    ``kind`` is one of ``"normal"``, ``"mc"`` or ``"exact"``.  Monte Carlo
    draws come from ``Rng(seed, stream)``.
    """

    kind: str = "normal"
    B: int = DEFAULT_B
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        if self.kind not in ("normal", "mc", "exact"):
            raise DomainError(f"unknown method kind {self.kind!r}")
        if self.kind == "mc" and self.B < 1:
            raise DomainError("Monte Carlo needs B >= 1")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "Method":
        """Parse ``approx``, ``normal``, ``exact`` or ``mc:<B>``."""
        t = text.strip().lower()
        if t in ("approx", "normal", "normal_approx"):
            return cls("normal", seed=seed)
        if t in ("exact", "exact_enum"):
            return cls("exact", seed=seed)
        if t == "mc" or t.startswith("mc:"):
            _, _, b = t.partition(":")
            try:
                B = int(float(b)) if b else DEFAULT_B
            except ValueError:
                raise ParseError(f"bad Monte Carlo size in {text!r}") from None
            if B < 1:
                raise ParseError(f"Monte Carlo size must be >= 1 in {text!r}")
            return cls("mc", B=B, seed=seed)
        raise ParseError(f"unknown method {text!r}; expected approx, exact or mc:<B>")

    def with_stream(self, stream: int) -> "Method":
        return Method(self.kind, self.B, self.seed, stream)

    @property
    def label(self) -> str:
        if self.kind == "normal":
            return "normal_approx"
        if self.kind == "exact":
            return "exact_enum"
        return f"monte_carlo(B={self.B}, seed={self.seed})"


NORMAL = Method("normal")


@dataclass(frozen=True)
class GammaBound:
    gamma: float
    p_upper: float
    p_lower: float
    method: str


@dataclass(frozen=True)
class SensResult:
    kappa_star: float
    gamma_star: float
    gamma_star_trunc: float
    alpha: float
    tail: Tail
    method: str
    statistic: float = math.nan
    effective_I: int = 0
    flags: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        def num(v):
            return None if (v is None or not math.isfinite(v)) else float(v)

        return {
            "statistic": num(self.statistic),
            "kappa_star": num(self.kappa_star),
            "gamma_star": num(self.gamma_star),
            "gamma_star_trunc": num(self.gamma_star_trunc),
            "alpha": self.alpha,
            "tail": self.tail.value,
            "method": self.method,
            "effective_I": int(self.effective_I),
            "flags": list(self.flags),
        }


def gamma_to_kappa(gamma):
    g = np.asarray(gamma, dtype=float)
    with np.errstate(invalid="ignore"):
        out = np.where(np.isinf(g), 1.0, g / (1.0 + g))
    return out if out.ndim else float(out)


def kappa_to_gamma(kappa: float) -> float:
    if kappa >= 1.0:
        return math.inf
    return kappa / (1.0 - kappa)


def _make_result(kappa, alpha, tail, method_label, t, n, flags=()) -> SensResult:
    kappa = float(min(max(kappa, 0.0), 1.0))
    g = kappa_to_gamma(kappa)
    return SensResult(kappa, g, max(g, 1.0), alpha, Tail.parse(tail), method_label, t, n, tuple(flags))


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")


def _positive_sum(sv: ScoreVector, d: PairDiffs | np.ndarray, tail=Tail.GREATER) -> float:
    y = d.y if isinstance(d, PairDiffs) else np.asarray(d, dtype=float)
    if y.shape != sv.q.shape:
        raise DomainError("scores and differences have different lengths")
    mask = y > 0 if Tail.parse(tail) is Tail.GREATER else y < 0
    return float(sv.q[mask].sum())


def statistic(sv: ScoreVector, d: PairDiffs | np.ndarray, tail=Tail.GREATER) -> float:
    """Signed score statistic ``sum 1{Y_i > 0} q_i / sum q_i``.

    With ``tail="less"`` the sign indicator is ``1{Y_i < 0}``, i.e. the
    statistic of ``-Y``.

    Raises
    ------
    DegenerateSampleError
        If every score is zero.
    """
    if not sv.sum_q > 0:
        raise DegenerateSampleError("all scores are zero; the statistic is undefined")
    return _positive_sum(sv, d, tail) / sv.sum_q


# ---------------------------------------------------------------------------
# bounding-variable tails as functions of kappa


def _normal_upper(sv: ScoreVector, t: float, kappa, effective_I=None):
    n = sv.effective_I if effective_I is None else int(effective_I)
    kappa = np.asarray(kappa, dtype=float)
    sd = np.sqrt(kappa * (1.0 - kappa) * sv.sigma_qI_sq)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = math.sqrt(n) * (t - kappa) / sd
    p = np.where(sd > 0, norm_sf(z), np.where(t <= kappa, 1.0, 0.0))
    return p if p.ndim else float(p)


class _CrnTail:
    """Monte Carlo upper tail with common random numbers across kappa.

    Row ``b`` of a ``B x n`` uniform matrix gives draws ``W_i = 1{U_bi < kappa}``
    for every kappa simultaneously.  Its bounding sum is nondecreasing in
    kappa, so it first reaches the observed sum at a single threshold
    ``kappa_b``; the add-one p-value is then ``(1 + #{kappa_b < kappa}) / (B + 1)``.
    """

    _CHUNK = 8192

    def __init__(self, q: np.ndarray, B: int, rng: Rng):
        self.q = np.asarray(q, dtype=float)
        self.B = int(B)
        self.rng = rng
        self._cache: dict[float, np.ndarray] = {}

    def thresholds(self, obs: float) -> np.ndarray:
        key = float(obs)
        if key in self._cache:
            return self._cache[key]
        q = self.q
        n = q.size
        target = obs - _TIE_EPS * max(q.sum(), 1.0)
        gen = self.rng.generator()
        out = np.empty(self.B)
        if target <= 0:
            out[:] = 0.0
        else:
            for start in range(0, self.B, self._CHUNK):
                rows = min(self._CHUNK, self.B - start)
                u = gen.random((rows, n))
                order = np.argsort(u, axis=1)
                csum = np.cumsum(q[order], axis=1)
                idx = np.argmax(csum >= target, axis=1)
                out[start:start + rows] = np.take_along_axis(u, order, axis=1)[np.arange(rows), idx]
        out.sort()
        self._cache[key] = out
        return out

    def upper(self, obs: float, kappa):
        th = self.thresholds(obs)
        kappa = np.asarray(kappa, dtype=float)
        if obs - _TIE_EPS * max(self.q.sum(), 1.0) <= 0:
            count = np.full(kappa.shape, self.B)
        else:
            count = np.searchsorted(th, kappa, side="left")
        p = (1.0 + count) / (self.B + 1.0)
        return p if p.ndim else float(p)


class _ExactTail:
    """Exact upper tail by enumerating all ``2**n`` sign patterns.

    The tail is a polynomial in kappa, ``sum_k N_k kappa^k (1-kappa)^(n-k)``,
    with ``N_k`` the number of patterns with ``k`` positives reaching the
    observed sum; the ``N_k`` are computed once per observed sum.
    """

    def __init__(self, q: np.ndarray):
        q = np.asarray(q, dtype=float)
        if q.size > EXACT_MAX_I:
            raise BudgetError(
                f"exact enumeration limited to {EXACT_MAX_I} nonzero scores, got {q.size}; "
                "use the Monte Carlo method instead"
            )
        self.q = q
        sums = np.zeros(1)
        pos = np.zeros(1, dtype=np.int8)
        for qi in q:
            sums = np.concatenate([sums, sums + qi])
            pos = np.concatenate([pos, pos + 1])
        self._sums = sums
        self._pos = pos
        self._cache: dict[float, np.ndarray] = {}

    def counts(self, obs: float) -> np.ndarray:
        key = float(obs)
        if key not in self._cache:
            target = obs - _TIE_EPS * max(self.q.sum(), 1.0)
            hit = self._sums >= target
            self._cache[key] = np.bincount(self._pos[hit], minlength=self.q.size + 1).astype(float)
        return self._cache[key]

    def upper(self, obs: float, kappa):
        n_k = self.counts(obs)
        n = self.q.size
        kappa = np.asarray(kappa, dtype=float)
        k = np.arange(n + 1)
        kk = kappa[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = n_k * np.where(n_k > 0, kk ** k * (1.0 - kk) ** (n - k), 0.0)
        p = np.clip(terms.sum(axis=-1), 0.0, 1.0)
        return p if p.ndim else float(p)


def _tail_engine(sv: ScoreVector, method: Method):
    qpos = sv.q[sv.q > 0]
    if method.kind == "exact":
        return _ExactTail(qpos)
    if method.kind == "mc":
        return _CrnTail(qpos, method.B, Rng(method.seed, method.stream))
    return None


class _UpperTail:
    """``kappa -> p_upper`` for a fixed score vector, observed sum and method."""

    def __init__(self, sv: ScoreVector, obs: float, method: Method, engine=None, effective_I=None):
        self.sv = sv
        self.obs = obs
        self.t = obs / sv.sum_q
        self.method = method
        self.engine = engine if engine is not None else _tail_engine(sv, method)
        self.effective_I = effective_I

    def __call__(self, kappa):
        if self.method.kind == "normal":
            return _normal_upper(self.sv, self.t, kappa, self.effective_I)
        return self.engine.upper(self.obs, kappa)


def _bound(upper: _UpperTail, gamma: float, label: str) -> GammaBound:
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma!r}")
    k_hi = gamma_to_kappa(gamma)
    k_lo = gamma_to_kappa(1.0 / gamma)
    return GammaBound(float(gamma), float(upper(k_hi)), float(upper(k_lo)), label)


def pvalue_bounds_normal(sv: ScoreVector, t: float, gamma: float, effective_I: int | None = None) -> GammaBound:
    """Normal-approximation bounds ``(p_lower, p_upper)`` at ``gamma``.

    ``p_upper = P(N(kappa, kappa(1-kappa) sigma_qI^2 / I) >= t)`` and the
    lower bound is the upper bound at ``1 / gamma``.
    """
    if not sv.sum_q > 0:
        raise DegenerateSampleError("all scores are zero")
    up = _UpperTail(sv, t * sv.sum_q, NORMAL, effective_I=effective_I)
    return _bound(up, gamma, NORMAL.label)


def pvalue_bounds_mc(sv: ScoreVector, t: float, gamma: float, B: int = DEFAULT_B, rng: Rng | None = None) -> GammaBound:
    """Monte Carlo bounds with the add-one estimator ``(1 + hits) / (B + 1)``.

    The same uniforms drive the upper and lower bound and every gamma for a
    given ``rng``, so results are monotone in gamma.
    """
    if not sv.sum_q > 0:
        raise DegenerateSampleError("all scores are zero")
    rng = rng or Rng()
    method = Method("mc", B=B, seed=rng.seed, stream=rng.stream_id)
    engine = _CrnTail(sv.q[sv.q > 0], B, rng)
    up = _UpperTail(sv, t * sv.sum_q, method, engine=engine)
    return _bound(up, gamma, method.label)


def pvalue_bounds_exact(sv: ScoreVector, t: float, gamma: float) -> GammaBound:
    """Exact bounds by enumeration over all sign patterns.

    Raises
    ------
    BudgetError
        If more than ``EXACT_MAX_I`` scores are nonzero.
    """
    if not sv.sum_q > 0:
        raise DegenerateSampleError("all scores are zero")
    method = Method("exact")
    up = _UpperTail(sv, t * sv.sum_q, method)
    return _bound(up, gamma, method.label)


# ---------------------------------------------------------------------------
# sensitivity values


def kappa_star_closed(
    sv: ScoreVector, t: float, alpha: float, effective_I: int | None = None, tail=Tail.GREATER
) -> SensResult:
    """Transformed sensitivity value from the normal approximation in closed form.

    Solves ``sqrt(I) (t - kappa) = sqrt(kappa (1 - kappa)) * c`` with
    ``c = sigma_qI * z_alpha``:

        kappa* = (2 I t + c^2 - sqrt(4 c^2 I t (1 - t) + c^4)) / (2 (I + c^2))

    taking the root with ``t - kappa* >= 0`` (the other root when
    ``alpha > 1/2``).
    """
    _check_alpha(alpha)
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"statistic must lie in [0, 1], got {t!r}")
    n = sv.effective_I if effective_I is None else int(effective_I)
    if t == 0.0:
        return _make_result(0.0, alpha, tail, NORMAL.label, t, n, ("degenerate_zero_statistic",))
    kappa = kappa_closed_formula(t, n, sv.sigma_qI_sq, alpha)
    return _make_result(kappa, alpha, tail, NORMAL.label, t, n)


def kappa_closed_formula(t, n, sigma_qI_sq, alpha: float):
    """Vectorized closed-form transformed sensitivity value.

    ``t`` may be an array of statistics sharing ``n`` and ``sigma_qI_sq``;
    ``t = 0`` maps to 0.
    """
    t = np.asarray(t, dtype=float)
    z = float(norm_isf(alpha))
    c2 = sigma_qI_sq * z * z
    disc = np.sqrt(np.maximum(4.0 * c2 * n * t * (1.0 - t) + c2 * c2, 0.0))
    sign = -1.0 if z >= 0 else 1.0
    kappa = np.clip((2.0 * n * t + c2 + sign * disc) / (2.0 * (n + c2)), 0.0, 1.0)
    kappa = np.where(t == 0.0, 0.0, kappa)
    return kappa if kappa.ndim else float(kappa)


def _search(upper, alpha: float, tol: float) -> tuple[float, tuple[str, ...]]:
    """Smallest kappa in (0, 1) with ``upper(kappa) >= alpha``, by bisection."""
    lo, hi = 0.0, 1.0
    if upper(tol * 1e-3) >= alpha:
        return 0.0, ("degenerate_below_support",)
    if upper(hi) < alpha:
        return 1.0, ("never_crosses",)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if upper(mid) >= alpha:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi), ()


def kappa_star_search(
    sv: ScoreVector,
    t: float,
    alpha: float,
    method: Method | str = "exact",
    tol: float = DEFAULT_TOL,
    tail=Tail.GREATER,
    _engine=None,
) -> SensResult:
    """Sensitivity value by bisection on a full sensitivity analysis.

    Finds the smallest ``kappa`` at which ``p_upper >= alpha`` to within
    ``tol`` on the kappa scale.  Monte Carlo tails use one set of common
    random numbers for every kappa, so the target is monotone.
    """
    _check_alpha(alpha)
    if isinstance(method, str):
        method = Method.parse(method)
    if not sv.sum_q > 0:
        raise DegenerateSampleError("all scores are zero")
    up = _UpperTail(sv, t * sv.sum_q, method, engine=_engine)
    kappa, flags = _search(up, alpha, tol)
    return _make_result(kappa, alpha, tail, method.label, t, sv.effective_I, flags)


def _one_sided(sv, obs, alpha, method, tol, tail, engine):
    t = obs / sv.sum_q
    if method.kind == "normal":
        return kappa_star_closed(sv, t, alpha, tail=tail)
    return kappa_star_search(sv, t, alpha, method, tol, tail=tail, _engine=engine)


def two_sided(
    sv: ScoreVector,
    d: PairDiffs,
    alpha: float,
    method: Method | str = NORMAL,
    tol: float = DEFAULT_TOL,
) -> SensResult:
    """Two-sided sensitivity value: the larger of the two one-sided values at ``alpha / 2``."""
    _check_alpha(alpha)
    if isinstance(method, str):
        method = Method.parse(method)
    if not sv.sum_q > 0:
        raise DegenerateSampleError("all scores are zero")
    engine = _tail_engine(sv, method)
    g = _one_sided(sv, _positive_sum(sv, d, Tail.GREATER), alpha / 2, method, tol, Tail.GREATER, engine)
    l = _one_sided(sv, _positive_sum(sv, d, Tail.LESS), alpha / 2, method, tol, Tail.LESS, engine)
    best = g if g.kappa_star >= l.kappa_star else l
    return SensResult(
        best.kappa_star, best.gamma_star, best.gamma_star_trunc, alpha, Tail.TWO_SIDED,
        best.method, g.statistic, best.effective_I, best.flags,
    )


def sensitivity_value(
    d: PairDiffs,
    spec: ScoreSpec | str = "wilcoxon",
    alpha: float = 0.05,
    tail=Tail.GREATER,
    method: Method | str = NORMAL,
    tol: float = DEFAULT_TOL,
    sv: ScoreVector | None = None,
) -> SensResult:
    """Sensitivity value of one outcome from its pair differences.

    ``method="approx"`` uses the closed form; ``"exact"`` or ``"mc:<B>"``
    search a full sensitivity analysis.
    """
    if isinstance(spec, str):
        spec = ScoreSpec.parse(spec)
    if isinstance(method, str):
        method = Method.parse(method)
    if not isinstance(d, PairDiffs):
        d = PairDiffs(d)
    tail = Tail.parse(tail)
    sv = sv if sv is not None else score_vector(spec, d)
    if not sv.sum_q > 0:
        raise DegenerateSampleError("all differences are zero")
    if tail is Tail.TWO_SIDED:
        return two_sided(sv, d, alpha, method, tol)
    engine = _tail_engine(sv, method)
    return _one_sided(sv, _positive_sum(sv, d, tail), alpha, method, tol, tail, engine)


def sensitivity_table(
    sv: ScoreVector,
    d: PairDiffs,
    gammas: Sequence[float],
    method: Method | str = NORMAL,
    tail=Tail.TWO_SIDED,
) -> list[GammaBound]:
    """p-value bounds over a grid of gammas.

    Two-sided entries double the smaller one-sided bound and cap at 1.
    """
    if isinstance(method, str):
        method = Method.parse(method)
    tail = Tail.parse(tail)
    gammas = [float(g) for g in gammas]
    if not gammas:
        raise DomainError("need at least one gamma")
    if any(not g >= 1.0 for g in gammas):
        raise DomainError("sensitivity-table gammas must be >= 1")
    if not sv.sum_q > 0:
        raise DegenerateSampleError("all scores are zero")
    engine = _tail_engine(sv, method)
    ups = {
        side: _UpperTail(sv, _positive_sum(sv, d, side), method, engine=engine)
        for side in (Tail.GREATER, Tail.LESS)
    }
    out = []
    for g in gammas:
        if tail is Tail.TWO_SIDED:
            bg = _bound(ups[Tail.GREATER], g, method.label)
            bl = _bound(ups[Tail.LESS], g, method.label)
            p_up = min(1.0, 2.0 * min(bg.p_upper, bl.p_upper))
            p_lo = min(1.0, 2.0 * min(bg.p_lower, bl.p_lower))
            out.append(GammaBound(g, p_up, p_lo, method.label))
        else:
            out.append(_bound(ups[tail], g, method.label))
    return out
