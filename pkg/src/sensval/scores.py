"""Signed-score families and their realized per-pair scores.

Every family is described by a score function ``psi`` on (0, 1); the score
of pair ``i`` is ``psi(rank(|Y_i|) / (I + 1))`` with mid-ranks for ties and
``I`` the number of nonzero differences.  Zero differences get score zero.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import special, stats

from .exceptions import DomainError, ParseError, SizeError, ValidationError

__all__ = [
    "PairDiffs",
    "RawPairs",
    "ScoreSpec",
    "ScoreVector",
    "differences",
    "ranks_abs",
    "score_vector",
    "psi_norms",
    "ustat_exact_scores",
]


@dataclass(frozen=True)
class PairDiffs:
    """Treated-minus-control differences for one outcome."""

    y: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        if y.size < 1:
            raise ValidationError("need at least one pair")
        if not np.all(np.isfinite(y)):
            raise ValidationError("pair differences must be finite")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.y.size

    @property
    def effective_I(self) -> int:
        """Number of nonzero differences."""
        return int(np.count_nonzero(self.y))

    def __neg__(self) -> "PairDiffs":
        return PairDiffs(-self.y)


@dataclass(frozen=True)
class RawPairs:
    """Unit-level records ``(pair_id, unit, z, r)`` before differencing."""

    records: tuple = field(default=())

    @classmethod
    def from_records(cls, records: Iterable[Sequence]) -> "RawPairs":
        return cls(tuple((pid, int(unit), int(z), float(r)) for pid, unit, z, r in records))


def _sorted_ids(ids):
    try:
        return sorted(ids, key=lambda s: int(s))
    except (TypeError, ValueError):
        return sorted(ids, key=str)


def differences(raw: RawPairs) -> PairDiffs:
    """Collapse unit records to ``Y_i = (Z_i1 - Z_i2)(R_i1 - R_i2)``, ordered by pair id.

    Raises
    ------
    ValidationError
        Naming the offending pair when a pair does not have exactly units 1
        and 2 with treatment indicators summing to one.
    """
    by_pair = defaultdict(dict)
    for pid, unit, z, r in raw.records:
        if unit not in (1, 2):
            raise ValidationError(f"pair {pid!r}: unit index must be 1 or 2, got {unit}")
        if z not in (0, 1):
            raise ValidationError(f"pair {pid!r}: z must be 0 or 1, got {z}")
        if unit in by_pair[pid]:
            raise ValidationError(f"pair {pid!r}: duplicate unit {unit}")
        by_pair[pid][unit] = (z, r)
    if not by_pair:
        raise ValidationError("no pairs supplied")
    ys = []
    for pid in _sorted_ids(by_pair):
        units = by_pair[pid]
        if set(units) != {1, 2}:
            raise ValidationError(f"pair {pid!r}: expected units 1 and 2, got {sorted(units)}")
        (z1, r1), (z2, r2) = units[1], units[2]
        if z1 + z2 != 1:
            raise ValidationError(f"pair {pid!r}: treatment indicators sum to {z1 + z2}, expected 1")
        ys.append((z1 - z2) * (r1 - r2))
    return PairDiffs(np.array(ys))


def ranks_abs(d: PairDiffs | np.ndarray) -> np.ndarray:
    """Mid-ranks of ``|Y_i|`` among nonzero entries; zero entries get rank 0."""
    y = d.y if isinstance(d, PairDiffs) else np.asarray(d, dtype=float)
    out = np.zeros(y.shape, dtype=float)
    nz = y != 0
    if np.any(nz):
        out[nz] = stats.rankdata(np.abs(y[nz]), method="average")
    return out


_FAMILIES = ("wilcoxon", "ustat", "binary", "beta")


@dataclass(frozen=True)
class ScoreSpec:
    """A score-statistic family and its parameters.

    Use the named constructors (:meth:`wilcoxon`, :meth:`ustat`,
    :meth:`binary`, :meth:`beta`) or :meth:`parse` with the text syntax
    ``wilcoxon``, ``ustat:m,mlo,mhi``, ``binary:tl,tu``, ``beta:a,b``.
    """

    family: str
    params: tuple = ()

    def __post_init__(self):
        fam = self.family.lower()
        object.__setattr__(self, "family", fam)
        p = self.params
        if fam == "wilcoxon":
            if p:
                raise DomainError("wilcoxon takes no parameters")
        elif fam == "ustat":
            if len(p) != 3:
                raise DomainError("ustat needs (m, mlo, mhi)")
            m, lo, hi = (int(v) for v in p)
            if (m, lo, hi) != tuple(p):
                raise DomainError("ustat parameters must be integers")
            if not (m >= 1 and 1 <= lo <= hi <= m):
                raise DomainError(f"ustat needs 1 <= mlo <= mhi <= m, got {p}")
            object.__setattr__(self, "params", (m, lo, hi))
        elif fam == "binary":
            if len(p) != 2:
                raise DomainError("binary needs (tau_l, tau_u)")
            tl, tu = float(p[0]), float(p[1])
            if not (0.0 <= tl < tu <= 1.0):
                raise DomainError(f"binary needs 0 <= tau_l < tau_u <= 1, got {p}")
            object.__setattr__(self, "params", (tl, tu))
        elif fam == "beta":
            if len(p) != 2:
                raise DomainError("beta needs (a, b)")
            a, b = float(p[0]), float(p[1])
            if not (a > 0 and b > 0):
                raise DomainError(f"beta needs a, b > 0, got {p}")
            object.__setattr__(self, "params", (a, b))
        else:
            raise DomainError(f"unknown score family {self.family!r}; expected one of {_FAMILIES}")

    @classmethod
    def wilcoxon(cls) -> "ScoreSpec":
        return cls("wilcoxon")

    @classmethod
    def ustat(cls, m: int, mlo: int, mhi: int) -> "ScoreSpec":
        return cls("ustat", (m, mlo, mhi))

    @classmethod
    def binary(cls, tau_l: float, tau_u: float) -> "ScoreSpec":
        return cls("binary", (tau_l, tau_u))

    @classmethod
    def beta(cls, a: float, b: float) -> "ScoreSpec":
        return cls("beta", (a, b))

    @classmethod
    def parse(cls, text: str) -> "ScoreSpec":
        name, _, rest = text.strip().partition(":")
        name = name.strip().lower()
        try:
            vals = [v for v in (s.strip() for s in rest.split(",")) if v] if rest else []
            if name == "ustat":
                params = tuple(int(v) for v in vals)
            else:
                params = tuple(float(v) for v in vals)
            return cls(name, params)
        except (ValueError, DomainError) as exc:
            raise ParseError(f"bad score spec {text!r}: {exc}") from exc

    def __str__(self):
        if not self.params:
            return self.family
        return f"{self.family}:" + ",".join(f"{v:g}" for v in self.params)

    def psi(self, u):
        """Score function evaluated at ``u`` in (0, 1), vectorized."""
        u = np.asarray(u, dtype=float)
        fam = self.family
        if fam == "wilcoxon":
            out = u.copy()
        elif fam == "ustat":
            m, lo, hi = self.params
            out = np.zeros_like(u)
            for l in range(lo, hi + 1):
                out = out + l * special.comb(m, l) * u ** (l - 1) * (1.0 - u) ** (m - l)
        elif fam == "binary":
            tl, tu = self.params
            out = np.where((u >= tl) & (u <= tu), 1.0 / (tu - tl), 0.0)
        else:
            a, b = self.params
            with np.errstate(divide="ignore"):
                logv = -special.betaln(a, b) + np.zeros_like(u)
                if a != 1:
                    logv = logv + (a - 1) * np.log(u)
                if b != 1:
                    logv = logv + (b - 1) * np.log1p(-u)
            out = np.exp(logv)
        return out if out.ndim else float(out)


def psi_norms(spec: ScoreSpec) -> tuple[float, float, float]:
    """Closed-form ``(||psi||_1, ||psi||_2, ||psi||_2**2 / ||psi||_1**2)``.

    Raises
    ------
    DomainError
        For Beta scores with ``a <= 1/2`` or ``b <= 1/2`` (psi not square integrable).
    """
    fam = spec.family
    if fam == "wilcoxon":
        l1, l2sq = 0.5, 1.0 / 3.0
    elif fam == "ustat":
        m, lo, hi = spec.params
        l1 = float(hi - lo + 1)
        l2sq = 0.0
        for l in range(lo, hi + 1):
            for k in range(lo, hi + 1):
                l2sq += (
                    l * k * special.comb(m, l) * special.comb(m, k)
                    * math.exp(special.betaln(l + k - 1, 2 * m - l - k + 1))
                )
    elif fam == "binary":
        tl, tu = spec.params
        l1, l2sq = 1.0, 1.0 / (tu - tl)
    else:
        a, b = spec.params
        if a <= 0.5 or b <= 0.5:
            raise DomainError(f"beta:{a:g},{b:g} is not square integrable (needs a, b > 1/2)")
        l1 = 1.0
        l2sq = math.exp(special.betaln(2 * a - 1, 2 * b - 1) - 2 * special.betaln(a, b))
    l2sq = float(l2sq)
    return l1, math.sqrt(l2sq), l2sq / (l1 * l1)


@dataclass(frozen=True)
class ScoreVector:
    q: np.ndarray
    sum_q: float
    sigma_qI_sq: float
    sigma_q_sq_limit: float
    psi_l1: float
    psi_l2: float
    effective_I: int
    exact: bool = False

    @classmethod
    def from_scores(
        cls, q, effective_I=None, limit=(math.nan, math.nan, math.nan), exact=False
    ) -> "ScoreVector":
        """Wrap raw nonnegative scores, computing the realized norms.

        ``effective_I`` defaults to the number of nonzero scores; pass the
        number of nonzero differences when some nonzero pairs score zero
        (binary or trimmed U-statistic scores).
        """
        q = np.asarray(q, dtype=float)
        if np.any(q < 0) or not np.all(np.isfinite(q)):
            raise ValidationError("scores must be finite and nonnegative")
        n = int(np.count_nonzero(q)) if effective_I is None else int(effective_I)
        s = float(q.sum())
        sig = n * float(np.dot(q, q)) / (s * s) if s > 0 else math.nan
        l1, l2, lim = limit
        q.setflags(write=False)
        return cls(q, s, sig, lim, l1, l2, n, exact)


def ustat_exact_scores(I: int, m: int, mlo: int, mhi: int) -> np.ndarray:
    """Exact U-statistic scores for ranks ``1..I`` (no ties).

    ``q(a) = sum_l C(a-1, l-1) C(I-a, m-l) / C(I, m)``, evaluated in log space.
    """
    if I < m:
        raise SizeError(f"exact ustat scores need I >= m, got I={I}, m={m}")
    a = np.arange(1, I + 1, dtype=float)
    out = np.zeros(I)
    log_total = special.gammaln(I + 1) - special.gammaln(m + 1) - special.gammaln(I - m + 1)
    for l in range(mlo, mhi + 1):
        n1, k1 = a - 1, l - 1
        n2, k2 = I - a, m - l
        ok = (n1 >= k1) & (n2 >= k2)
        lg = np.full(I, -np.inf)
        lg[ok] = (
            special.gammaln(n1[ok] + 1) - special.gammaln(k1 + 1) - special.gammaln(n1[ok] - k1 + 1)
            + special.gammaln(n2[ok] + 1) - special.gammaln(k2 + 1) - special.gammaln(n2[ok] - k2 + 1)
        )
        out += np.exp(lg - log_total)
    return out


def score_vector(spec: ScoreSpec, d: PairDiffs, mode: str = "auto") -> ScoreVector:
    """Per-pair scores for ``d`` under ``spec``.

    Parameters
    ----------
    mode : {"auto", "exact", "approx"}
        Only affects U-statistics.  ``auto`` uses the exact combinatorial
        scores when the nonzero ``|Y|`` are tie-free and at least ``m``, else
        the polynomial score function at ``rank / (I + 1)``.

    Raises
    ------
    SizeError
        ``mode="exact"`` with fewer than ``m`` nonzero differences.
    """
    if mode not in ("auto", "exact", "approx"):
        raise DomainError(f"unknown score mode {mode!r}")
    if not isinstance(d, PairDiffs):
        d = PairDiffs(d)
    ranks = ranks_abs(d)
    nz = ranks > 0
    n = int(nz.sum())
    try:
        limit = psi_norms(spec)
    except DomainError:
        limit = (1.0, math.inf, math.inf)
    q = np.zeros(len(d))
    exact = False
    if n == 0:
        return ScoreVector.from_scores(q, 0, limit)
    if spec.family == "wilcoxon":
        q[nz] = ranks[nz]
    elif spec.family == "ustat" and mode != "approx":
        m, lo, hi = spec.params
        tie_free = np.all(ranks[nz] == np.round(ranks[nz])) and np.unique(ranks[nz]).size == n
        if mode == "exact" and n < m:
            raise SizeError(f"exact ustat scores need at least m={m} nonzero pairs, got {n}")
        if mode == "exact" and not tie_free:
            raise ValidationError("exact ustat scores require tie-free |Y|")
        if n >= m and tie_free:
            table = ustat_exact_scores(n, m, lo, hi)
            q[nz] = table[ranks[nz].astype(int) - 1]
            exact = True
        else:
            q[nz] = spec.psi(ranks[nz] / (n + 1))
    else:
        q[nz] = spec.psi(ranks[nz] / (n + 1))
    return ScoreVector.from_scores(q, n, limit, exact=exact)
