"""Screening many outcomes by their sensitivity values.

Loads a matrix of matched-pair differences (one row per outcome), computes
one- and two-sided sensitivity values for each outcome, ranks them and
provides a null reference for Q-Q plots and histograms.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._parallel import pmap
from .asymptotics import AsymptoticLaw, kappa_law_finite
from .exceptions import DegenerateSampleError, DomainError, ParseError, SensvalError, SizeError
from .numerics import norm_quantile
from .scores import PairDiffs, RawPairs, ScoreSpec, _sorted_ids, differences, psi_norms, score_vector
from .senscore import NORMAL, Method, Tail, sensitivity_value, statistic

__all__ = [
    "MIN_PAIRS",
    "OutcomeMatrix",
    "ScreeningRow",
    "ScreeningTable",
    "load_matrix",
    "load_pairs",
    "screen",
    "qq_data",
    "histogram_bins",
]

MIN_PAIRS = 5
FORMATS = ("wide", "long", "raw")


@dataclass(frozen=True)
class OutcomeMatrix:
    """Outcomes by pairs; ``NaN`` marks a missing pair for that outcome."""

    outcome_ids: tuple[str, ...]
    values: np.ndarray
    pair_ids: tuple[str, ...] = ()

    def __post_init__(self):
        ids = tuple(str(i) for i in self.outcome_ids)
        vals = np.array(self.values, dtype=float, ndmin=2)
        if not ids:
            raise SizeError("need at least one outcome")
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise ParseError(f"duplicate outcome id {dup!r}")
        if vals.shape[0] != len(ids):
            raise ParseError(f"{len(ids)} outcome ids but {vals.shape[0]} rows")
        if np.any(np.isinf(vals)):
            raise ParseError("differences must be finite")
        pairs = tuple(self.pair_ids) or tuple(f"p{j + 1}" for j in range(vals.shape[1]))
        vals.setflags(write=False)
        object.__setattr__(self, "outcome_ids", ids)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "pair_ids", pairs)

    def __len__(self):
        return len(self.outcome_ids)

    @property
    def I(self) -> int:
        return self.values.shape[1]

    def row(self, k: int) -> np.ndarray:
        """Observed (non-missing) differences of outcome ``k``."""
        v = self.values[k]
        return v[~np.isnan(v)]

    def permuted(self, order: Sequence[int]) -> "OutcomeMatrix":
        order = list(order)
        return OutcomeMatrix(tuple(self.outcome_ids[i] for i in order), self.values[order], self.pair_ids)


def _number(text: str, where: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"{where}: {text!r} is not a number") from None
    if not math.isfinite(v):
        raise ParseError(f"{where}: value must be finite")
    return v


def _read_rows(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        rows = [(reader.line_num, [c.strip() for c in r]) for r in reader if any(c.strip() for c in r)]
    return header, rows


def _require(header, names, path):
    low = [h.lower() for h in header]
    missing = [n for n in names if n not in low]
    if missing:
        raise ParseError(f"{path} line 1: missing column(s) {', '.join(missing)}")
    return [low.index(n) for n in names]


def _load_wide(path) -> OutcomeMatrix:
    header, rows = _read_rows(path)
    if len(header) < 2 or header[0].lower() != "outcome":
        raise ParseError(f"{path} line 1: wide header must be outcome,p1,...,pI")
    ids, vals, seen = [], [], {}
    for line, r in rows:
        if len(r) != len(header):
            raise ParseError(f"{path} line {line}: expected {len(header)} fields, got {len(r)}")
        oid = r[0]
        if oid in seen:
            raise ParseError(f"{path} line {line}: duplicate outcome id {oid!r} (first on line {seen[oid]})")
        seen[oid] = line
        ids.append(oid)
        vals.append([math.nan if c == "" else _number(c, f"{path} line {line}") for c in r[1:]])
    if not ids:
        raise ParseError(f"{path}: no outcome rows")
    return OutcomeMatrix(tuple(ids), np.array(vals), tuple(header[1:]))


def _assemble(per_outcome: dict[str, dict[str, float]]) -> OutcomeMatrix:
    pairs = _sorted_ids({p for d in per_outcome.values() for p in d})
    ids = list(per_outcome)
    vals = np.full((len(ids), len(pairs)), math.nan)
    col = {p: j for j, p in enumerate(pairs)}
    for i, oid in enumerate(ids):
        for p, y in per_outcome[oid].items():
            vals[i, col[p]] = y
    return OutcomeMatrix(tuple(ids), vals, tuple(pairs))


def _load_long(path) -> OutcomeMatrix:
    header, rows = _read_rows(path)
    io_, ip, iy = _require(header, ("outcome", "pair", "y"), path)
    data: dict[str, dict[str, float]] = {}
    for line, r in rows:
        if len(r) != len(header):
            raise ParseError(f"{path} line {line}: expected {len(header)} fields, got {len(r)}")
        oid, pid = r[io_], r[ip]
        d = data.setdefault(oid, {})
        if pid in d:
            raise ParseError(f"{path} line {line}: duplicate pair {pid!r} for outcome {oid!r}")
        if r[iy] != "":
            d[pid] = _number(r[iy], f"{path} line {line}")
    if not data:
        raise ParseError(f"{path}: no records")
    return _assemble(data)


def _load_raw(path) -> OutcomeMatrix:
    header, rows = _read_rows(path)
    io_, ip, iz, ir = _require(header, ("outcome", "pair", "z", "r"), path)
    recs: dict[str, dict[str, list]] = defaultdict(lambda: defaultdict(list))
    for line, r in rows:
        if len(r) != len(header):
            raise ParseError(f"{path} line {line}: expected {len(header)} fields, got {len(r)}")
        where = f"{path} line {line}"
        z = _number(r[iz], where)
        if z not in (0.0, 1.0):
            raise ParseError(f"{where}: pair {r[ip]!r}: z must be 0 or 1")
        recs[r[io_]][r[ip]].append((line, int(z), _number(r[ir], where)))
    data = {}
    for oid, pairs in recs.items():
        for pid, units in pairs.items():
            if len(units) != 2:
                raise ParseError(
                    f"{path} line {units[0][0]}: pair {pid!r} of outcome {oid!r} has {len(units)} records, expected 2"
                )
            if units[0][1] + units[1][1] != 1:
                raise ParseError(
                    f"{path} line {units[1][0]}: pair {pid!r} of outcome {oid!r}: "
                    f"treatment indicators sum to {units[0][1] + units[1][1]}, expected 1"
                )
        ordered = _sorted_ids(pairs)
        raw = RawPairs.from_records(
            (pid, k + 1, z, r) for pid in ordered for k, (_, z, r) in enumerate(pairs[pid])
        )
        data[oid] = dict(zip(ordered, differences(raw).y.tolist()))
    if not data:
        raise ParseError(f"{path}: no records")
    return _assemble(data)


def load_matrix(path, format: str = "wide") -> OutcomeMatrix:
    """Read an outcome matrix from CSV.

    Parameters
    ----------
    path : str or path-like
    format : {"wide", "long", "raw"}
        ``wide``: header ``outcome,p1,...,pI``, one row per outcome, empty
        cell = missing.  ``long``: header ``outcome,pair,y``.  ``raw``:
        header ``outcome,pair,z,r`` with two unit records per pair.

    Raises
    ------
    ParseError
        With the offending line number.
    """
    fmt = format.lower().removesuffix("_csv")
    if fmt == "wide":
        return _load_wide(path)
    if fmt == "long":
        return _load_long(path)
    if fmt == "raw":
        return _load_raw(path)
    raise ParseError(f"unknown matrix format {format!r}; expected wide, long or raw")


def load_pairs(path) -> PairDiffs:
    """Read the differences of a single outcome.

    Accepts a CSV with a ``y`` column (other columns ignored), unit records
    with columns ``pair,unit,z,r``, or a single headerless column of numbers.
    """
    header, rows = _read_rows(path)
    low = [h.lower() for h in header]
    if {"pair", "unit", "z", "r"} <= set(low):
        ip, iu, iz, ir = (low.index(c) for c in ("pair", "unit", "z", "r"))
        recs = []
        for line, r in rows:
            where = f"{path} line {line}"
            recs.append((r[ip], int(_number(r[iu], where)), int(_number(r[iz], where)), _number(r[ir], where)))
        try:
            return differences(RawPairs(tuple(recs)))
        except SensvalError as e:
            raise ParseError(f"{path}: {e}") from None
    if "y" in low:
        iy = low.index("y")
        ys = [_number(r[iy], f"{path} line {line}") for line, r in rows if len(r) > iy and r[iy] != ""]
    elif len(header) == 1:
        ys = [_number(header[0], f"{path} line 1")]
        ys += [_number(r[0], f"{path} line {line}") for line, r in rows]
    else:
        raise ParseError(f"{path} line 1: expected a 'y' column or pair,unit,z,r records")
    if not ys:
        raise ParseError(f"{path}: no differences")
    return PairDiffs(np.array(ys))


@dataclass(frozen=True)
class ScreeningRow:
    outcome: str
    effective_I: int
    T: float
    kappa_greater: float
    kappa_less: float
    kappa_two_sided: float
    gamma_trunc: float
    rank: int = 0
    flags: tuple[str, ...] = ()

    def kappa(self, tail: Tail) -> float:
        return {
            Tail.GREATER: self.kappa_greater,
            Tail.LESS: self.kappa_less,
            Tail.TWO_SIDED: self.kappa_two_sided,
        }[tail]


@dataclass
class ScreeningTable:
    rows: list[ScreeningRow]  # input order
    spec: ScoreSpec
    alpha: float
    tail: Tail
    method: str
    null_center: float
    null_sd: float
    null_I: float
    meta: dict = field(default_factory=dict)

    def ranked(self) -> list[ScreeningRow]:
        return sorted(self.rows, key=lambda r: r.rank)

    def analyzed(self) -> list[ScreeningRow]:
        return [r for r in self.rows if "insufficient_pairs" not in r.flags and math.isfinite(r.kappa_greater)]

    _COLUMNS = ("outcome", "effective_I", "T", "kappa_greater", "kappa_less", "kappa_two_sided", "gamma_trunc", "rank", "flags")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self._COLUMNS)
        for r in self.ranked():
            w.writerow([
                r.outcome, r.effective_I, repr(r.T), repr(r.kappa_greater), repr(r.kappa_less),
                repr(r.kappa_two_sided), repr(r.gamma_trunc), r.rank, ";".join(r.flags),
            ])
        return buf.getvalue()

    def to_json(self) -> dict:
        def num(v):
            return float(v) if math.isfinite(v) else None

        return {
            "score": str(self.spec),
            "alpha": self.alpha,
            "tail": self.tail.value,
            "method": self.method,
            "null_reference": {"center": num(self.null_center), "sd": num(self.null_sd), "I": self.null_I, "alpha": self.alpha},
            "outcomes": [
                {
                    "outcome": r.outcome, "effective_I": r.effective_I, "T": num(r.T),
                    "kappa_greater": num(r.kappa_greater), "kappa_less": num(r.kappa_less),
                    "kappa_two_sided": num(r.kappa_two_sided), "gamma_trunc": num(r.gamma_trunc),
                    "rank": r.rank, "flags": list(r.flags),
                }
                for r in self.ranked()
            ],
            **({"meta": self.meta} if self.meta else {}),
        }

    def to_json_text(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def _screen_one(y: np.ndarray, oid: str, spec: ScoreSpec, alpha: float, tail: Tail, method: Method) -> ScreeningRow:
    nan = math.nan
    d = PairDiffs(y) if y.size else None
    n = d.effective_I if d is not None else 0
    if n < MIN_PAIRS:
        return ScreeningRow(oid, n, nan, nan, nan, nan, nan, flags=("insufficient_pairs",))
    try:
        sv = score_vector(spec, d)
        t = statistic(sv, d)
        res = {
            s: sensitivity_value(d, spec, alpha, s, method, sv=sv)
            for s in (Tail.GREATER, Tail.LESS, Tail.TWO_SIDED)
        }
    except DegenerateSampleError:
        return ScreeningRow(oid, n, nan, nan, nan, nan, nan, flags=("degenerate",))
    flags = tuple(sorted({f for r in res.values() for f in r.flags}))
    return ScreeningRow(
        oid, n, t, res[Tail.GREATER].kappa_star, res[Tail.LESS].kappa_star,
        res[Tail.TWO_SIDED].kappa_star, res[tail].gamma_star_trunc, flags=flags,
    )


def screen(
    m: OutcomeMatrix,
    spec: ScoreSpec | str = "wilcoxon",
    alpha: float = 0.05,
    tail=Tail.TWO_SIDED,
    method: Method | str = NORMAL,
    threads: int | None = 1,
) -> ScreeningTable:
    """Sensitivity values for every outcome of ``m``, ranked by ``tail``.

    Outcomes with fewer than :data:`MIN_PAIRS` nonzero differences are
    flagged ``insufficient_pairs`` and ranked last.  Monte Carlo methods use
    stream ``k`` for outcome ``k``.  The null reference is the
    finite-sample law of the one-sided sensitivity value at ``mu_F = 1/2``,
    level ``alpha`` and the median effective number of pairs.
    """
    if isinstance(spec, str):
        spec = ScoreSpec.parse(spec)
    if isinstance(method, str):
        method = Method.parse(method)
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    tail = Tail.parse(tail)
    jobs = [(k, m.row(k)) for k in range(len(m))]
    rows = pmap(
        lambda job: _screen_one(job[1], m.outcome_ids[job[0]], spec, alpha, tail, method.with_stream(job[0])),
        jobs,
        threads,
    )

    def key(k):
        v = rows[k].kappa(tail)
        return (0, -v, rows[k].outcome) if math.isfinite(v) else (1, 0.0, rows[k].outcome)

    order = sorted(range(len(rows)), key=key)
    for rank, k in enumerate(order, start=1):
        rows[k] = ScreeningRow(**{**rows[k].__dict__, "rank": rank})

    ok = [r.effective_I for r in rows if "insufficient_pairs" not in r.flags]
    if ok:
        null_I = float(np.median(ok))
        sq = psi_norms(spec)[2]
        center, sd = kappa_law_finite(AsymptoticLaw.null(sq), alpha, null_I)
    else:
        null_I, center, sd = math.nan, math.nan, math.nan
    return ScreeningTable(rows, spec, alpha, tail, method.label, float(center), float(sd), null_I)


def qq_data(table: ScreeningTable, column: str = "kappa_greater") -> tuple[np.ndarray, np.ndarray, tuple[float, float]]:
    """Normal Q-Q coordinates of the analysed sensitivity values.

    Returns ``(theoretical, observed, (center, sd))``: standard normal
    quantiles at ``(i - 0.5) / n``, the sorted values of ``column`` and the
    null reference line ``observed = center + sd * theoretical``.
    """
    vals = np.sort([getattr(r, column) for r in table.analyzed()])
    n = vals.size
    if n < 2:
        raise SizeError("a Q-Q plot needs at least two analysed outcomes")
    theo = norm_quantile((np.arange(1, n + 1) - 0.5) / n)
    return theo, vals, (table.null_center, table.null_sd)


def histogram_bins(table: ScreeningTable, bin_width: float = 0.05, column: str = "kappa_greater") -> list[tuple[float, float, int]]:
    """Counts of ``column`` in right-open bins covering ``[0, 1]``; 1 falls in the last bin."""
    if not bin_width > 0:
        raise DomainError("bin_width must be positive")
    nb = int(math.ceil(1.0 / bin_width - 1e-9))
    vals = np.array([getattr(r, column) for r in table.analyzed()], dtype=float)
    idx = np.minimum(np.floor(vals / bin_width + 1e-12).astype(int), nb - 1)
    counts = np.bincount(idx, minlength=nb)
    return [(round(k * bin_width, 12), round(min((k + 1) * bin_width, 1.0), 12), int(counts[k])) for k in range(nb)]
