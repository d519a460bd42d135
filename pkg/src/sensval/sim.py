"""Seeded simulation jobs that regenerate accuracy, power and design tables.

Every job is a function ``(params, rng, threads) -> SimResult`` registered
by name.  Randomness is drawn only from substreams of the job's
:class:`~sensval.numerics.Rng` keyed by scenario and replicate index, so a
job's output depends on its seed and parameters but not on ``threads``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._parallel import pmap
from .asymptotics import (
    AltModel,
    AsymptoticLaw,
    _rank_scores,
    asymptotic_law,
    g_function,
    kappa_law_asymptotic,
    kappa_law_finite,
    mu_F,
    power,
)
from .design import binary_score_grid, critical_sample_size_grid
from .exceptions import DomainError, RegistryError
from .numerics import Rng
from .scores import ScoreSpec, psi_norms, score_vector
from .senscore import (
    Method,
    _CrnTail,
    gamma_to_kappa,
    kappa_closed_formula,
    kappa_star_closed,
    kappa_star_search,
    statistic,
)

__all__ = [
    "SimJob",
    "SimResult",
    "JOBS",
    "run_job",
    "kappa_star_replicates",
    "power_check",
    "USTAT_ROWS",
]

USTAT_ROWS = ((2, 2, 2), (8, 8, 8), (8, 7, 8), (8, 6, 8), (8, 5, 8), (20, 20, 20), (20, 18, 20), (20, 16, 20), (8, 7, 7), (8, 6, 7))


@dataclass(frozen=True)
class SimJob:
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in JOBS:
            raise RegistryError(f"unknown job {self.name!r}; available: {', '.join(sorted(JOBS))}")
        reps = self.params.get("reps")
        if reps is not None and int(reps) < 1:
            raise DomainError("replication count must be at least 1")


@dataclass
class SimResult:
    name: str
    columns: tuple[str, ...]
    rows: list[tuple]
    meta: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for k, v in self.meta.items():
            if k != "runtime_s":
                buf.write(f"# {k}={v if isinstance(v, str) else json.dumps(v, sort_keys=True)}\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])
        return buf.getvalue()

    def to_json(self, runtime: bool = False) -> dict:
        def clean(v):
            if isinstance(v, float):
                return v if math.isfinite(v) else None
            return v

        return {
            "job": self.name,
            "meta": {k: v for k, v in self.meta.items() if runtime or k != "runtime_s"},
            "columns": list(self.columns),
            "rows": [[clean(v) for v in r] for r in self.rows],
        }

    def column(self, name: str) -> list:
        j = self.columns.index(name)
        return [r[j] for r in self.rows]


# ---------------------------------------------------------------------------
# replicate engines

_BLOCK = 250


def _kappa_block(spec: ScoreSpec, alt: AltModel, I: int, n: int, alpha: float, rng: Rng) -> np.ndarray:
    y = alt.sample(rng.generator(), (n, I))
    absy = np.abs(y)
    if np.all(y != 0) and all(np.unique(row).size == I for row in absy):
        q = _rank_scores(spec, I)
        order = np.argsort(absy, axis=1)
        t = (np.take_along_axis(y, order, axis=1) > 0) @ q / q.sum()
        nz = np.count_nonzero(q)
        return kappa_closed_formula(t, nz, nz * np.sum(q * q) / q.sum() ** 2, alpha)
    out = np.empty(n)
    for b in range(n):
        sv = score_vector(spec, y[b])
        out[b] = kappa_star_closed(sv, statistic(sv, y[b]), alpha).kappa_star if sv.sum_q > 0 else math.nan
    return out


def kappa_star_replicates(
    spec: ScoreSpec,
    alt: AltModel,
    I: int,
    B: int,
    alpha: float = 0.05,
    rng: Rng | None = None,
    threads: int | None = 1,
) -> np.ndarray:
    """Closed-form sensitivity values of ``B`` simulated datasets of ``I`` pairs."""
    rng = rng or Rng()
    blocks = [(k, min(_BLOCK, B - s)) for k, s in enumerate(range(0, B, _BLOCK))]
    parts = pmap(lambda kb: _kappa_block(spec, alt, I, kb[1], alpha, rng.substream(kb[0])), blocks, threads)
    return np.concatenate(parts)


def power_check(
    alt: AltModel,
    spec: ScoreSpec,
    I: int,
    gamma: float,
    alpha: float = 0.05,
    B: int = 10_000,
    rng: Rng | None = None,
    threads: int | None = 1,
) -> dict:
    """Simulated power of the sensitivity analysis next to its three approximations."""
    if B < 1000:
        raise DomainError("power_check needs B >= 1000")
    rng = rng or Rng()
    law = asymptotic_law(spec, alt, rng=rng.substream(0), threads=threads)
    kap = kappa_star_replicates(spec, alt, I, B, alpha, rng.substream(1), threads)
    k_gamma = float(gamma_to_kappa(gamma))
    return {
        "simulated": float(np.mean(kap > k_gamma)),
        "asymptotic": power(law, alpha, I, gamma, "asymptotic"),
        "finite": power(law, alpha, I, gamma, "finite"),
        "no_constant": power(law, alpha, I, gamma, "no_constant"),
        "mu_F": law.mu_F,
        "sigma_F_sq": law.sigma_F_sq,
        "B": B,
    }


# ---------------------------------------------------------------------------
# jobs


def _alt(v) -> AltModel:
    return v if isinstance(v, AltModel) else AltModel.parse(str(v))


def _job_table2(p: dict, rng: Rng, threads) -> SimResult:
    reps = int(p.get("reps", 100))
    B = int(p.get("B", 100_000))
    tol = float(p.get("tol", 1e-4))
    scenarios = p.get(
        "scenarios",
        [(I, d, a) for I in (30, 100) for d in ("normal:1,1", "t:2,1.5") for a in (0.05, 0.005)],
    )
    spec = ScoreSpec.parse(p.get("score", "wilcoxon"))
    rows = []
    for s, (I, dist, alpha) in enumerate(scenarios):
        alt = _alt(dist)
        method = Method("mc", B=B, seed=rng.seed)

        def one(r, s=s, I=I, alt=alt, alpha=alpha, method=method):
            sub = rng.substream(s).substream(r)
            y = alt.sample(sub.substream(0).generator(), int(I))
            sv = score_vector(spec, y)
            t = statistic(sv, y)
            closed = kappa_star_closed(sv, t, alpha).kappa_star
            engine = _CrnTail(sv.q[sv.q > 0], B, sub.substream(1))
            found = kappa_star_search(sv, t, alpha, method, tol, _engine=engine).kappa_star
            return abs(closed - found)

        diffs = np.array(pmap(one, range(reps), threads))
        rows.append((int(I), str(alt), float(alpha), float(np.quantile(diffs, 0.1)), float(diffs.mean()), float(np.quantile(diffs, 0.9))))
    meta = {"reps": reps, "B": B, "tol": tol, "score": str(spec), "statistic": "abs(closed - search)"}
    return SimResult("table2", ("I", "dist", "alpha", "q10", "mean", "q90"), rows, meta)


def _ustat_job(name: str, default_alt: str, summary: str):
    def job(p: dict, rng: Rng, threads) -> SimResult:
        alt = _alt(p.get("alt", default_alt))
        reps = int(p.get("reps", 1000))
        alpha = float(p.get("alpha", 0.05))
        Is = tuple(int(i) for i in p.get("Is", (100, 500)))
        I_sim = int(p.get("I_sim", 500))
        B_sigma = int(p.get("B_sigma", 2000))
        simulate = bool(p.get("simulate", True))
        specs = [ScoreSpec.ustat(*r) if not isinstance(r, ScoreSpec) else r for r in p.get("rows", USTAT_ROWS)]
        cols = ["score"]
        for I in Is:
            cols += [f"approx_{I}", f"approx_sd_{I}"]
            if simulate:
                cols += [f"sim_{summary}_{I}", f"sim_sd_{I}"]
        cols.append("I_inf")
        rows = []
        for k, spec in enumerate(specs):
            law = asymptotic_law(spec, alt, I_sim, B_sigma, rng.substream(k).substream(0), threads)
            row = [str(spec)]
            for j, I in enumerate(Is):
                row += [float(v) for v in kappa_law_finite(law, alpha, I)]
                if simulate:
                    kap = kappa_star_replicates(spec, alt, I, reps, alpha, rng.substream(k).substream(1 + j), threads)
                    centre = np.median(kap) if summary == "median" else np.mean(kap)
                    row += [float(centre), float(np.std(kap, ddof=1))]
            row.append(float(law.mu_F))
            rows.append(tuple(row))
        meta = {
            "alt": str(alt), "alpha": alpha, "reps": reps, "Is": list(Is), "summary": summary,
            "I_sim": I_sim, "B_sigma": B_sigma, "approximation": "finite-sample center (mean = median)",
        }
        return SimResult(name, tuple(cols), rows, meta)

    return job


_FIG1_ALTS = tuple(f"{fam}:{d:g}" for fam in ("normal", "t") for d in (0, 0.5, 1, 2))


def _job_fig1(p: dict, rng: Rng, threads) -> SimResult:
    us = np.arange(1, 100) / 100.0
    rows = []
    for shift in (0.0, 0.5, 1.0, 2.0):
        for alt in (AltModel.normal(shift, 1.0), AltModel.t(2.0, shift)):
            rows += [("g", str(alt), float(u), g_function(alt, float(u))) for u in us]
    for r in p.get("rows", USTAT_ROWS):
        spec = ScoreSpec.ustat(*r)
        l1 = psi_norms(spec)[0]
        rows += [("psi", str(spec), float(u), float(v) / l1) for u, v in zip(us, spec.psi(us))]
    return SimResult("fig1", ("panel", "curve", "u", "value"), rows, {"grid": "u = k/100, k = 1..99"})


def _job_fig2(p: dict, rng: Rng, threads) -> SimResult:
    n = int(p.get("n", 50))
    alpha = float(p.get("alpha", 0.05))
    rows = []
    for pi1 in p.get("pi1", (0.5, 0.75)):
        rows += [(float(pi1),) + r for r in critical_sample_size_grid(float(pi1), n, alpha)]
    return SimResult("fig2", ("pi1", "mu_F1", "mu_F2", "I_star"), rows, {"n": n, "alpha": alpha, "sigma_q_sq": 4.0 / 3.0})


def _job_appB(p: dict, rng: Rng, threads) -> SimResult:
    alpha = float(p.get("alpha", 0.05))
    step = float(p.get("grid_step", 0.01))
    rows = []
    alt_a = _alt(p.get("alt_a", "normal:0.3,1"))
    for I in p.get("Is_a", (50, 100, 500, math.inf)):
        grid = binary_score_grid(alt_a, float(I), alpha, step)
        last = grid.taus.size - 1
        rows += [("a", str(alt_a), float(I), float(tl), 1.0, float(grid.mean_kappa[i, last])) for i, tl in enumerate(grid.taus[:-1])]
    alt_b = _alt(p.get("alt_b", "t:2,0.8"))
    I_b = float(p.get("I_b", 500))
    grid = binary_score_grid(alt_b, I_b, alpha, step)
    rows += [("b", str(alt_b), I_b, tl, tu, v) for tl, tu, v in grid.rows()]
    meta = {"alpha": alpha, "grid_step": step, "best_b": [grid.best_tau_l, grid.best_tau_u, grid.best_mean_kappa]}
    return SimResult("appB", ("panel", "alt", "I", "tau_l", "tau_u", "mean_kappa"), rows, meta)


def _job_beta_table(p: dict, rng: Rng, threads) -> SimResult:
    alpha = float(p.get("alpha", 0.05))
    alts = [_alt(a) for a in p.get("alts", ("normal:0.5,1", "normal:1,1", "t:2,0.5", "t:2,1"))]
    Is = p.get("Is", (100, 500, math.inf))
    cols = ["a", "b"] + [f"{alt}|I={I:g}" for alt in alts for I in Is]
    rows = []
    for a in p.get("a", (2, 4, 8)):
        for b in p.get("b", (0.6, 1, 2, 4)):
            spec = ScoreSpec.beta(float(a), float(b))
            sq = psi_norms(spec)[2]
            row = [float(a), float(b)]
            for alt in alts:
                mu = mu_F(spec, alt)
                law = AsymptoticLaw(mu, 0.0, sq, "center_only")
                row += [float(kappa_law_asymptotic(law, alpha, float(I))[0]) for I in Is]
            rows.append(tuple(row))
    return SimResult("beta_table", tuple(cols), rows, {"alpha": alpha, "summary": "limiting-law mean"})


def _job_power(p: dict, rng: Rng, threads) -> SimResult:
    alt = _alt(p.get("alt", "normal:0.5,1"))
    spec = ScoreSpec.parse(p.get("score", "wilcoxon"))
    I, gamma = int(p.get("I", 200)), float(p.get("gamma", 2.5))
    alpha, reps = float(p.get("alpha", 0.05)), int(p.get("reps", 10_000))
    res = power_check(alt, spec, I, gamma, alpha, reps, rng, threads)
    rows = [(k, float(res[k])) for k in ("simulated", "asymptotic", "finite", "no_constant")]
    meta = {"alt": str(alt), "score": str(spec), "I": I, "gamma": gamma, "alpha": alpha, "reps": reps,
            "mu_F": res["mu_F"], "sigma_F_sq": res["sigma_F_sq"]}
    return SimResult("power", ("version", "power"), rows, meta)


JOBS: dict[str, Callable] = {
    "table2": _job_table2,
    "table3": _ustat_job("table3", "normal:0.3,1", "median"),
    "table4": _ustat_job("table4", "t:2,0.8", "mean"),
    "fig1": _job_fig1,
    "fig2": _job_fig2,
    "appB": _job_appB,
    "beta_table": _job_beta_table,
    "power": _job_power,
}


def run_job(job: SimJob | str, rng: Rng | None = None, threads: int | None = 1, **params) -> SimResult:
    """Run a registered job and attach seed, parameters and runtime to its metadata.

    Raises
    ------
    RegistryError
        For an unknown job name.
    """
    if isinstance(job, str):
        job = SimJob(job, params)
    elif params:
        job = SimJob(job.name, {**job.params, **params})
    rng = rng or Rng()
    start = time.perf_counter()
    res = JOBS[job.name](dict(job.params), rng, threads)
    res.meta = {"job": job.name, "seed": rng.seed, "params": _jsonable(job.params), **res.meta,
                "runtime_s": round(time.perf_counter() - start, 3)}
    return res


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, (int, float, str, bool)) or v is None:
        return v
    return str(v)
