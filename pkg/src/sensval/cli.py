"""``sensval`` command-line interface.

Exit codes: 0 on success, 1 when flags fail validation, 2 when input data
cannot be read or analysed.  Results go to stdout (or ``--out``),
diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from typing import Sequence

from . import design, screening, sim
from .asymptotics import AltModel, asymptotic_law, kappa_law_finite, mu_F, power
from .exceptions import SensvalError
from .numerics import Rng
from .scores import PairDiffs, ScoreSpec, psi_norms, score_vector
from .senscore import Method, Tail, sensitivity_table, sensitivity_value

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    """A flag failed validation; maps to exit code 1."""


class DataError(Exception):
    """Input data could not be read or analysed; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# flag parsing (stage 1: everything here raises UsageError)


def _validated(fn, text, what):
    try:
        return fn(text)
    except (SensvalError, ValueError) as exc:
        raise UsageError(f"invalid {what} {text!r}: {exc}") from None


def _prob(text: str, what: str = "probability") -> float:
    v = _validated(float, text, what)
    if not 0.0 < v < 1.0:
        raise UsageError(f"{what} must lie in (0, 1), got {text}")
    return v


def _size(text: str) -> float:
    if text.strip().lower() in ("inf", "infinity"):
        return math.inf
    v = _validated(float, text, "--I")
    if not v >= 1:
        raise UsageError("--I must be at least 1")
    return v


def _gammas(text: str) -> list[float]:
    vals = [_validated(float, t, "gamma") for t in text.split(",") if t.strip()]
    if not vals or any(not g >= 1 for g in vals):
        raise UsageError("--gammas must be a comma-separated list of values >= 1")
    return vals


def _common(p: argparse.ArgumentParser, *, data=False, score=True, tail=None, method=False, alt=False, seed=False, fmt="json"):
    if data:
        p.add_argument("--data", required=True, help="input CSV")
        p.add_argument("--format", choices=("wide", "long", "raw"), default=None, help="matrix layout of --data")
    if score:
        p.add_argument("--score", default="wilcoxon", help="wilcoxon | ustat:m,mlo,mhi | binary:tl,tu | beta:a,b")
    p.add_argument("--alpha", default="0.05", help="significance level")
    if tail:
        p.add_argument("--tail", default=tail, help="greater | less | two-sided")
    if method:
        p.add_argument("--method", default="approx", help="approx | exact | mc:<B>")
    if alt:
        p.add_argument("--alt", required=alt == "required", default=None if alt == "required" else alt,
                       help="normal:d,s | t:dof,d | empirical:<path>")
    if seed or method:
        p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--threads", type=int, default=1, help="worker threads")
    p.add_argument("--out", default=None, help="write results here instead of stdout")
    p.add_argument("--output-format", choices=("csv", "json", "pretty"), default=fmt, dest="output_format")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sensval", description="Sensitivity values for matched-pair observational studies.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("value", help="sensitivity value of one outcome")
    _common(p, data=True, tail="greater", method=True)

    p = sub.add_parser("table", help="p-value bounds over a grid of gammas")
    _common(p, data=True, tail="two-sided", method=True, fmt="csv")
    p.add_argument("--gammas", default="1,2,3,5,7,10")

    p = sub.add_parser("power", help="power of a sensitivity analysis")
    _common(p, alt="required", seed=True)
    p.add_argument("--I", required=True, dest="I")
    p.add_argument("--gamma", required=True)
    p.add_argument("--reps", type=int, default=10_000, help="simulation replicates (0 to skip)")

    p = sub.add_parser("design-sensitivity", help="limit of the sensitivity value under an alternative")
    _common(p, alt="required", seed=True)
    p.add_argument("--I", default=None, dest="I", help="also report the finite-sample law at this I")

    p = sub.add_parser("choose-score", help="rank candidate scores by predicted sensitivity value")
    _common(p, score=False, alt="required", seed=True, fmt="csv")
    p.add_argument("--score", action="append", dest="scores", default=None, help="candidate score (repeatable)")
    p.add_argument("--I", required=True, dest="I")
    p.add_argument("--summary", default="mean", help="mean | median | quantile:p")
    p.add_argument("--binary-grid", type=float, default=None, dest="binary_grid",
                   help="search binary scores on a grid with this step instead")

    p = sub.add_parser("samplesize", help="critical sample size for analysing one subgroup")
    _common(p, fmt="json")
    p.add_argument("--mu1", default=None)
    p.add_argument("--mu2", default=None)
    p.add_argument("--pi1", required=True)
    p.add_argument("--grid", type=int, default=None, help="emit an n x n grid of I* instead")

    p = sub.add_parser("split-design", help="sample-splitting screen error rates and sample size")
    _common(p, alt="required", seed=True)
    p.add_argument("--zeta", required=True)
    p.add_argument("--kappa-tilde", required=True, dest="kappa_tilde")
    p.add_argument("--alpha-tilde", default=None, dest="alpha_tilde")
    p.add_argument("--alpha-fp", default="0.05", dest="alpha_fp")
    p.add_argument("--alpha-fn", default="0.05", dest="alpha_fn")
    p.add_argument("--I", default=None, dest="I")

    p = sub.add_parser("screen", help="rank many outcomes by sensitivity value")
    _common(p, data=True, tail="two-sided", method=True, fmt="csv")

    p = sub.add_parser("qq", help="Q-Q and histogram data for screened outcomes")
    _common(p, data=True, tail="greater", method=True, fmt="csv")
    p.add_argument("--bins", type=float, default=None, help="emit histogram counts with this bin width")

    p = sub.add_parser("simulate", help="run a registered simulation job")
    p.add_argument("job", help=", ".join(sorted(sim.JOBS)))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None)
    p.add_argument("--output-format", choices=("csv", "json", "pretty"), default="csv", dest="output_format")
    return parser


# ---------------------------------------------------------------------------
# output


def _fmt_pretty(v):
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.3f}"
    return str(v)


def _json_default(v):
    if isinstance(v, float):
        return v if math.isfinite(v) else None
    return str(v)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _meta_text(v) -> str:
    return v if isinstance(v, str) else json.dumps(_clean(v), sort_keys=True, default=_json_default)


def _render_table(columns, rows, fmt, meta=None) -> str:
    if fmt == "json":
        body = {"columns": list(columns), "rows": [list(r) for r in rows]}
        if meta:
            body = {"meta": meta, **body}
        return json.dumps(_clean(body), indent=2, default=_json_default) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for k, v in (meta or {}).items():
            buf.write(f"# {k}={_meta_text(v)}\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])
        return buf.getvalue()
    cells = [list(map(str, columns))] + [[_fmt_pretty(v) for v in r] for r in rows]
    widths = [max(len(c[j]) for c in cells) for j in range(len(columns))]
    lines = ["  ".join(c[j].rjust(widths[j]) for j in range(len(columns))) for c in cells]
    head = [f"# {k}: {v}" for k, v in (meta or {}).items()]
    return "\n".join(head + lines) + "\n"


def _render_record(rec: dict, fmt) -> str:
    if fmt == "json":
        return json.dumps(_clean(rec), indent=2, default=_json_default) + "\n"
    flat = {k: (";".join(map(str, v)) if isinstance(v, (list, tuple)) else v) for k, v in rec.items()}
    if fmt == "csv":
        return _render_table(tuple(flat), [tuple(flat.values())], "csv")
    width = max(len(k) for k in flat)
    return "".join(f"{k.ljust(width)}  {_fmt_pretty(v)}\n" for k, v in flat.items())


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# data loading (stage 2: raises DataError)


def _load_single(args):
    try:
        if args.format:
            m = screening.load_matrix(args.data, args.format)
            if len(m) != 1:
                raise DataError(f"{args.data}: expected a single outcome, found {len(m)}; use `sensval screen`")
            return PairDiffs(m.row(0))
        return screening.load_pairs(args.data)
    except (SensvalError, OSError) as exc:
        raise DataError(str(exc)) from None


def _load_matrix(args):
    try:
        return screening.load_matrix(args.data, args.format or "wide")
    except (SensvalError, OSError) as exc:
        raise DataError(str(exc)) from None


# ---------------------------------------------------------------------------
# commands


def _cmd_value(args, score, alpha, tail, method):
    d = _load_single(args)
    try:
        res = sensitivity_value(d, score, alpha, tail, method)
    except SensvalError as exc:
        raise DataError(str(exc)) from None
    rec = {"score": str(score), **res.to_dict(), "seed": args.seed}
    return _render_record(rec, args.output_format)


def _cmd_table(args, score, alpha, tail, method):
    gammas = _gammas(args.gammas)
    d = _load_single(args)
    try:
        sv = score_vector(score, d)
        bounds = sensitivity_table(sv, d, gammas, method, tail)
    except SensvalError as exc:
        raise DataError(str(exc)) from None
    rows = [(b.gamma, b.p_upper, b.p_lower) for b in bounds]
    meta = {"score": str(score), "tail": tail.value, "method": method.label, "seed": args.seed}
    return _render_table(("gamma", "p_upper", "p_lower"), rows, args.output_format, meta)


def _law(spec, alt, args):
    return asymptotic_law(spec, alt, rng=Rng(args.seed), threads=args.threads)


def _cmd_power(args, score, alpha, alt):
    I = _size(args.I)
    gamma = _validated(float, args.gamma, "--gamma")
    if not gamma > 0:
        raise UsageError("--gamma must be positive")
    if args.reps and args.reps < 1000:
        raise UsageError("--reps must be 0 or at least 1000")
    if args.reps:
        res = sim.power_check(alt, score, int(I), gamma, alpha, args.reps, Rng(args.seed), args.threads)
    else:
        law = _law(score, alt, args)
        res = {v: power(law, alpha, I, gamma, v) for v in ("asymptotic", "finite", "no_constant")}
        res.update(simulated=math.nan, mu_F=law.mu_F, sigma_F_sq=law.sigma_F_sq, B=0)
    rec = {
        "alt": str(alt), "score": str(score), "I": I, "gamma": gamma, "alpha": alpha,
        "simulated": res["simulated"], "asymptotic": res["asymptotic"], "finite": res["finite"],
        "no_constant": res["no_constant"], "mu_F": res["mu_F"], "sigma_F_sq": res["sigma_F_sq"],
        "reps": res["B"], "seed": args.seed,
    }
    return _render_record(rec, args.output_format)


def _cmd_design_sensitivity(args, score, alpha, alt):
    I = _size(args.I) if args.I else None
    mu = mu_F(score, alt)
    _, _, sq = psi_norms(score)
    rec = {
        "alt": str(alt), "score": str(score), "mu_F": mu,
        "design_sensitivity": mu / (1.0 - mu) if mu < 1 else math.inf, "sigma_q_sq": sq,
    }
    if I is not None:
        law = _law(score, alt, args)
        center, sd = kappa_law_finite(law, alpha, I)
        rec.update(I=I, alpha=alpha, sigma_F_sq=law.sigma_F_sq, kappa_center=center, kappa_sd=sd, seed=args.seed)
    return _render_record(rec, args.output_format)


def _cmd_choose_score(args, alpha, alt):
    I = _size(args.I)
    if args.binary_grid is not None:
        if not 0 < args.binary_grid <= 0.05:
            raise UsageError("--binary-grid must lie in (0, 0.05]")
        grid = design.binary_score_grid(alt, I, alpha, args.binary_grid)
        meta = {"alt": str(alt), "I": I, "alpha": alpha, "best": [grid.best_tau_l, grid.best_tau_u, grid.best_mean_kappa]}
        return _render_table(("tau_l", "tau_u", "mean_kappa"), list(grid.rows()), args.output_format, meta)
    texts = args.scores or [f"ustat:{m},{lo},{hi}" for m, lo, hi in sim.USTAT_ROWS]
    specs = [_validated(ScoreSpec.parse, t, "--score") for t in texts]
    summary = args.summary
    if summary.startswith("quantile"):
        _prob(summary.partition(":")[2], "quantile level")
    elif summary not in ("mean", "median"):
        raise UsageError("--summary must be mean, median or quantile:p")
    rep = design.choose_score(specs, alt, I, alpha, summary, Rng(args.seed), threads=args.threads)
    rows = [(r.rank, str(r.spec), r.mu_F, r.sigma_q_sq, r.sigma_F_sq, r.center, r.sd, r.value) for r in rep.rows]
    meta = {"alt": str(alt), "I": I, "alpha": alpha, "summary": rep.summary, "seed": args.seed}
    return _render_table(("rank", "score", "mu_F", "sigma_q_sq", "sigma_F_sq", "center", "sd", "value"), rows, args.output_format, meta)


def _cmd_samplesize(args, score, alpha):
    pi1 = _prob(args.pi1, "--pi1")
    sq = psi_norms(score)[2]
    if args.grid is not None:
        if args.grid < 2:
            raise UsageError("--grid must be at least 2")
        rows = design.critical_sample_size_grid(pi1, args.grid, alpha, sq)
        meta = {"pi1": pi1, "alpha": alpha, "score": str(score), "sigma_q_sq": sq}
        return _render_table(("mu_F1", "mu_F2", "I_star"), rows, args.output_format, meta)
    if args.mu1 is None or args.mu2 is None:
        raise UsageError("--mu1 and --mu2 are required unless --grid is given")
    try:
        sub_spec = design.SubgroupSpec(float(args.mu1), float(args.mu2), pi1, alpha, sq)
    except (SensvalError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    i_star, eta = design.critical_sample_size(sub_spec)
    rec = {"mu_F1": sub_spec.mu_F1, "mu_F2": sub_spec.mu_F2, "pi1": pi1, "alpha": alpha, "score": str(score),
           "pooled_mu_F": sub_spec.pooled_mu, "eta_star": eta, "I_star": i_star}
    return _render_record(rec, args.output_format)


def _cmd_split_design(args, score, alpha, alt):
    zeta = _prob(args.zeta, "--zeta")
    kt = _prob(args.kappa_tilde, "--kappa-tilde")
    at = _prob(args.alpha_tilde, "--alpha-tilde") if args.alpha_tilde else alpha
    afp, afn = _prob(args.alpha_fp, "--alpha-fp"), _prob(args.alpha_fn, "--alpha-fn")
    I = _size(args.I) if args.I else None
    law = _law(score, alt, args)
    spec = design.SplitSpec(zeta, kt, at, afp, afn, law)
    need, a_opt, k_opt = design.split_minimum_sample(spec)
    rec = {"alt": str(alt), "score": str(score), "mu_F": law.mu_F, "sigma_F_sq": law.sigma_F_sq,
           "zeta": zeta, "kappa_tilde": kt, "alpha_tilde": at, "alpha_FP": afp, "alpha_FN": afn,
           "min_screen_size": need, "min_total_I": need / (1.0 - zeta),
           "optimal_alpha_tilde": a_opt, "optimal_kappa_tilde": k_opt, "seed": args.seed}
    if 0.5 < kt < law.mu_F:
        rec["screen_size_bound"] = design.split_bound(spec) ** 2
    if I is not None:
        fpr, fnr = design.split_rates(spec, I)
        rec.update(I=I, FPR=fpr, FNR=fnr)
    return _render_record(rec, args.output_format)


def _screen(args, score, alpha, tail, method):
    m = _load_matrix(args)
    try:
        return screening.screen(m, score, alpha, tail, method, args.threads)
    except SensvalError as exc:
        raise DataError(str(exc)) from None


def _cmd_screen(args, score, alpha, tail, method):
    table = _screen(args, score, alpha, tail, method)
    if args.output_format == "json":
        return json.dumps(_clean({**table.to_json(), "seed": args.seed}), indent=2) + "\n"
    if args.output_format == "csv":
        return table.to_csv()
    rows = [(r.outcome, r.effective_I, r.T, r.kappa_greater, r.kappa_less, r.kappa_two_sided, r.gamma_trunc, r.rank, ";".join(r.flags))
            for r in table.ranked()]
    meta = {"null_center": round(table.null_center, 3), "null_sd": round(table.null_sd, 3)}
    return _render_table(screening.ScreeningTable._COLUMNS, rows, "pretty", meta)


def _cmd_qq(args, score, alpha, tail, method):
    table = _screen(args, score, alpha, tail, method)
    column = {Tail.GREATER: "kappa_greater", Tail.LESS: "kappa_less", Tail.TWO_SIDED: "kappa_two_sided"}[tail]
    meta = {"null_center": table.null_center, "null_sd": table.null_sd, "column": column, "alpha": alpha}
    if args.bins is not None:
        if not args.bins > 0:
            raise UsageError("--bins must be positive")
        rows = screening.histogram_bins(table, args.bins, column)
        return _render_table(("bin_lo", "bin_hi", "count"), rows, args.output_format, meta)
    try:
        theo, obs, (c, s) = screening.qq_data(table, column)
    except SensvalError as exc:
        raise DataError(str(exc)) from None
    rows = [(float(a), float(b), float(c + s * a)) for a, b in zip(theo, obs)]
    return _render_table(("theoretical", "observed", "reference"), rows, args.output_format, meta)


def _cmd_simulate(args):
    if args.job not in sim.JOBS:
        raise UsageError(f"unknown job {args.job!r}; available: {', '.join(sorted(sim.JOBS))}")
    if args.seed < 0:
        raise UsageError("--seed must be nonnegative")
    params = {} if args.reps is None else {"reps": args.reps}
    try:
        res = sim.run_job(sim.SimJob(args.job, params), Rng(args.seed), args.threads)
    except SensvalError as exc:
        raise UsageError(str(exc)) from None
    print(f"{args.job}: {len(res.rows)} rows in {res.meta['runtime_s']} s", file=sys.stderr)
    if args.output_format == "json":
        return json.dumps(_clean(res.to_json()), indent=2) + "\n"
    if args.output_format == "csv":
        return res.to_csv()
    return _render_table(res.columns, res.rows, "pretty", {k: v for k, v in res.meta.items() if k != "runtime_s"})


def _run(args) -> str:
    cmd = args.command
    if getattr(args, "threads", 1) is not None and args.threads < 1:
        raise UsageError("--threads must be at least 1")
    if cmd == "simulate":
        return _cmd_simulate(args)
    alpha = _prob(args.alpha, "--alpha")
    score = _validated(ScoreSpec.parse, args.score, "--score") if getattr(args, "score", None) else None
    if score is not None:
        try:
            psi_norms(score)
        except SensvalError as exc:
            raise UsageError(f"invalid --score {args.score!r}: {exc}") from None
    tail = _validated(Tail.parse, args.tail, "--tail") if hasattr(args, "tail") else None
    method = None
    if hasattr(args, "method"):
        if args.seed < 0:
            raise UsageError("--seed must be nonnegative")
        method = _validated(lambda t: Method.parse(t, seed=args.seed), args.method, "--method")
    alt = _validated(AltModel.parse, args.alt, "--alt") if getattr(args, "alt", None) else None

    if cmd == "value":
        return _cmd_value(args, score, alpha, tail, method)
    if cmd == "table":
        return _cmd_table(args, score, alpha, tail, method)
    if cmd == "power":
        return _cmd_power(args, score, alpha, alt)
    if cmd == "design-sensitivity":
        return _cmd_design_sensitivity(args, score, alpha, alt)
    if cmd == "choose-score":
        return _cmd_choose_score(args, alpha, alt)
    if cmd == "samplesize":
        return _cmd_samplesize(args, score, alpha)
    if cmd == "split-design":
        return _cmd_split_design(args, score, alpha, alt)
    if cmd == "screen":
        return _cmd_screen(args, score, alpha, tail, method)
    if cmd == "qq":
        return _cmd_qq(args, score, alpha, tail, method)
    raise UsageError(f"unknown command {cmd!r}")  # pragma: no cover


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point of the ``sensval`` console script; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        text = _run(args)
        _emit(text, getattr(args, "out", None))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SensvalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
