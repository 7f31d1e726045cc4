"""Command-line interface: ``hnpgof {fit,hnp,gof,simulate,s2study}``.

Every output file starts with ``#`` header lines recording the tool version,
the command line and the master seed. Everything after the header depends
only on the inputs and the seed, never on ``--jobs``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import shlex
import sys
import warnings
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from . import __version__
from .dataio import ConfigError, DataError, load_csv, parse_scenario_config, parse_study_config
from .distributions import FAMILY_ORDER, FamilyTag
from .envelope import EnvelopeError, build_envelope, distance, repeat_hnp
from .fitting import ConvergenceWarning, FitConfig, FitError, bic, fit_model
from .simulation import FREQUENCY_COLUMNS, S2_COLUMNS, run_appendix_s2_study, run_scenario, tabulate
from .svg import PlotSpec, render_svg

log = logging.getLogger("hnpgof")

SEED_ENV = "HNPGOF_SEED"
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
GOF_COLUMNS = ("family", "p", "median", "iqr", "sd", "bic", "note")
REPLICATION_COLUMNS = ("scenario", "replication", "family", "metric", "value", "converged", "flags")
FAILURE_COLUMNS = ("scenario", "replication", "reason")
FULL_REPS = 1000


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _default_seed() -> int:
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _family(text: str) -> FamilyTag:
    try:
        return FamilyTag.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _family_list(text: str) -> tuple[FamilyTag, ...]:
    fams = tuple(_family(t) for t in text.split(",") if t.strip())
    if not fams:
        raise argparse.ArgumentTypeError("empty family list")
    return fams


def _p_list(text: str) -> tuple[int, ...]:
    try:
        ps = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad p list {text!r}") from None
    if not ps or not set(ps) <= {1, 2}:
        raise argparse.ArgumentTypeError("p values must be 1 and/or 2")
    return ps


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _alpha(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return v


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="CSV file, or a bundled name (spider, walleye)")
    p.add_argument("--response", help="response column (bundled data has a default)")
    p.add_argument("--covariates", help="comma-separated covariate columns")
    p.add_argument("--transform", action="append", default=[], metavar="COL=TAG",
                   help="covariate transform, none or log1p; repeatable")
    p.add_argument("--zero-model", choices=("intercept", "covariates"), default="covariates",
                   help="zero-inflation model for ZIP/ZINB (default: covariates)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hnpgof", description="Half-normal plot goodness-of-fit for count models")
    parser.add_argument("--version", action="version", version=f"hnpgof {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit one count model and print a report")
    _add_data_flags(p)
    p.add_argument("--family", type=_family, required=True)
    p.add_argument("--json", help="also write the fit as JSON to this path")

    p = sub.add_parser("hnp", help="half-normal plot envelope for one fitted model")
    _add_data_flags(p)
    p.add_argument("--family", type=_family, required=True)
    p.add_argument("--sims", type=_positive_int, default=99)
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="envelope CSV path (default: stdout)")
    p.add_argument("--svg", help="also write the plot as SVG")
    p.add_argument("--jobs", type=_positive_int, default=1)

    p = sub.add_parser("gof", help="distance summaries over repeated envelopes")
    _add_data_flags(p)
    p.add_argument("--families", type=_family_list, default=FAMILY_ORDER)
    p.add_argument("--p", type=_p_list, default=(1, 2))
    p.add_argument("--reps", type=_positive_int, default=100)
    p.add_argument("--sims", type=_positive_int, default=99)
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out")
    p.add_argument("--jobs", type=_positive_int, default=1)

    p = sub.add_parser("simulate", help="run simulation scenarios from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--full", action="store_true", help=f"use {FULL_REPS} replications")
    p.add_argument("--jobs", type=_positive_int, default=1)

    p = sub.add_parser("s2study", help="penalised and width-scaled distance study")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--jobs", type=_positive_int, default=1)
    return parser


# --------------------------------------------------------------------------- #
# Output
# --------------------------------------------------------------------------- #


class _Writer:
    """Single sink for one output artifact: header first, then body lines."""

    def __init__(self, path: str | None, argv: Sequence[str], seed):
        self.path = path
        self.handle: TextIO = open(path, "w", newline="", encoding="utf-8") if path else sys.stdout
        self.write(f"# hnpgof {__version__}\n")
        self.write(f"# command: {shlex.join(['hnpgof', *argv])}\n")
        self.write(f"# seed: {seed}\n")

    def write(self, text: str) -> None:
        self.handle.write(text)

    def flush(self):
        self.handle.flush()

    def close(self):
        if self.handle is not sys.stdout:
            self.handle.close()
        else:
            self.handle.flush()


def _csv_line(values) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(values)
    return buf.getvalue()


def _num(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


# --------------------------------------------------------------------------- #
# Commands
# --------------------------------------------------------------------------- #


def _transforms(items: Sequence[str], covariates) -> dict[str, str]:
    out = {}
    for item in items:
        col, sep, tag = item.partition("=")
        if not sep:
            # bare tag applies to every covariate
            for c in covariates or []:
                out[c] = item
            continue
        out[col.strip()] = tag.strip()
    return out


def _load(args):
    covs = [c.strip() for c in args.covariates.split(",") if c.strip()] if args.covariates else None
    bundled_covs = None
    if covs is None:
        from .dataio import BUNDLED

        if args.data in BUNDLED:
            bundled_covs = list(BUNDLED[args.data].covariates)
    return load_csv(args.data, args.response, covs,
                    _transforms(args.transform, covs if covs is not None else bundled_covs))


def _fit(family, data, zero_model):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        return fit_model(family, data, FitConfig(zero_model=zero_model))


def _fit_dict(fit, data) -> dict:
    out = dict(
        family=fit.family.value,
        label=fit.label,
        n=fit.n,
        coefficients=dict(zip(data.column_names, map(float, fit.beta))),
        phi_hat=fit.phi_hat,
        nu_hat=fit.nu_hat,
        zero_model=fit.zero_model,
        zero_coefficients=None if fit.zero_coef is None else dict(
            zip(data.column_names if fit.zero_model == "covariates" else ["(Intercept)"],
                map(float, fit.zero_coef))),
        loglik=fit.loglik,
        bic=bic(fit) if fit.loglik is not None else None,
        n_params=fit.n_params,
        converged=fit.converged,
        iterations=fit.iterations,
        flags=list(fit.flags),
    )
    # JSON has no infinities; a pinned zero model has intercept -inf
    if out["zero_coefficients"]:
        out["zero_coefficients"] = {k: (None if not math.isfinite(v) else v)
                                    for k, v in out["zero_coefficients"].items()}
    return out


def cmd_fit(args, argv) -> int:
    data = _load(args)
    fit = _fit(args.family, data, args.zero_model)
    d = _fit_dict(fit, data)
    lines = [f"family: {fit.label}", f"n: {fit.n}", "coefficients:"]
    width = max(len(c) for c in data.column_names)
    for name, b in d["coefficients"].items():
        lines.append(f"  {name:<{width}}  {b: .6f}")
    if fit.phi_hat is not None:
        what = "theta" if fit.family in (FamilyTag.NBQUAD, FamilyTag.ZINB) else "phi"
        lines.append(f"{what}_hat: {fit.phi_hat:.6g}")
    if fit.nu_hat is not None:
        lines.append(f"nu_hat: {fit.nu_hat:.6g}")
        lines.append(f"zero model: {fit.zero_model}")
        for name, g in (d["zero_coefficients"] or {}).items():
            lines.append(f"  {name:<{width}}  {'-inf' if g is None else f'{g: .6f}'}")
    lines.append(f"loglik: {'n/a' if fit.loglik is None else f'{fit.loglik:.4f}'}")
    lines.append("BIC: n/a" if d["bic"] is None else f"BIC: {d['bic']:.2f}")
    lines.append(f"converged: {'yes' if fit.converged else 'no'} ({fit.iterations} iterations)")
    if fit.flags:
        lines.append(f"flags: {'; '.join(fit.flags)}")
    print("\n".join(lines))
    if args.json:
        Path(args.json).write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_hnp(args, argv) -> int:
    seed = _default_seed() if args.seed is None else args.seed
    data = _load(args)
    fit = _fit(args.family, data, args.zero_model)
    env = build_envelope(fit, data, n_sim=args.sims, alpha=args.alpha, seed=seed, jobs=args.jobs)
    out = _Writer(args.out, argv, seed)
    try:
        out.write(env.to_csv())
    finally:
        out.close()
    d1 = distance(env, 1).total
    log.info("%s: %d of %d points outside; d(p=1) = %.4f", fit.label, env.outside_count, env.n, d1)
    if args.svg:
        title = f"{fit.label} (seed {seed})"
        Path(args.svg).write_text(render_svg(PlotSpec(env, title)), encoding="utf-8")
    return EXIT_OK


def _fmt2(v) -> str:
    return "-" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.2f}"


def cmd_gof(args, argv) -> int:
    seed = _default_seed() if args.seed is None else args.seed
    if args.reps < 2:
        raise UsageError("gof: --reps must be >= 2")
    data = _load(args)
    out = _Writer(args.out, argv, seed)
    status = EXIT_OK
    try:
        out.write(_csv_line(GOF_COLUMNS))
        for family in args.families:
            try:
                fit = _fit(family, data, args.zero_model)
                summ = repeat_hnp(fit, data, reps=args.reps, p=args.p, seed=seed,
                                  n_sim=args.sims, alpha=args.alpha, jobs=args.jobs)
            except (FitError, EnvelopeError) as exc:
                status = EXIT_RUNTIME
                for p in args.p:
                    out.write(_csv_line([family.label, p, "-", "-", "-", "-", f"failed: {exc}"]))
                continue
            b = bic(fit) if fit.loglik is not None else None
            note = "; ".join(fit.flags)
            for p in args.p:
                s = summ[p]
                out.write(_csv_line([family.label, p, _fmt2(s.median), _fmt2(s.iqr), _fmt2(s.sd),
                                     _fmt2(b), note]))
            out.flush()
    finally:
        out.close()
    return status


def _read_config(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(exc.strerror or str(exc), None, path) from None


def cmd_simulate(args, argv) -> int:
    text = _read_config(args.config)
    scenarios = parse_scenario_config(text, args.config, seed=args.seed,
                                      reps=FULL_REPS if args.full else None)
    seeds = sorted({s.seed for s in scenarios})
    out = _Writer(args.out, argv, ",".join(map(str, seeds)))
    status = EXIT_OK
    try:
        out.write(_csv_line(REPLICATION_COLUMNS))
        results = []
        for cfg in scenarios:
            log.info("scenario %s: %d replications", cfg.label, cfg.reps)

            def emit(rep, label=cfg.label, ps=cfg.p_values):
                for rec in rep.records:
                    flags = ";".join(rec.flags)
                    conv = "true" if rec.converged else "false"
                    for p in ps:
                        out.write(_csv_line([label, rep.index, rec.family.label, f"p={p}",
                                             _num(rec.distances[p]), conv, flags]))
                    out.write(_csv_line([label, rep.index, rec.family.label, "BIC",
                                         _num(rec.bic), conv, flags]))
                out.flush()

            results.append(run_scenario(cfg, jobs=args.jobs, on_replication=emit))
        out.write("# selection frequencies\n")
        out.write(_csv_line(FREQUENCY_COLUMNS))
        failures = []
        for res in results:
            rows, fails = tabulate(res)
            for row in rows:
                out.write(_csv_line([row[c] for c in FREQUENCY_COLUMNS]))
            failures += [(res.config.label, r, msg) for r, msg in fails]
            if res.completed == 0:
                status = EXIT_RUNTIME
        if failures:
            out.write("# failed replications\n")
            out.write(_csv_line(FAILURE_COLUMNS))
            for f in failures:
                out.write(_csv_line(f))
    except KeyboardInterrupt:
        out.write("# interrupted; results above are partial\n")
        status = EXIT_RUNTIME
    finally:
        out.close()
    return status


def cmd_s2study(args, argv) -> int:
    text = _read_config(args.config)
    cfg = parse_study_config(text, args.config, seed=args.seed)
    out = _Writer(args.out, argv, cfg.seed)
    status = EXIT_OK
    try:
        res = run_appendix_s2_study(cfg, jobs=args.jobs)
        out.write(_csv_line(S2_COLUMNS))
        for row in res.rows:
            out.write(_csv_line([_num(row[c]) if c in ("total", "log_total") else row[c]
                                 for c in S2_COLUMNS]))
        if res.failures:
            out.write("# failed replications\n")
            out.write(_csv_line(FAILURE_COLUMNS))
            for f in res.failures:
                out.write(_csv_line(f))
    except KeyboardInterrupt:
        out.write("# interrupted; no results\n")
        status = EXIT_RUNTIME
    finally:
        out.close()
    return status


COMMANDS = dict(fit=cmd_fit, hnp=cmd_hnp, gof=cmd_gof, simulate=cmd_simulate, s2study=cmd_s2study)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        with np.errstate(all="ignore"):
            status = COMMANDS[args.command](args, argv)
        sys.stdout.flush()
        return status
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except BrokenPipeError:
        # downstream reader closed early (e.g. piped into head); exit quietly
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return EXIT_RUNTIME
    except (FitError, EnvelopeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
