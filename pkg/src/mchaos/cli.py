"""Command-line entry point: ``mchaos <command> ...``.

Exit codes: 0 ok, 1 usage or invalid arguments, 2 numeric failure (failed
certificate, non-PSD kernel, memory budget), 3 a comparison that failed.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from . import __version__
from .cascades import (WeightProcess, cascade_moment_report, discrete_law, lognormal_law, sample_canonical_cascade,
                       sample_gbm_cascade)
from .core import load_field, load_mask, make_grid, save_field, save_mask, total_mass
from .coverings import canonical_lambda, chi, lambda_from_spec, sample_mrc, sample_pmc
from .errors import ArgumentError, ContractViolation, NumericError, ResourceLimitError, StageError
from .experiment import (compare, load_config, record_json, replace_seed, run_experiment, samples_csv,
                         verdict_csv, verdict_passed, verdict_text)
from .gaussian import GmcConfig, sample_gmc
from .kernels import check_positive_definite, check_sigma_regular, make_decomposition, radial_kernel
from .spectral import (box_dim_mask, correlation_dim_ensemble, estimate_fourier_dim, fourier_coefficients)
from .theory import (cascade_bound, d_gamma, d_sigma, gbm_bound, gmc_profile, lf_bound, mrc_profile, pmc_profile)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_COMPARE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgumentError(f"{self.prog}: {message}")


def _emit(obj, fmt: str, out=None):
    """Write a flat dict or a list of flat dicts as JSON or CSV."""
    if fmt == "json":
        text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    else:
        rows = obj if isinstance(obj, list) else [obj]
        keys = list(rows[0].keys()) if rows else []
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (json.dumps(v) if isinstance(v, (list, dict)) else v) for k, v in r.items()})
        text = buf.getvalue()
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# --- theory ------------------------------------------------------------------

def _profile(args):
    if args.model == "gmc":
        return gmc_profile(args.gamma, args.b)
    if args.model == "mrc":
        return mrc_profile(args.chi, args.b)
    return pmc_profile(args.a, args.chi, args.b)


def cmd_theory(args):
    t = args.what
    if t == "d-gamma":
        return {"gamma": args.gamma, "d": args.d, "d_gamma": d_gamma(args.gamma, args.d)}
    if t == "d-sigma":
        return {"sigma": args.sigma, "b": args.b, "d_sigma": d_sigma(args.sigma, args.b)}
    if t == "lf":
        if args.model == "gbm":
            cb = gbm_bound(args.sigma, args.b)
            return {"model": "gbm", "lf": cb.value, "sup": cb.sup, "p_star": cb.p_star}
        return {"model": args.model, "lf": lf_bound(args.alpha0, args.p0, _profile(args), args.b, args.d)}
    if t == "chi-bound":
        lam = canonical_lambda(args.alpha) if args.lambda_spec is None else lambda_from_spec(json.loads(args.lambda_spec))
        c = chi(lam, args.b)
        out = {"b": args.b, "chi": c, "mrc_bound": 1 - c, "degenerate": c >= 1}
        if args.a is not None:
            out["pmc_bound"] = 1 - (1 - args.a) ** 2 * c
        return out
    # cascade-bound
    if args.gbm_sigma is not None:
        cb = gbm_bound(args.gbm_sigma, args.b)
        rep = cascade_moment_report(WeightProcess("gbm", sigma=args.gbm_sigma), [1.25, 1.5, 1.75, 2.0], args.b)
    else:
        law = lognormal_law(args.lognormal) if args.lognormal is not None else discrete_law(args.values, args.probs)
        cb = cascade_bound(law.profile(), args.b, args.d, args.alpha0, args.p0)
        rep = cascade_moment_report(law, [1.25, 1.5, 1.75, 2.0], args.b, args.d)
    return {"bound": cb.value, "sup": cb.sup, "p_star": cb.p_star, "degenerate": cb.degenerate,
            "wlogw": rep["wlogw"], "moment_conditions": rep["pass"]}


# --- verify ------------------------------------------------------------------

def cmd_verify(args):
    dec = make_decomposition(args.kind, args.b, args.d, bump_c=args.bump)
    alpha0 = args.alpha0 if args.alpha0 is not None else dec.alpha0
    rep = check_sigma_regular(dec, alpha0, args.j_max)
    out = {"kind": args.kind, "b": args.b, "d": args.d, "alpha0": alpha0, "passed": rep.passed}
    for name, c in rep.conditions.items():
        out[name] = c["pass"]
        out[name + "_worst"] = c["worst_value"]
    if args.psd_level is not None:
        grid = make_grid(args.d, args.b, args.psd_level)
        worst = None
        for j in range(args.j_max + 1):
            layer = dec.layer(j)
            pr = check_positive_definite(radial_kernel(layer.radial), grid)
            if worst is None or pr.min_eig < worst[1]:
                worst = (j, pr.min_eig)
            if not pr.passed:
                out["passed"] = False
        out["psd_min_eig"], out["psd_worst_layer"] = worst[1], worst[0]
    return out, out["passed"]


# --- simulate ----------------------------------------------------------------

def cmd_simulate(args):
    seed, sid = args.seed, args.sample_id
    gl = args.grid_level if args.grid_level is not None else args.m + 2
    mask = None
    if args.model == "gmc":
        cfg = GmcConfig(args.gamma, args.d, args.b, args.m, gl, args.kernel, 1, args.bump)
        f = sample_gmc(cfg, seed, sid)
    elif args.model == "cascade":
        grid = make_grid(args.d, args.b, gl)
        if args.gbm_sigma is not None:
            f = sample_gbm_cascade(args.gbm_sigma, args.b, args.m, grid, seed, sid)
        else:
            law = lognormal_law(args.lognormal) if args.lognormal is not None else discrete_law(args.values, args.probs)
            f = sample_canonical_cascade(law, args.b, args.d, args.m, grid, seed, sid)
    else:
        grid = make_grid(1, args.b, gl)
        lam = canonical_lambda(args.alpha) if args.lambda_spec is None else lambda_from_spec(json.loads(args.lambda_spec))
        if args.model == "mrc":
            f, mask = sample_mrc(lam, args.b, args.m, grid, seed, sid)
        else:
            f = sample_pmc(lam, args.a, args.b, args.m, grid, seed, sid)
    summary = {"model": args.model, "seed": seed, "sample_id": sid, "d": f.grid.d, "b": f.grid.b,
               "level": f.grid.level, "m": f.m, "mass": total_mass(f), "max_density": float(f.values.max())}
    if args.out:
        summary["field"] = [str(p) for p in save_field(f, args.out)]
        if mask is not None:
            summary["mask"] = [str(p) for p in save_mask(mask, f.grid, args.out)]
    if mask is not None:
        summary["uncovered_cells"] = int(mask.sum())
    return summary


# --- estimate ----------------------------------------------------------------

def cmd_estimate(args):
    if args.what == "boxdim":
        rows = []
        for stem in args.inputs:
            mask, grid = load_mask(stem)
            hi = args.levels[1] if args.levels else grid.level
            lo = args.levels[0] if args.levels else 2
            e = box_dim_mask(mask, range(lo, hi + 1), grid.b)
            rows.append({"input": stem, "slope": e.slope, "stderr": e.stderr, "flags": e.flags})
        return rows
    fields = [load_field(s) for s in args.inputs]
    g = fields[0].grid
    if any(f.grid != g for f in fields):
        raise ArgumentError("all inputs must share one grid")
    if args.what == "fourier":
        br = tuple(args.band_range) if args.band_range else None
        e = estimate_fourier_dim([fourier_coefficients(f) for f in fields], g.b, args.mode, args.stat, br)
    else:
        lo, hi = args.levels if args.levels else (2, max(f.m for f in fields))
        e = correlation_dim_ensemble(fields, range(lo, hi + 1), args.mode or "mean")
    return {"estimator": args.what, "slope": e.slope, "stderr": e.stderr, "n_samples": e.n_samples,
            "range": list(e.bands), "flags": e.flags}


# --- run / compare -----------------------------------------------------------

def cmd_run(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace_seed(cfg, args.seed)
    rec = run_experiment(cfg, args.threads, args.out)
    if args.format == "json":
        sys.stdout.write(record_json(rec))
    else:
        sys.stdout.write(samples_csv(rec))
    return rec


def cmd_compare(args):
    p = Path(args.record)
    if p.is_dir():
        p = p / "record.json"
    try:
        rec = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ArgumentError(f"malformed JSON in {p} at line {e.lineno}, column {e.colno}: {e.msg}") from None
    rows = compare(rec)
    text = verdict_csv(rows) if args.format == "csv" else verdict_text(rows) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return verdict_passed(rows)


# --- parser ------------------------------------------------------------------

def _weights_args(p):
    p.add_argument("--values", type=float, nargs="+", help="discrete weight values")
    p.add_argument("--probs", type=float, nargs="+", help="discrete weight probabilities")
    p.add_argument("--lognormal", type=float, help="lognormal weight sigma")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--threads", type=int, default=None, help="worker threads (env MCHAOS_THREADS)")
    common.add_argument("--out", default=None, help="output path or directory")
    common.add_argument("--format", choices=("json", "csv"), default="json")

    ap = _Parser(prog="mchaos", description="Multiplicative chaos simulation and diagnostics.")
    ap.add_argument("--version", action="version", version=f"mchaos {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    th = sub.add_parser("theory", help="closed-form predictions")
    ts = th.add_subparsers(dest="what", required=True, parser_class=_Parser)
    p = ts.add_parser("d-gamma", parents=[common])
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--d", type=int, default=1)
    p = ts.add_parser("d-sigma", parents=[common])
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--b", type=int, default=2)
    p = ts.add_parser("lf", parents=[common], help="Fourier-decay lower bound via the sup over p")
    p.add_argument("--model", choices=("gmc", "mrc", "pmc", "gbm"), required=True)
    p.add_argument("--gamma", type=float)
    p.add_argument("--chi", type=float)
    p.add_argument("--a", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--b", type=int, default=2)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--alpha0", type=float, default=1.0)
    p.add_argument("--p0", type=float, default=2.0)
    p = ts.add_parser("chi-bound", parents=[common], help="chi(b, Lambda) and covering bounds")
    p.add_argument("--alpha", type=float, default=None, help="canonical Lambda_alpha")
    p.add_argument("--lambda", dest="lambda_spec", default=None, help="Lambda spec as JSON")
    p.add_argument("--a", type=float, default=None)
    p.add_argument("--b", type=int, default=2)
    p = ts.add_parser("cascade-bound", parents=[common])
    _weights_args(p)
    p.add_argument("--gbm-sigma", type=float, default=None)
    p.add_argument("--b", type=int, default=2)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--alpha0", type=float, default=1.0)
    p.add_argument("--p0", type=float, default=2.0)

    ve = sub.add_parser("verify", help="kernel certificates")
    vs = ve.add_subparsers(dest="what", required=True, parser_class=_Parser)
    p = vs.add_parser("kernel", parents=[common])
    p.add_argument("--kind", choices=("exact-log", "star-scale"), default="exact-log")
    p.add_argument("--b", type=int, default=2)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--j-max", type=int, default=12)
    p.add_argument("--alpha0", type=float, default=None)
    p.add_argument("--bump", type=float, default=1.0, help="bump sharpness c (star-scale)")
    p.add_argument("--psd-level", type=int, default=None, help="also run the PSD check on this grid level")

    si = sub.add_parser("simulate", help="draw one sample and save it")
    ss = si.add_subparsers(dest="model", required=True, parser_class=_Parser)
    for name in ("gmc", "cascade", "mrc", "pmc"):
        p = ss.add_parser(name, parents=[common])
        p.add_argument("--b", type=int, default=2)
        p.add_argument("--m", type=int, default=10)
        p.add_argument("--grid-level", type=int, default=None)
        p.add_argument("--sample-id", type=int, default=0)
        if name in ("gmc", "cascade"):
            p.add_argument("--d", type=int, default=1)
        if name == "gmc":
            p.add_argument("--gamma", type=float, required=True)
            p.add_argument("--kernel", choices=("exact-log", "star-scale"), default=None)
            p.add_argument("--bump", type=float, default=1.0)
        elif name == "cascade":
            _weights_args(p)
            p.add_argument("--gbm-sigma", type=float, default=None)
        else:
            p.add_argument("--alpha", type=float, default=None)
            p.add_argument("--lambda", dest="lambda_spec", default=None)
            if name == "pmc":
                p.add_argument("--a", type=float, required=True)

    es = sub.add_parser("estimate", help="dimension estimates from saved fields or masks")
    ess = es.add_subparsers(dest="what", required=True, parser_class=_Parser)
    p = ess.add_parser("fourier", parents=[common])
    p.add_argument("inputs", nargs="+", help="field stems (X for X.bin/X.json)")
    p.add_argument("--mode", choices=("ensemble-mean", "pathwise", "pathwise-max"), default="ensemble-mean")
    p.add_argument("--stat", choices=("logmean", "mean", "max"), default="logmean")
    p.add_argument("--band-range", type=int, nargs=2, default=None)
    p = ess.add_parser("corrdim", parents=[common])
    p.add_argument("inputs", nargs="+")
    p.add_argument("--mode", choices=("mean", "pathwise"), default="mean")
    p.add_argument("--levels", type=int, nargs=2, default=None)
    p = ess.add_parser("boxdim", parents=[common])
    p.add_argument("inputs", nargs="+", help="mask stems (X for X.mask/X.mask.json)")
    p.add_argument("--levels", type=int, nargs=2, default=None)

    p = sub.add_parser("run", parents=[common], help="run an experiment config")
    p.add_argument("config")
    p = sub.add_parser("compare", parents=[common], help="compare a run record with theory")
    p.add_argument("record", help="record.json or a run directory")
    return ap


def _validate(args):
    if args.command == "theory" and args.what == "lf":
        need = {"gmc": ["gamma"], "mrc": ["chi"], "pmc": ["a", "chi"], "gbm": ["sigma"]}[args.model]
        missing = [n for n in need if getattr(args, n) is None]
        if missing:
            raise ArgumentError(f"theory lf --model {args.model} needs --{' --'.join(missing)}")
    if getattr(args, "what", None) == "chi-bound" or getattr(args, "model", None) in ("mrc", "pmc"):
        if (getattr(args, "alpha", None) is None) == (getattr(args, "lambda_spec", None) is None):
            raise ArgumentError("give exactly one of --alpha or --lambda")
    if (args.command == "simulate" and args.model == "cascade") or getattr(args, "what", None) == "cascade-bound":
        picked = sum(x is not None for x in (args.values, args.lognormal, args.gbm_sigma))
        if picked != 1:
            raise ArgumentError("give exactly one weight law: --values/--probs, --lognormal or --gbm-sigma")
        if args.values is not None and args.probs is None:
            raise ArgumentError("--values needs --probs")
    if args.command == "simulate" and args.seed is None:
        args.seed = 0


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _validate(args)
        if args.command == "theory":
            _emit(cmd_theory(args), args.format, args.out)
        elif args.command == "verify":
            out, ok = cmd_verify(args)
            _emit(out, args.format, args.out)
            return EXIT_OK if ok else EXIT_NUMERIC
        elif args.command == "simulate":
            _emit(cmd_simulate(args), args.format)
        elif args.command == "estimate":
            _emit(cmd_estimate(args), args.format, args.out)
        elif args.command == "run":
            cmd_run(args)
        else:
            return EXIT_OK if cmd_compare(args) else EXIT_COMPARE
        return EXIT_OK
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return _code(e.cause) or EXIT_NUMERIC
    except Exception as e:  # noqa: BLE001 - mapped to an exit code
        code = _code(e)
        if code is None:
            raise
        print(f"error: {e}", file=sys.stderr)
        return code


def _code(e):
    if isinstance(e, (NumericError, ResourceLimitError)):
        return EXIT_NUMERIC
    if isinstance(e, (ArgumentError, ContractViolation, FileNotFoundError, KeyError, ValueError)):
        return EXIT_USAGE
    return None


if __name__ == "__main__":
    sys.exit(main())
