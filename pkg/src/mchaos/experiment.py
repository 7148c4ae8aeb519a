"""Experiment configs, parallel ensemble runs, run records and comparisons.

A run is a pure function of its config: sample ``i`` uses the counter-based
stream (master_seed, i, ...), per-sample reductions are merged in sample_id
order, and nothing time- or thread-dependent enters the record.  Wall-clock
goes to a separate ``timing.json`` so records stay byte-identical.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import shutil
import tempfile
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .cascades import discrete_law, lognormal_law, constant_law, sample_canonical_cascade, sample_gbm_cascade
from .core import make_grid, total_mass
from .coverings import canonical_lambda, chi, lambda_from_spec, sample_mrc, sample_pmc
from .errors import ArgumentError, StageError
from .gaussian import GmcConfig, sample_gmc
from .spectral import (band_statistics, box_counts, box_dim_from_counts, correlation_dim_from_sums,
                       correlation_sums, estimate_fourier_dim, fourier_coefficients)
from .theory import cascade_bound, d_gamma, d_sigma, mrc_bound, pmc_bound

MODELS = ("gmc", "cascade", "mrc", "pmc")
ESTIMATORS = ("fourier", "corrdim", "boxdim", "mass")
DEFAULT_TOL = {"fourier": 0.15, "corrdim": 0.10, "boxdim": 0.10}
THREADS_ENV = "MCHAOS_THREADS"

_PARAM_KEYS = {
    "gmc": {"gamma", "kernel", "bump"},
    "cascade": {"weights"},
    "mrc": {"alpha", "lambda"},
    "pmc": {"alpha", "lambda", "a"},
}
_EST_KEYS = {
    "fourier": {"name", "mode", "stat", "band_range", "tol", "check"},
    "corrdim": {"name", "mode", "levels", "tol", "check"},
    "boxdim": {"name", "levels", "tol", "check"},
    "mass": {"name"},
}


def _reject_unknown(where: str, got: dict, allowed: set):
    if not isinstance(got, dict):
        raise ArgumentError(f"{where} must be an object")
    extra = set(got) - allowed
    if extra:
        raise ArgumentError(f"unknown keys in {where}: {sorted(extra)}")


@dataclass(frozen=True)
class EstimatorSpec:
    name: str
    mode: str | None = None
    stat: str = "logmean"
    band_range: tuple | None = None
    levels: tuple | None = None
    tol: float | None = None
    check: str = "two-sided"  # or "lower": pass iff estimate >= prediction - tol


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    params: dict
    d: int = 1
    b: int = 2
    m: int = 10
    grid_level: int | None = None
    samples: int = 64
    master_seed: int = 0
    estimators: tuple = ()
    out_dir: str | None = None

    def canonical(self) -> dict:
        """Normalized config without the output directory (the hashed part)."""
        out = asdict(self)
        out.pop("out_dir")
        out["estimators"] = [{k: v for k, v in asdict(e).items() if v is not None} for e in self.estimators]
        return json.loads(json.dumps(out))

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def default_estimators(model: str, m: int) -> tuple:
    est = [EstimatorSpec("fourier", "ensemble-mean", band_range=(1, max(m - 2, 3)), tol=DEFAULT_TOL["fourier"]),
           EstimatorSpec("mass")]
    if model == "mrc":
        est.insert(1, EstimatorSpec("boxdim", levels=(2, m), tol=DEFAULT_TOL["boxdim"]))
    else:
        est.insert(1, EstimatorSpec("corrdim", "mean", levels=(2, m), tol=DEFAULT_TOL["corrdim"]))
    return tuple(est)


def _parse_estimator(raw: dict, m: int) -> EstimatorSpec:
    if not isinstance(raw, dict) or raw.get("name") not in ESTIMATORS:
        raise ArgumentError(f"estimator must be an object with name in {ESTIMATORS}")
    name = raw["name"]
    _reject_unknown(f"estimator '{name}'", raw, _EST_KEYS[name])
    check = raw.get("check", "two-sided")
    if check not in ("two-sided", "lower"):
        raise ArgumentError("check must be 'two-sided' or 'lower'")
    tol = raw.get("tol", DEFAULT_TOL.get(name))
    if tol is not None and not float(tol) >= 0:
        raise ArgumentError("tol must be >= 0")
    tol = None if tol is None else float(tol)
    if name == "fourier":
        mode = raw.get("mode", "ensemble-mean")
        if mode not in ("ensemble-mean", "pathwise", "pathwise-max"):
            raise ArgumentError(f"unknown fourier mode {mode!r}")
        br = raw.get("band_range", [1, max(m - 2, 3)])
        return EstimatorSpec(name, mode, raw.get("stat", "logmean"), tuple(int(x) for x in br), None, tol, check)
    levels = tuple(int(x) for x in raw.get("levels", [2, m]))
    if len(levels) != 2 or levels[0] >= levels[1]:
        raise ArgumentError("levels must be [lo, hi] with lo < hi")
    if name == "corrdim":
        mode = raw.get("mode", "mean")
        if mode not in ("mean", "pathwise"):
            raise ArgumentError(f"unknown corrdim mode {mode!r}")
        return EstimatorSpec(name, mode, levels=levels, tol=tol, check=check)
    if name == "boxdim":
        return EstimatorSpec(name, levels=levels, tol=tol, check=check)
    return EstimatorSpec("mass")


def config_from_dict(raw: dict) -> ExperimentConfig:
    _reject_unknown("config", raw, {"model", "params", "grid", "ensemble", "estimators", "output"})
    model = raw.get("model")
    if model not in MODELS:
        raise ArgumentError(f"model must be one of {MODELS}, got {model!r}")
    params = raw.get("params", {})
    _reject_unknown("params", params, _PARAM_KEYS[model])
    grid = raw.get("grid", {})
    _reject_unknown("grid", grid, {"d", "b", "m", "grid_level"})
    ens = raw.get("ensemble", {})
    _reject_unknown("ensemble", ens, {"samples", "master_seed"})
    outp = raw.get("output", {})
    _reject_unknown("output", outp, {"dir"})
    d, b, m = int(grid.get("d", 1)), int(grid.get("b", 2)), int(grid.get("m", 10))
    if d < 1 or b < 2 or m < 1:
        raise ArgumentError("need d >= 1, b >= 2, m >= 1")
    gl = grid.get("grid_level")
    gl = m + 2 if gl is None else int(gl)
    if gl < m:
        raise ArgumentError("grid_level must be >= m")
    S = int(ens.get("samples", 64))
    if S < 2:
        raise ArgumentError("need at least 2 samples")
    seed = int(ens.get("master_seed", 0))
    if seed < 0:
        raise ArgumentError("master_seed must be >= 0")
    if model in ("mrc", "pmc") and d != 1:
        raise ArgumentError("covering models are implemented for d = 1")
    if "estimators" in raw:
        if not isinstance(raw["estimators"], list) or not raw["estimators"]:
            raise ArgumentError("estimators must be a non-empty list")
        est = tuple(_parse_estimator(e, m) for e in raw["estimators"])
    else:
        est = default_estimators(model, m)
    if model != "mrc" and any(e.name == "boxdim" for e in est):
        raise ArgumentError("boxdim needs an uncovered-set mask (model mrc)")
    cfg = ExperimentConfig(model, json.loads(json.dumps(params)), d, b, m, gl, S, seed, est, outp.get("dir"))
    build_sampler(cfg)  # validates model params
    return cfg


def replace_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    if seed < 0:
        raise ArgumentError("master_seed must be >= 0")
    return replace(cfg, master_seed=int(seed))


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ArgumentError(f"malformed JSON in {path} at line {e.lineno}, column {e.colno}: {e.msg}") from None
    return config_from_dict(raw)


# --- samplers ----------------------------------------------------------------

def _lambda(params: dict):
    if ("alpha" in params) == ("lambda" in params):
        raise ArgumentError("give exactly one of 'alpha' (canonical Lambda) or 'lambda'")
    if "alpha" in params:
        return canonical_lambda(float(params["alpha"]))
    return lambda_from_spec(params["lambda"])


def _weight_law(w: dict):
    if not isinstance(w, dict):
        raise ArgumentError("weights must be an object")
    kind = w.get("kind")
    keys = {"discrete": {"kind", "values", "probs"}, "lognormal": {"kind", "sigma"},
            "gbm": {"kind", "sigma"}, "constant": {"kind"}}
    if kind not in keys:
        raise ArgumentError(f"weights.kind must be one of {sorted(keys)}")
    _reject_unknown("weights", w, keys[kind])
    if kind == "discrete":
        return discrete_law(w["values"], w["probs"])
    if kind == "lognormal":
        return lognormal_law(float(w["sigma"]))
    if kind == "constant":
        return constant_law()
    return None  # gbm


def build_sampler(cfg: ExperimentConfig):
    """sample_id -> (DensityField, mask or None), plus model info for predictions."""
    p = cfg.params
    if cfg.model == "gmc":
        if "gamma" not in p:
            raise ArgumentError("gmc needs params.gamma")
        gc = GmcConfig(float(p["gamma"]), cfg.d, cfg.b, cfg.m, cfg.grid_level, p.get("kernel"),
                       cfg.samples, float(p.get("bump", 1.0)))
        return lambda sid: (sample_gmc(gc, cfg.master_seed, sid), None)
    grid = make_grid(cfg.d, cfg.b, cfg.grid_level)
    if cfg.model == "cascade":
        if "weights" not in p:
            raise ArgumentError("cascade needs params.weights")
        law = _weight_law(p["weights"])
        if law is None:
            if cfg.d != 1:
                raise ArgumentError("gbm cascades are implemented for d = 1")
            sigma = float(p["weights"]["sigma"])
            if not 0 <= sigma < math.sqrt(2 * math.log(cfg.b)):
                raise ArgumentError(f"gbm sigma must lie in [0, sqrt(2 log b)), got {sigma}")
            return lambda sid: (sample_gbm_cascade(sigma, cfg.b, cfg.m, grid, cfg.master_seed, sid), None)
        return lambda sid: (sample_canonical_cascade(law, cfg.b, cfg.d, cfg.m, grid, cfg.master_seed, sid), None)
    lam = _lambda(p)
    if cfg.model == "mrc":
        def draw(sid):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                return sample_mrc(lam, cfg.b, cfg.m, grid, cfg.master_seed, sid)
        return draw
    if "a" not in p:
        raise ArgumentError("pmc needs params.a")
    a = float(p["a"])
    if not 0 < a < 1:
        raise ArgumentError("pmc needs a in (0, 1)")
    return lambda sid: (sample_pmc(lam, a, cfg.b, cfg.m, grid, cfg.master_seed, sid), None)


def predictions(cfg: ExperimentConfig) -> tuple[dict, list]:
    """Theory predictions per estimator name, plus warnings."""
    p, warn = cfg.params, []
    out = {"mass": 1.0}
    if cfg.model == "gmc":
        D = d_gamma(float(p["gamma"]), cfg.d) if p["gamma"] > 0 else float(cfg.d)
        kernel = p.get("kernel") or ("exact-log" if cfg.d == 1 else "star-scale")
        alpha0 = 0.5 if kernel == "exact-log" else 1.0
        out.update(fourier=min(2 * alpha0, D), corrdim=D)
    elif cfg.model == "cascade":
        w = p["weights"]
        if w["kind"] == "gbm":
            out["fourier"] = d_sigma(float(w["sigma"]), cfg.b) if w["sigma"] > 0 else 1.0
        else:
            law = _weight_law(w)
            if law.degenerate:
                out["fourier"] = float(cfg.d)
            else:
                out["fourier"] = cascade_bound(law.profile(), cfg.b, cfg.d).value
            e2 = law.moment(2.0)
            if e2 < cfg.b**cfg.d:
                out["corrdim"] = cfg.d - math.log(e2) / math.log(cfg.b)
    else:
        c = chi(_lambda(p), cfg.b)
        out["chi"] = c
        if c >= 1:
            warn.append(f"degenerate regime: chi(b, Lambda) = {c:.6g} >= 1")
        if cfg.model == "mrc":
            out.update(fourier=max(mrc_bound(c), 0.0), boxdim=max(1 - c, 0.0))
        else:
            out["fourier"] = pmc_bound(float(p["a"]), c)
    return out, warn


# --- running -----------------------------------------------------------------

def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1"))
    if threads < 1:
        raise ArgumentError("threads must be >= 1")
    return threads


def _per_sample(cfg: ExperimentConfig, draw, sid: int) -> dict:
    f, mask = draw(sid)
    v = f.values
    res = {
        "sample_id": sid,
        "mass": total_mass(f),
        "max_density": float(v.max()),
        "zero_fraction": float((v == 0).mean()),
    }
    names = {e.name for e in cfg.estimators}
    if "fourier" in names:
        res["spectrum"] = fourier_coefficients(f)
    for e in cfg.estimators:
        if e.name == "corrdim":
            res["corr_" + str(e.levels)] = correlation_sums(f, range(e.levels[0], e.levels[1] + 1))
        if e.name == "boxdim":
            res["box_" + str(e.levels)] = box_counts(mask, cfg.b, range(e.levels[0], e.levels[1] + 1))
    return res


def _stage(name, fn, *args):
    try:
        return fn(*args)
    except StageError:
        raise
    except Exception as e:  # noqa: BLE001 - re-raised with the stage attached
        raise StageError(name, e) from e


def _estimate_dict(est) -> dict:
    out = {"slope": est.slope, "stderr": est.stderr, "method": est.method, "n_samples": est.n_samples,
           "bands" if est.method.startswith("fourier") else "levels": list(est.bands), "flags": list(est.flags)}
    if "slopes" not in est.table:
        out["intercept"] = est.intercept
    return out


def _clean(x):
    """JSON-safe copy: non-finite floats become None."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def run_experiment(cfg: ExperimentConfig, threads: int | None = None, out_dir=None) -> dict:
    """Draw the ensemble, apply the estimators and (optionally) persist the record.

    Output files: record.json, samples.csv, bands.csv (fourier), timing.json.
    They are written to a temporary sibling directory first and moved into
    place only when every stage succeeded.
    """
    threads = resolve_threads(threads)
    t0 = time.perf_counter()
    pred, warn = _stage("predict", predictions, cfg)
    draw = _stage("setup", build_sampler, cfg)

    def work(sid):
        return _per_sample(cfg, draw, sid)

    def sample_all():
        with ThreadPoolExecutor(max_workers=threads) as ex:
            res = list(ex.map(work, range(cfg.samples)))
        return sorted(res, key=lambda r: r["sample_id"])

    rows = _stage("sampling", sample_all)
    t_sample = time.perf_counter() - t0

    def estimate():
        est, bands = {}, None
        for e in cfg.estimators:
            if e.name == "fourier":
                spectra = [r["spectrum"] for r in rows]
                de = estimate_fourier_dim(spectra, cfg.b, e.mode, e.stat, e.band_range)
                est["fourier"] = _estimate_dict(de)
                P = np.mean([s.power() for s in spectra], axis=0)
                bands = band_statistics(spectra[0], cfg.b, P)
            elif e.name == "corrdim":
                sums = np.array([r["corr_" + str(e.levels)] for r in rows])
                de = correlation_dim_from_sums(sums, range(e.levels[0], e.levels[1] + 1), cfg.b, e.mode)
                est["corrdim"] = _estimate_dict(de)
            elif e.name == "boxdim":
                counts = np.array([r["box_" + str(e.levels)] for r in rows])
                de = box_dim_from_counts(counts, range(e.levels[0], e.levels[1] + 1), cfg.b)
                est["boxdim"] = _estimate_dict(de)
            else:
                mass = np.array([r["mass"] for r in rows])
                est["mass"] = {"mean": float(mass.mean()), "stderr": float(mass.std(ddof=1) / math.sqrt(mass.size)),
                               "n_samples": int(mass.size)}
        return est, bands

    estimates, bands = _stage("estimation", estimate)
    tol = {e.name: (4 / math.sqrt(cfg.samples) if e.name == "mass" else e.tol) for e in cfg.estimators}
    check = {e.name: e.check for e in cfg.estimators if e.name != "mass"}
    record = _clean({
        "version": __version__,
        "config_hash": cfg.config_hash,
        "config": cfg.canonical(),
        "warnings": warn,
        "predictions": pred,
        "estimates": estimates,
        "tolerances": tol,
        "checks": check,
        "samples": [{k: r[k] for k in ("sample_id", "mass", "max_density", "zero_fraction")} for r in rows],
    })
    timing = {"sampling_seconds": t_sample, "total_seconds": time.perf_counter() - t0, "threads": threads}
    out_dir = out_dir if out_dir is not None else cfg.out_dir
    if out_dir is not None:
        _stage("persist", _persist, Path(out_dir), record, bands, timing)
    return record


def record_json(record: dict) -> str:
    return json.dumps(record, sort_keys=True, indent=2) + "\n"


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def samples_csv(record: dict) -> str:
    keys = ["sample_id", "mass", "max_density", "zero_fraction"]
    return _csv([[r[k] for k in keys] for r in record["samples"]], keys)


def bands_csv(bands) -> str:
    rows = zip(bands.bands.tolist(), bands.count.tolist(), bands.log_freq.tolist(), bands.logmean.tolist(),
               bands.mean.tolist(), bands.max.tolist())
    return _csv(rows, ["band", "count", "mean_log_freq", "mean_log_power", "mean_power", "max_power"])


def _persist(out: Path, record: dict, bands, timing: dict):
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=out.parent))
    try:
        (tmp / "record.json").write_text(record_json(record))
        (tmp / "samples.csv").write_text(samples_csv(record))
        if bands is not None:
            (tmp / "bands.csv").write_text(bands_csv(bands))
        (tmp / "timing.json").write_text(json.dumps(timing, indent=2) + "\n")
        if out.exists():
            shutil.rmtree(out)
        tmp.rename(out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


# --- comparison --------------------------------------------------------------

@dataclass(frozen=True)
class VerdictRow:
    estimator: str
    estimate: float | None
    prediction: float | None
    gap: float | None
    tolerance: float | None
    check: str
    status: str  # pass | fail | not run | no prediction


def _estimate_value(est: dict) -> float:
    return est["mean"] if "mean" in est else est["slope"]


def compare(record: dict) -> list[VerdictRow]:
    """Verdict per estimator; predicted-but-missing estimators are "not run"."""
    preds = {k: v for k, v in record.get("predictions", {}).items() if k in ESTIMATORS}
    ests = record.get("estimates", {})
    tols = record.get("tolerances", {})
    checks = record.get("checks", {})
    rows = []
    for name in ESTIMATORS:
        if name not in preds and name not in ests:
            continue
        check = checks.get(name, "two-sided")
        tol = tols.get(name, DEFAULT_TOL.get(name))
        pred = preds.get(name)
        if name not in ests:
            rows.append(VerdictRow(name, None, pred, None, tol, check, "not run"))
            continue
        val = _estimate_value(ests[name])
        if pred is None or val is None or tol is None:
            rows.append(VerdictRow(name, val, pred, None, tol, check, "no prediction"))
            continue
        gap = abs(val - pred)
        ok = val >= pred - tol if check == "lower" else gap <= tol
        rows.append(VerdictRow(name, val, pred, gap, tol, check, "pass" if ok else "fail"))
    return rows


def verdict_passed(rows) -> bool:
    return all(r.status != "fail" for r in rows)


def verdict_csv(rows) -> str:
    keys = ["estimator", "estimate", "prediction", "gap", "tolerance", "check", "status"]
    return _csv([[getattr(r, k) for k in keys] for r in rows], keys)


def verdict_text(rows) -> str:
    def fmt(x):
        return "-" if x is None else f"{x:.4f}"

    lines = [f"{'estimator':<10} {'estimate':>9} {'predict':>9} {'gap':>8} {'tol':>8}  status"]
    for r in rows:
        lines.append(f"{r.estimator:<10} {fmt(r.estimate):>9} {fmt(r.prediction):>9} {fmt(r.gap):>8} "
                     f"{fmt(r.tolerance):>8}  {r.status}")
    return "\n".join(lines)
