"""Command-line front end: run experiments from JSON configs, plot rate fits, check samplers.

    fpp run <config.json> [--out DIR] [--threads N]
    fpp plot <results.csv> <out.svg>
    fpp dist-check <model.json> --samples N --seed S

Exit codes: 0 success, 1 runtime failure, 2 bad configuration or input file.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from scipy import integrate, stats

from . import distributions as dist
from . import estimators as est

CSV_VERSION = "fpp-results v1"
COLUMNS = ("experiment", "model", "d", "r", "alpha", "xi", "n", "estimator",
           "p_hat", "stderr", "log_p", "bound", "seed", "walltime_ms")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Records


@dataclass
class ResultRow:
    experiment: str
    model: str
    d: int
    r: float
    alpha: float
    xi: float
    n: float
    estimator: str
    p_hat: float
    stderr: float
    log_p: float
    bound: float
    seed: int
    walltime_ms: float

    def cells(self) -> list:
        return [_fmt(getattr(self, f.name)) for f in fields(self)]

    @classmethod
    def parse(cls, rec: dict) -> "ResultRow":
        try:
            return cls(
                experiment=rec["experiment"], model=rec["model"], d=int(rec["d"]),
                r=float(rec["r"]), alpha=float(rec["alpha"]), xi=float(rec["xi"]), n=float(rec["n"]),
                estimator=rec["estimator"], p_hat=float(rec["p_hat"]), stderr=float(rec["stderr"]),
                log_p=float(rec["log_p"]), bound=float(rec["bound"]), seed=int(rec["seed"]),
                walltime_ms=float(rec["walltime_ms"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"row does not match the result schema: {exc}") from exc


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(float(x))
    return str(x)


def model_label(model) -> str:
    spec = dist.model_to_spec(model)
    kind = spec.pop("kind")
    return kind + "(" + ",".join(f"{k}={v!r}" for k, v in spec.items()) + ")"


def write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {CSV_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in rows:
            w.writerow(row.cells())


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != f"# {CSV_VERSION}":
        raise ConfigError(f"{path}: missing '# {CSV_VERSION}' header")
    reader = csv.DictReader(lines[1:])
    if tuple(reader.fieldnames or ()) != COLUMNS:
        raise ConfigError(f"{path}: unexpected columns {reader.fieldnames}")
    return [ResultRow.parse(rec) for rec in reader]


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


# ---------------------------------------------------------------------------
# Configuration


def load_schema() -> dict:
    return json.loads(resources.files("fpp").joinpath("config.schema.json").read_text())


def load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from exc
    try:
        cfg["_model"] = dist.model_from_spec(cfg["model"])
    except dist.ModelError as exc:
        raise ConfigError(f"invalid model: {exc}") from exc
    exp = cfg["experiment"]
    if exp == "anomalous-scan" and not isinstance(cfg["_model"], dist.AnomalousModel):
        raise ConfigError("anomalous-scan needs an anomalous model")
    if exp in ("upper-tail", "slab") and cfg.get("estimator", {}).get("kind") == "tilted" \
            and not dist.is_continuous(cfg["_model"]):
        raise ConfigError("the tilted estimator needs a continuous model")
    if "n_list" in cfg and cfg["n_list"] != sorted(set(cfg["n_list"])):
        raise ConfigError("n_list must be strictly ascending")
    cfg.setdefault("name", Path(path).stem)
    return cfg


# ---------------------------------------------------------------------------
# Experiments


def _base_row(cfg, model, **kw) -> dict:
    base = dict(
        experiment=cfg["experiment"], model=model_label(model), d=int(cfg.get("d", 0)),
        r=float(dist.tail_exponent(model)), alpha=float(dist.tail_rate(model)), xi=float(cfg.get("xi", 0.0)),
        estimator="", p_hat=math.nan, stderr=math.nan, log_p=math.nan, bound=math.nan,
        seed=int(cfg["seed"]), walltime_ms=0.0,
    )
    base.update(kw)
    return base


def _resolve_mu(cfg, model, threads):
    mu = cfg["mu"]
    if "value" in mu:
        return float(mu["value"]), float(mu.get("stderr", 0.0)), None
    e = est.estimate_time_constant(model, cfg["d"], mu["n_list"], mu["replicas"],
                                   mu.get("seed", cfg["seed"]), threads)
    return e.mu_hat, e.stderr, e


def _tail_row(cfg, model, n, e: est.TailEstimate, ms, bound=math.nan, **kw):
    return ResultRow(**_base_row(cfg, model, n=float(n), estimator=e.estimator_kind, p_hat=e.p_hat,
                                 stderr=e.stderr, log_p=e.log_p, bound=bound, walltime_ms=ms, **kw))


def run_time_constant(cfg, model, threads):
    t0 = time.perf_counter()
    e = est.estimate_time_constant(model, cfg["d"], cfg["n_list"], cfg["replicas"], cfg["seed"], threads)
    ms = (time.perf_counter() - t0) * 1e3
    rows = [
        ResultRow(**_base_row(cfg, model, n=float(n), estimator="mean", p_hat=m, stderr=s,
                              log_p=math.log(m) if m > 0 else -math.inf, walltime_ms=ms))
        for n, m, s in e.normalized()
    ]
    summary = dict(mu_hat=e.mu_hat, stderr=e.stderr, n_used=e.n_used, replicas=e.replicas,
                   per_n_means=e.per_n_means, subadditivity_violations=est.subadditive_violations(e))
    return rows, summary


def run_upper_tail(cfg, model, threads):
    opts = cfg.get("estimator", {})
    kind = opts.get("kind", "tilted")
    mu_hat, mu_se, _ = _resolve_mu(cfg, model, threads)
    t0 = time.perf_counter()
    res = est.upper_tail_experiment(
        model, cfg["d"], cfg["xi"], cfg["n_list"], cfg["replicas"], mu_hat, mu_se, cfg["seed"], kind,
        opts.get("shift_factor", 1.0), opts.get("mixture_weight", 0.5), threads,
    )
    ms = (time.perf_counter() - t0) * 1e3 / len(cfg["n_list"])
    rows = [_tail_row(cfg, model, n, e, ms) for n, e in res.estimates.items()]
    target = est.theoretical_rate(model, cfg["d"], cfg["xi"])
    summary = dict(
        mu_hat=mu_hat, mu_stderr=mu_se, r=res.fit.r, slope=res.fit.slope, intercept=res.fit.intercept,
        slope_stderr=res.fit.slope_stderr, target=res.target, relative_error=res.relative_error,
        slope_at_mu_minus_2se=res.slope_low, slope_at_mu_plus_2se=res.slope_high,
        regressor="b(n) n^r" if isinstance(model, dist.LogPerturbedModel) else "n^r",
    )
    if isinstance(target, tuple):
        summary["targets_alpha1_alpha2"] = list(target)
    return rows, summary


def run_slab(cfg, model, threads):
    opts = cfg.get("estimator", {})
    kind = opts.get("kind", "naive")
    mu_hat, mu_se, _ = _resolve_mu(cfg, model, threads)
    rows, pts = [], []
    for n in cfg["n_list"]:
        t0 = time.perf_counter()
        shift = opts["shift_factor"] * cfg["epsilon"] * n if kind == "tilted" and "shift_factor" in opts else None
        e = est.slab_tail(model, cfg["d"], cfg["K"], n, cfg["epsilon"], mu_hat, cfg["replicas"], cfg["seed"],
                          kind, shift, opts.get("mixture_weight", 0.5), threads)
        rows.append(_tail_row(cfg, model, n, e, (time.perf_counter() - t0) * 1e3, xi=float(cfg["epsilon"])))
        pts.append((n, e.log_p))
    logs = [lp for _, lp in pts]
    summary = dict(mu_hat=mu_hat, mu_stderr=mu_se, K=cfg["K"], epsilon=cfg["epsilon"], points=pts,
                   strictly_decreasing=all(b < a for a, b in zip(logs, logs[1:])))
    try:
        fit = est.fit_rate(pts, dist.tail_exponent(model), model)
        summary.update(slope=fit.slope, intercept=fit.intercept, slope_stderr=fit.slope_stderr)
    except ValueError as exc:
        summary["fit_error"] = str(exc)
    return rows, summary


def run_sum_tail(cfg, model, threads):
    c = cfg.get("c", 0.1)
    window = tuple(cfg.get("window", (0.0, math.inf)))
    t0 = time.perf_counter()
    out = est.sum_tail_check(model, cfg["k"], cfg["n_list"], cfg["replicas"], cfg["seed"], c, window)
    ms = (time.perf_counter() - t0) * 1e3 / len(out)
    rows = [
        ResultRow(**_base_row(cfg, model, n=float(o.n), estimator="sum", p_hat=o.p_hat, stderr=o.stderr,
                              log_p=math.log(o.p_hat) if o.p_hat > 0 else -math.inf, bound=o.bound,
                              walltime_ms=ms))
        for o in out
    ]
    summary = dict(k=cfg["k"], c=c, replicas=cfg["replicas"],
                   rows=[dict(n=o.n, p_hat=o.p_hat, stderr=o.stderr, bound=o.bound) for o in out],
                   bound_holds=all(o.p_hat <= o.bound for o in out))
    return rows, summary


def run_anomalous_scan(cfg, model, threads):
    opts = cfg.get("estimator", {})
    checks, rows = [], []
    mu_hat = mu_se = None
    if cfg["replicas"] > 0:
        if "mu" not in cfg:
            raise ConfigError("anomalous-scan with replicas > 0 needs 'mu'")
        mu_hat, mu_se, _ = _resolve_mu(cfg, model, threads)
    alpha_pair = est.theoretical_rate(model, cfg["d"], cfg["xi"])
    for m in cfg["scales"]:
        chk = est.interval_map(model, cfg["xi"], m)
        rec = dict(scale_index=m, n=chk.n, t=chk.t, interval=list(chk.interval), regime_rate=chk.regime_rate,
                   predicted_rate=chk.predicted_rate, hazard=chk.hazard, agrees=chk.agrees)
        if cfg["replicas"] > 0:
            t0 = time.perf_counter()
            q = est.TailQuery(model, cfg["d"], cfg["xi"], chk.n, mu_hat)
            e = est.tilted_tail(q, opts.get("shift_factor", 1.0) * cfg["xi"] * chk.n,
                                opts.get("mixture_weight", 0.5), cfg["replicas"], cfg["seed"], threads)
            rows.append(_tail_row(cfg, model, chk.n, e, (time.perf_counter() - t0) * 1e3))
            rec.update(log_p=e.log_p, log_p_over_n=e.log_p / chk.n)
        checks.append(rec)
    summary = dict(xi=cfg["xi"], targets_alpha1_alpha2=list(alpha_pair), mu_hat=mu_hat, mu_stderr=mu_se,
                   scales=checks)
    return rows, summary


def distribution_report(model, samples: int, seed: int) -> dict:
    """KS distance of the sampler, density quadrature, and anomalous regime diagnostics."""
    if isinstance(model, dist.DegenerateModel):
        return dict(model=model_label(model), samples=samples, seed=seed, ks_statistic=0.0,
                    quadrature=1.0, exact=True)
    x = est.draw_samples(model, samples, seed)
    ks = stats.kstest(x, np.vectorize(lambda t: dist.cdf(model, t), otypes=[float]))
    report = dict(model=model_label(model), samples=samples, seed=seed,
                  ks_statistic=float(ks.statistic), ks_pvalue=float(ks.pvalue),
                  quadrature=density_quadrature(model))
    if isinstance(model, dist.AnomalousModel):
        report["interval_log_slopes"] = interval_log_slopes(model)
        c4, c5 = model.sandwich_constants()
        report.update(c3=model.c3, c4=c4, c5=c5, sandwich_holds=sandwich_holds(model))
    return report


def density_quadrature(model) -> float:
    """Integral of the density over [0, inf), split at kinks and singularities."""
    f = lambda t: dist.density(model, t)  # noqa: E731
    opts = dict(epsabs=1e-14, epsrel=1e-13, limit=500)
    if isinstance(model, dist.AnomalousModel):
        v = model.tower.values
        parts = []
        for k in range(len(v) - 1):
            a, b = v[k], v[k + 1]
            # mass sits near the left end; integrate that part finely
            mid = min(b, a + 60.0 / model.interval_rate(k))
            parts.append(integrate.quad(f, a, mid, **opts)[0])
            if mid < b:
                parts.append(integrate.quad(f, mid, b, **opts)[0])
        parts.append(integrate.quad(f, v[-1], math.inf, **opts)[0])
        return math.fsum(parts)
    return math.fsum([integrate.quad(f, 0, 1, **opts)[0], integrate.quad(f, 1, math.inf, **opts)[0]])


def interval_log_slopes(model: dist.AnomalousModel) -> list:
    """-d/dx log f on each tower interval, by a two-point difference inside it."""
    v = model.tower.values
    out = []
    for k in range(len(v) - 1):
        a, b = v[k], v[k + 1]
        width = min(b - a, 4)
        x1, x2 = a + 0.25 * width, a + 0.75 * width
        slope = (dist.log_density(model, x1) - dist.log_density(model, x2)) / (x2 - x1)
        out.append(dict(interval=[a, b], log_slope=slope, rate=model.interval_rate(k)))
    return out


def sandwich_holds(model: dist.AnomalousModel, lo: float = 1.0, hi: float = 100.0, points: int = 991) -> bool:
    c4, c5 = model.sandwich_constants()
    for t in np.linspace(lo, hi, points):
        s = dist.survival(model, float(t))
        if not c4 * math.exp(-model.alpha2 * t) <= s <= c5 * math.exp(-model.alpha1 * t):
            return False
    return True


def run_dist_check(cfg, model, threads):
    t0 = time.perf_counter()
    report = distribution_report(model, cfg["samples"], cfg["seed"])
    ms = (time.perf_counter() - t0) * 1e3
    rows = [ResultRow(**_base_row(cfg, model, n=float(cfg["samples"]), estimator="ks",
                                  p_hat=report["ks_statistic"], walltime_ms=ms))]
    return rows, report


EXPERIMENTS = {
    "time-constant": run_time_constant,
    "upper-tail": run_upper_tail,
    "slab": run_slab,
    "sum-tail": run_sum_tail,
    "anomalous-scan": run_anomalous_scan,
    "dist-check": run_dist_check,
}


def run(config_path, out_dir="results", threads: int = 1) -> int:
    """Validate, execute and persist one experiment; returns the exit code."""
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    model = cfg["_model"]
    try:
        rows, summary = EXPERIMENTS[cfg["experiment"]](cfg, model, threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = cfg.get("outputs", {})
    csv_path = out / names.get("csv", f"{cfg['name']}.csv")
    write_csv(csv_path, rows)
    summary = {**summary, "experiment": cfg["experiment"], "model": dist.model_to_spec(model),
               "seed": cfg["seed"], "threads": threads, "results_csv": csv_path.name}
    (out / names.get("summary", f"{cfg['name']}.summary.json")).write_text(
        json.dumps(_json_safe(summary), indent=2) + "\n")
    if cfg["experiment"] in ("upper-tail", "slab") and "plot" in names:
        emit_plot(csv_path, out / names["plot"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# Plot


_SVG_W, _SVG_H, _PAD = 640, 420, 60


def emit_plot(results_csv, out_svg) -> Path:
    """SVG of log p_hat against n**r with the least-squares line and the theoretical slope."""
    rows = read_csv(results_csv)
    pts = [(row.n ** row.r, row.log_p) for row in rows if math.isfinite(row.log_p)]
    if len(pts) < 2:
        raise ConfigError("need at least two rows with finite log_p to plot")
    first = rows[0]
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    slope, intercept = np.polyfit(x, y, 1)
    theory = -2 * first.d * first.alpha * first.xi ** first.r
    # anchor the theoretical line at the data centroid so the slopes compare directly
    t_int = y.mean() - theory * x.mean()
    x0, x1 = float(x.min()), float(x.max())
    lines_y = [intercept + slope * x0, intercept + slope * x1, t_int + theory * x0, t_int + theory * x1]
    y0, y1 = min(y.min(), *lines_y), max(y.max(), *lines_y)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1

    def sx(v):
        return _PAD + (v - x0) / (x1 - x0) * (_SVG_W - 2 * _PAD)

    def sy(v):
        return _SVG_H - _PAD - (v - y0) / (y1 - y0) * (_SVG_H - 2 * _PAD)

    def seg(a, b, color, dash=""):
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        return (f'<line x1="{sx(x0):.2f}" y1="{sy(a):.2f}" x2="{sx(x1):.2f}" y2="{sy(b):.2f}" '
                f'stroke="{color}" stroke-width="2"{extra}/>')

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        f'viewBox="0 0 {_SVG_W} {_SVG_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
        f'<text x="{_SVG_W / 2}" y="24" text-anchor="middle" font-size="14">'
        f'{first.experiment}: {first.model}, d={first.d}, xi={first.xi:g}</text>',
        f'<line x1="{_PAD}" y1="{_SVG_H - _PAD}" x2="{_SVG_W - _PAD}" y2="{_SVG_H - _PAD}" stroke="black"/>',
        f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_SVG_H - _PAD}" stroke="black"/>',
        f'<text x="{_SVG_W / 2}" y="{_SVG_H - 20}" text-anchor="middle">n^r (r={first.r:g})</text>',
        f'<text x="18" y="{_SVG_H / 2}" text-anchor="middle" transform="rotate(-90 18 {_SVG_H / 2})">'
        f'log p_hat</text>',
        f'<text x="{_PAD}" y="{_SVG_H - _PAD + 16}" text-anchor="middle">{x0:.4g}</text>',
        f'<text x="{_SVG_W - _PAD}" y="{_SVG_H - _PAD + 16}" text-anchor="middle">{x1:.4g}</text>',
        f'<text x="{_PAD - 6}" y="{_SVG_H - _PAD}" text-anchor="end">{y0:.4g}</text>',
        f'<text x="{_PAD - 6}" y="{_PAD + 4}" text-anchor="end">{y1:.4g}</text>',
        seg(lines_y[0], lines_y[1], "#1f77b4"),
        seg(lines_y[2], lines_y[3], "#d62728", "6 4"),
    ]
    parts += [f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="4" fill="#1f77b4"/>' for a, b in pts]
    lx = _SVG_W - _PAD - 220
    parts += [
        f'<line x1="{lx}" y1="{_PAD}" x2="{lx + 30}" y2="{_PAD}" stroke="#1f77b4" stroke-width="2"/>',
        f'<text x="{lx + 36}" y="{_PAD + 4}">fitted slope {slope:.4g}</text>',
        f'<line x1="{lx}" y1="{_PAD + 18}" x2="{lx + 30}" y2="{_PAD + 18}" stroke="#d62728" '
        f'stroke-width="2" stroke-dasharray="6 4"/>',
        f'<text x="{lx + 36}" y="{_PAD + 22}">theoretical slope {theory:.4g}</text>',
        "</svg>",
    ]
    out = Path(out_svg)
    out.write_text("\n".join(parts) + "\n")
    return out


# ---------------------------------------------------------------------------
# Entry point


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("FPP_THREADS", "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fpp", description="First-passage percolation experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out", default="results")
    r.add_argument("--threads", type=int, default=_default_threads())
    pl = sub.add_parser("plot", help="plot log p_hat against n^r from a results CSV")
    pl.add_argument("results")
    pl.add_argument("out_svg")
    dc = sub.add_parser("dist-check", help="validate a weight law's sampler and density")
    dc.add_argument("model")
    dc.add_argument("--samples", type=int, default=1_000_000)
    dc.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return run(args.config, args.out, args.threads)
    if args.command == "plot":
        try:
            emit_plot(args.results, args.out_svg)
        except (ConfigError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    try:
        model = dist.model_from_spec(json.loads(Path(args.model).read_text()))
    except (OSError, json.JSONDecodeError, dist.ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(_json_safe(distribution_report(model, args.samples, args.seed)), indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
