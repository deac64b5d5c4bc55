"""Command-line front end.

Commands::

    dynafactor fit       --input panel.csv --output-dir out/
    dynafactor simulate  --config spec.json --n-reps 200 --output-dir out/
    dynafactor forecast  --input panel.csv --horizons 1,2,3 --methods var,zero --dm var,zero
    dynafactor wn-test   --input panel.csv --method tsay

Settings come from, in increasing priority: built-in defaults, a JSON file
given by ``--config``, command-line flags. Exit codes: 0 success, 2 usage or
validation error, 3 numerical failure. ``DYNAFACTOR_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from ._errors import DynaFactorError, NumericalError, ValidationError
from .factor import FitConfig, fit
from .forecast import BUILTIN_METHODS, rolling_origin_evaluate
from .panel import TimeSeriesPanel, load_csv, save_csv
from .serialize import dumps
from .simulate import DgpSpec, run_replications
from .whitenoise import Method, white_noise_test

logger = logging.getLogger("dynafactor")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
DEFAULT_SEED = 0

# flag dest -> FitConfig field
_FIT_FLAGS = {
    "k0": "k0",
    "m": "m",
    "kbar": "kbar",
    "alpha": "alpha",
    "epsilon": "epsilon",
    "k_override": "k_override",
    "r_override": "r_override",
    "r_max": "r_max",
    "method": "method",
    "n_boot": "n_boot",
}
_CONFIG_KEYS = {"fit", "dgp", "forecast", "n_reps", "seed", "threads", "compare_lyb"}
_FORECAST_KEYS = {"horizons", "origins", "methods", "order", "freeze_r", "dm"}


@dataclass
class RunConfig:
    """Resolved settings of one invocation."""

    command: str
    input: Optional[str] = None
    output_dir: Optional[str] = None
    fit: FitConfig = field(default_factory=FitConfig)
    dgp: Optional[DgpSpec] = None
    forecast: dict = field(default_factory=dict)
    n_reps: Optional[int] = None
    seed: int = DEFAULT_SEED
    threads: int = 1
    compare_lyb: bool = False

    def __post_init__(self):
        if self.threads < 1:
            raise ValidationError(f"threads must be at least 1, got {self.threads}")


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _range(text):
    """``a:b`` (1-based, inclusive) or a comma list."""
    if ":" in text:
        a, _, b = text.partition(":")
        try:
            return list(range(int(a), int(b) + 1))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a:b, got {text!r}")
    return _int_list(text)


def _names(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_io(p, output=True):
    p.add_argument("--input", help="panel CSV (rows = time, columns = series)")
    p.add_argument("--no-header", action="store_true", help="the CSV has no header row")
    p.add_argument("--row-range", type=_range, help="1-based inclusive rows to use, a:b")
    if output:
        p.add_argument("--output-dir", help="directory for output files")


def _add_pipeline(p):
    g = p.add_argument_group("pipeline")
    g.add_argument("--k0", type=int, help="lags pooled in M (default 2)")
    g.add_argument("--m", type=int, help="lags in the white-noise test (default 10)")
    g.add_argument("--kbar", type=int, help="lags in the CYZ test (default 2)")
    g.add_argument("--alpha", type=float, help="test level (default 0.05)")
    g.add_argument("--epsilon", type=float, help="truncation fraction when p >= n (default 0.75)")
    g.add_argument("--k-override", type=int, help="fix the spike count K")
    g.add_argument("--r-override", type=int, help="fix the factor count r")
    g.add_argument("--r-max", type=int, help="cap of the top-down search")
    g.add_argument("--method", help="white-noise test: lb, tsay or cyz")
    g.add_argument("--n-boot", type=int, help="bootstrap draws of the CYZ test")


def _common(p):
    p.add_argument("--config", help="JSON settings file")
    p.add_argument("--seed", type=int, help=f"random seed (default {DEFAULT_SEED})")
    p.add_argument("--threads", type=int, help="worker threads (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynafactor",
        description="Factor modeling of high-dimensional time series.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="estimate the factor model on a panel")
    _add_io(p)
    _add_pipeline(p)
    _common(p)

    p = sub.add_parser("simulate", help="Monte Carlo replications of a simulated design")
    p.add_argument("--output-dir", help="directory for output files")
    p.add_argument("--n-reps", type=int, help="number of replications")
    p.add_argument("--compare-lyb", action="store_true", help="also report the ratio-rule baseline")
    _add_pipeline(p)
    _common(p)

    p = sub.add_parser("forecast", help="rolling-origin forecast evaluation")
    _add_io(p)
    p.add_argument("--horizons", type=_int_list, help="comma-separated horizons (default 1)")
    p.add_argument("--origins", type=_range, help="1-based origins, a:b or a list")
    p.add_argument("--methods", type=_names, help=f"comma-separated, from {', '.join(BUILTIN_METHODS)}")
    p.add_argument("--order", type=int, help="VAR/AR order on factors (default 1)")
    p.add_argument("--freeze-r", action="store_true", help="keep r from the first origin")
    p.add_argument("--dm", type=_names, help="two methods to compare, e.g. var,zero")
    _add_pipeline(p)
    _common(p)

    p = sub.add_parser("wn-test", help="white-noise test on a raw panel")
    _add_io(p)
    p.add_argument("--method", default=None, help="lb, tsay or cyz (default tsay)")
    p.add_argument("--m", type=int, help="lags (default 10; kbar for cyz defaults to 2)")
    p.add_argument("--alpha", type=float, help="test level (default 0.05)")
    p.add_argument("--n-boot", type=int, help="bootstrap draws of the CYZ test")
    _common(p)
    return parser


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _read_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}")
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: line {exc.lineno}, column {exc.colno}")
    if not isinstance(data, dict):
        raise ValidationError("config must be a JSON object")
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    unknown = set(data.get("forecast", {})) - _FORECAST_KEYS
    if unknown:
        raise ValidationError(f"unknown forecast keys: {sorted(unknown)}")
    return data


def resolve(args) -> RunConfig:
    """Merge defaults, the config file and flags into a :class:`RunConfig`."""
    data = _read_config(args.config) if getattr(args, "config", None) else {}
    fit_kw = dict(data.get("fit", {}))
    # wn-test flags describe the standalone test, not the pipeline
    flags = {} if args.command == "wn-test" else _FIT_FLAGS
    for dest, name in flags.items():
        val = getattr(args, dest, None)
        if val is not None:
            fit_kw[name] = val
    if "method" in fit_kw:
        fit_kw["method"] = str(fit_kw["method"]).lower()
    seed = args.seed if args.seed is not None else data.get("seed", DEFAULT_SEED)
    fit_kw.setdefault("seed", seed)
    fit_cfg = FitConfig.from_dict(fit_kw)
    threads = args.threads if args.threads is not None else data.get("threads", 1)

    dgp = None
    if args.command == "simulate":
        dgp_kw = dict(data.get("dgp", {}))
        if args.seed is not None or "seed" in data:
            dgp_kw["seed"] = seed
        dgp = DgpSpec.from_dict(dgp_kw)

    fc = dict(data.get("forecast", {}))
    if args.command == "forecast":
        for key in ("horizons", "origins", "methods", "order", "dm"):
            val = getattr(args, key, None)
            if val is not None:
                fc[key] = val
        if args.freeze_r:
            fc["freeze_r"] = True

    n_reps = getattr(args, "n_reps", None)
    if n_reps is None:
        n_reps = data.get("n_reps")
    return RunConfig(
        command=args.command,
        input=getattr(args, "input", None),
        output_dir=getattr(args, "output_dir", None),
        fit=fit_cfg,
        dgp=dgp,
        forecast=fc,
        n_reps=n_reps,
        seed=int(seed),
        threads=int(threads),
        compare_lyb=bool(getattr(args, "compare_lyb", False) or data.get("compare_lyb", False)),
    )


def _load_input(args) -> TimeSeriesPanel:
    if not args.input:
        raise ValidationError("--input is required")
    panel = load_csv(args.input, has_header=not args.no_header)
    if args.row_range:
        lo, hi = min(args.row_range), max(args.row_range)
        if lo < 1 or hi > panel.n:
            raise ValidationError(f"--row-range {lo}:{hi} outside 1..{panel.n}")
        panel = panel.rows(lo - 1, hi)
    return panel


def _out_dir(cfg: RunConfig) -> Optional[Path]:
    if cfg.output_dir is None:
        return None
    path = Path(cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write(path: Path, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _pval(p):
    return "n/a" if p is None else f"{p:.4f}"


def _fit_summary(est) -> str:
    lines = [
        f"n = {est.n}, p = {est.p}, route = {est.route}",
        f"r_hat = {est.r_hat}" + (" (search cap reached)" if est.r_capped else ""),
        f"K_hat = {est.k_hat}" + ("" if est.k_upper is None else f" (upper bound {est.k_upper})"),
        "top M eigenvalues: " + ", ".join(f"{v:.4g}" for v in est.m_eigenvalues[:10]),
        "white-noise tests:",
    ]
    for i, res in est.tests:
        verdict = "reject" if res.reject else "accept"
        lines.append(
            f"  {i:>4d}  {res.method.value:<12s} stat={res.statistic:.4f} "
            f"crit={res.critical_value:.4f} p={_pval(res.p_value)}  {verdict}"
        )
    return "\n".join(lines) + "\n"


def cmd_fit(args) -> int:
    cfg = resolve(args)
    panel = _load_input(args)
    est = fit(panel, cfg.fit)
    summary = _fit_summary(est)
    out = _out_dir(cfg)
    if out is not None:
        _write(out / "fit.json", dumps(est.to_dict()))
        names = tuple(f"x{j + 1}" for j in range(est.r_hat))
        if est.r_hat:
            save_csv(TimeSeriesPanel(est.factors, names), out / "factors.csv")
        else:
            _write(out / "factors.csv", "")
        _write(out / "summary.txt", summary)
    sys.stdout.write(summary)
    return EXIT_OK


def _hist_line(label, counts):
    return f"{label:<6s}" + " ".join(f"{k}:{v}" for k, v in counts.items())


def cmd_simulate(args) -> int:
    cfg = resolve(args)
    if cfg.n_reps is None:
        raise ValidationError("--n-reps (or n_reps in the config) is required")
    if cfg.n_reps < 1:
        raise ValidationError(f"n_reps must be at least 1, got {cfg.n_reps}")
    rep = run_replications(cfg.dgp, cfg.n_reps, cfg.fit, threads=cfg.threads)
    spec = cfg.dgp
    head = f"{spec.example} p={spec.p} n={spec.n} r={spec.r}"
    if spec.example == "Ex2":
        head += f" K={spec.k_spike} delta=({spec.delta1:g},{spec.delta2:g})"
    lines = [
        head,
        f"P(r_hat={spec.r}) = {rep.prob_correct_r:.3f} over {rep.n_reps} replications"
        f" ({len(rep.failures)} failed)",
        _hist_line("fit", rep.r_hat_counts),
    ]
    if len(rep.failures) < rep.n_reps:
        lines.append(f"mean rmse ({rep.rmse_kind}) = {rep.mean_rmse():.4f}")
    if cfg.compare_lyb and len(rep.failures) < rep.n_reps:
        lines.append(_hist_line("LYB", rep.lyb_r_hat_counts))
        lines.append(f"mean LYB rmse ({rep.rmse_kind}) = {rep.mean_lyb_rmse():.4f}")
    summary = "\n".join(line for line in lines if line) + "\n"
    out = _out_dir(cfg)
    if out is not None:
        _write(out / "replication.json", dumps(rep.to_dict()))
        rep.write_csv(out / "replications.csv")
        _write(out / "summary.txt", summary)
    sys.stdout.write(summary)
    return EXIT_OK


def cmd_forecast(args) -> int:
    cfg = resolve(args)
    fc = cfg.forecast
    methods = fc.get("methods", ["var"])
    dm = fc.get("dm")
    pairs = []
    if dm is not None:
        if len(dm) != 2:
            raise ValidationError(f"--dm needs exactly two methods, got {dm}")
        if len(methods) < 2:
            raise ValidationError("--dm needs at least two evaluated methods")
        pairs = [tuple(dm)]
    panel = _load_input(args)
    report = rolling_origin_evaluate(
        panel,
        cfg.fit,
        origins=fc.get("origins"),
        horizons=fc.get("horizons", [1]),
        methods=methods,
        order=fc.get("order", 1),
        freeze_r=fc.get("freeze_r", False),
        dm_pairs=pairs,
        threads=cfg.threads,
    )
    hs = report.horizons
    lines = [f"{len(report.origins)} origins, {len(report.failures)} failed", "FE_h"]
    lines.append(f"{'method':<10s}" + "".join(f"{'h=' + str(h):>12s}" for h in hs))
    for m in report.methods:
        lines.append(f"{m:<10s}" + "".join(f"{v:>12.4f}" for v in report.fe_by_horizon[m]))
    for d in report.dm_results:
        stat = "undefined" if d["statistic"] is None else f"{d['statistic']:.4f}"
        lines.append(f"DM {d['pair'][0]} vs {d['pair'][1]} h={d['horizon']}: "
                     f"stat={stat} p={d['p_value']:.4f} lrv={d['long_run_variance']:.4g}")
    summary = "\n".join(lines) + "\n"
    out = _out_dir(cfg)
    if out is not None:
        _write(out / "forecast.json", dumps(report.to_dict()))
        report.write_csv(out / "forecast.csv")
        _write(out / "summary.txt", summary)
    sys.stdout.write(summary)
    return EXIT_OK


def cmd_wn_test(args) -> int:
    cfg = resolve(args)
    method = Method.parse(args.method or "tsay")
    panel = _load_input(args)
    m = args.m if args.m is not None else (2 if method is Method.CHANG_YAO_ZHOU else 10)
    alpha = args.alpha if args.alpha is not None else 0.05
    n_boot = args.n_boot if args.n_boot is not None else 500
    if method is Method.LJUNG_BOX:
        # one test per series
        cols = [(name, panel.values[:, [j]]) for j, name in enumerate(panel.column_names)]
    else:
        cols = [(None, panel.values)]
    results = []
    lines = []
    for name, w in cols:
        res = white_noise_test(w, method, m, alpha, n_boot=n_boot, seed=cfg.seed)
        results.append({"series": name, **res.to_dict()})
        verdict = "reject" if res.reject else "fail to reject"
        label = f"{name}: " if name is not None else ""
        lines.append(f"{label}{res.method.value} statistic={res.statistic:.4f} "
                     f"critical={res.critical_value:.4f} p={_pval(res.p_value)} -> {verdict}")
    summary = "\n".join(lines) + "\n"
    out = _out_dir(cfg)
    if out is not None:
        doc = {"format": "dynafactor.wntest", "version": 1, "n": panel.n, "p": panel.p,
               "results": results}
        _write(out / "wntest.json", dumps(doc))
        _write(out / "summary.txt", summary)
    sys.stdout.write(summary)
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "forecast": cmd_forecast,
    "wn-test": cmd_wn_test,
}


def _configure_logging():
    level = os.environ.get("DYNAFACTOR_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        logger.addHandler(handler)
    logger.setLevel(level)


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, DynaFactorError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
