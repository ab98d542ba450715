"""Command-line front end.

Every run writes its outputs plus ``manifest.json`` into ``--out``;
``cavity-uq replay MANIFEST`` reruns it and checks the outputs byte for byte.
Exit codes: 0 success, 2 input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import __version__, plotting
from .calibration import CalibrationTargets, calibrate, calibration_report
from .chain import (
    N_CELLS, Y_COLUMNS, ChainConfig, ChainSurrogates, common_iris_view, direct_cavity_outputs,
    direct_cell_outputs, expand_common_iris, run_chain,
)
from .eigenmodel import ModelConfig
from .errors import CavityUQError, InputError, MissingSurrogateError, NumericalError
from .gsa import saltelli_sobol, sensitivity_report
from .inverse import (
    analyze_measurements, kcc_curve, mode_summary, read_measurements, write_estimates,
    write_mode_summary, write_vendor_stats,
)
from .io import (
    MODE_STATS_CSV, SUMMARY_JSON, RunManifest, fmt, read_rows, sha256_file,
    write_chain_result, write_json, write_rows,
)
from .sampling import EmpiricalLaw, SeedSpec
from .surrogate import SurrogateModel, build_adaptive, cross_validate

log = logging.getLogger("cavity_uq")

# Stream ids, one per independent use of the master seed.
STREAM_CHAIN = 0
STREAM_CV = 1
STREAM_SOBOL = 2
STREAM_SAMPLE = 3

CELL_BOX = [[-0.3, 0.3]] * 3 + [[-5.0, 5.0]]
DEV_BOX = [-0.3, 0.3]
SURROGATE_DEFAULTS = {"cell": 50, "cavity": 500, "ten": 200}
TEN_NAMES = [f"dreq{i}" for i in range(1, N_CELLS + 1)] + ["drir"]
KCC_OUT = N_CELLS

# Arguments that never change numerical output and are not replayed.
NOT_REPLAYED = {"out", "threads", "verbose", "manifest"}


# -- helpers ----------------------------------------------------------------------

def load_config(path) -> ModelConfig:
    if path is None:
        return ModelConfig().validate()
    try:
        return ModelConfig.from_json(Path(path)).validate()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None


def load_surrogate(path, what) -> SurrogateModel:
    if path is None:
        raise MissingSurrogateError(f"{what} surrogate file required (--{what}-surrogate)")
    try:
        return SurrogateModel.from_json(path)
    except OSError as exc:
        raise MissingSurrogateError(f"cannot read {what} surrogate {path}: {exc}") from None


REPORT_SOURCES = ("mode_summary.csv", SUMMARY_JSON, MODE_STATS_CSV,
                  "sensitivity_nineteen.csv", "sensitivity_ten.csv")


def input_digest(path) -> str:
    """sha256 of a file; for a result directory, of the files report reads."""
    path = Path(path)
    if not path.is_dir():
        return sha256_file(path)
    h = hashlib.sha256()
    for name in REPORT_SOURCES:
        if (path / name).exists():
            h.update(f"{name}:{sha256_file(path / name)}\n".encode())
    return h.hexdigest()


def input_paths(args):
    keys = ("config", "targets", "surrogate", "cell_surrogate", "cavity_surrogate", "measurements")
    out = {k: getattr(args, k) for k in keys if getattr(args, k, None)}
    out.update({f"from[{i}]": p for i, p in enumerate(getattr(args, "results", None) or [])})
    return out


def seed_of(args, stream):
    return SeedSpec(args.seed, stream)


def cavity_map(cfg):
    names = [f"f{m}_Hz" for m in range(N_CELLS)] + ["k_cc"]
    return (lambda y: direct_cavity_outputs(y, cfg)), names


def sorted_sample(cfg, n, seed, threads, iris_mode="independent"):
    """Direct chain run of ``n`` cavities; its accepted 19-vectors are the sorted sample."""
    return run_chain(ChainConfig(n_cavities=n, model=cfg, iris_mode=iris_mode), seed, threads=threads)


# -- commands ---------------------------------------------------------------------

def cmd_calibrate(args):
    base = load_config(args.config)
    if args.targets:
        try:
            data = json.loads(Path(args.targets).read_text())
            targets = CalibrationTargets(**data)
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise InputError(f"bad targets file: {exc}") from None
    else:
        targets = CalibrationTargets(args.k_cc_nominal, args.k_cc_slope, args.acceptance_rate)
    seed = SeedSpec(args.seed, 0)
    cfg = calibrate(targets, base, n_pilot=args.n, seed=seed, threads=args.threads)
    rep = calibration_report(cfg, n_pilot=args.n, seed=seed.substream(STREAM_CV), threads=args.threads)
    cfg.to_json(Path(args.out) / "model_config.json")
    write_json(Path(args.out) / "calibration.json", {"targets": asdict(targets), "achieved": asdict(rep)})
    print(f"k_cc_nominal\t{rep.k_cc_nominal:.6f}")
    print(f"k_cc_slope_per_mm\t{rep.k_cc_slope:.6f}")
    print(f"acceptance_rate\t{rep.acceptance_rate:.4f}")
    return ["model_config.json", "calibration.json"], {"n_pilot_cavities": args.n}


def cmd_simulate(args):
    cfg = load_config(args.config)
    chain_cfg = ChainConfig(n_cavities=args.n, length_bound=args.length_bound, model=cfg,
                            eval_mode=args.eval_mode, iris_mode=args.iris_mode)
    surrogates = None
    if args.eval_mode == "surrogate":
        surrogates = ChainSurrogates(cell=load_surrogate(args.cell_surrogate, "cell"),
                                     cavity=load_surrogate(args.cavity_surrogate, "cavity"))
    if args.n == 0:
        log.warning("n = 0: writing empty outputs")
    res = run_chain(chain_cfg, seed_of(args, STREAM_CHAIN), surrogates, threads=args.threads)
    files = write_chain_result(args.out, res)
    mean, std = res.moments["k_cc"]
    print(f"accepted\t{res.n_accepted}/{res.n_cavities}")
    print(f"k_cc_mean\t{mean!r}")
    print(f"k_cc_std\t{std!r}")
    return files, {"n_cavities": args.n}


def _surrogate_target(args, cfg):
    """(model, box, names, weights, cv sampler) for the requested surrogate."""
    if args.dims == "cell":
        return ((lambda x: direct_cell_outputs(x, cfg)), CELL_BOX, ["f_cell_Hz"], [1.0], None)
    f, names = cavity_map(cfg)
    weights = [1.0] * N_CELLS + [0.0]
    if args.dims == "cavity":
        def sampler(n, seed):
            res = sorted_sample(cfg, 2 * n, seed, args.threads)
            if res.n_accepted < n:
                raise NumericalError("too few accepted cavities for cross-validation")
            return res.accepted_sample[:n]
        return f, [DEV_BOX] * 19, names, weights, sampler

    def f10(x):
        return f(expand_common_iris(x))

    def sampler10(n, seed):
        res = sorted_sample(cfg, 2 * n, seed, args.threads, iris_mode="common")
        if res.n_accepted < n:
            raise NumericalError("too few accepted cavities for cross-validation")
        return common_iris_view(res.accepted_sample[:n])
    return f10, [DEV_BOX] * 10, names, weights, sampler10


def cmd_surrogate(args):
    cfg = load_config(args.config)
    budget = args.budget if args.budget is not None else SURROGATE_DEFAULTS[args.dims]
    f, box, names, weights, sampler = _surrogate_target(args, cfg)
    if args.weights:
        try:
            weights = [float(w) for w in args.weights.split(",")]
        except ValueError:
            raise InputError("--weights must be a comma-separated list of numbers") from None
    model = build_adaptive(f, box, budget, weights=weights, output_names=names)
    cv = cross_validate(model, f, args.n_cv, seed_of(args, STREAM_CV), sampler=sampler)
    model_file, cv_file = f"surrogate_{args.dims}.json", f"cv_{args.dims}.csv"
    model.to_json(Path(args.out) / model_file)
    write_rows(Path(args.out) / cv_file, ["output", "cv_error", "n_cv"],
               ([name, fmt(err), cv.n_cv] for name, err in cv.as_rows()))
    for name, err in cv.as_rows():
        print(f"{name}\t{err!r}")
    return [model_file, cv_file], {"n_evals": model.n_evals + cv.n_cv}


def cmd_gsa(args):
    cfg = load_config(args.config)
    ten = args.study == "ten"
    iris_mode = "common" if ten else "independent"
    res = sorted_sample(cfg, args.n_sample, seed_of(args, STREAM_SAMPLE), args.threads, iris_mode)
    y, kcc = res.accepted_sample, res.k_cc
    names = TEN_NAMES if ten else list(Y_COLUMNS)
    if ten:
        y = common_iris_view(y)
    if args.surrogate:
        model = load_surrogate(args.surrogate, "study")
        if model.dims != len(names):
            raise InputError(f"surrogate has {model.dims} inputs, study {args.study} needs {len(names)}")
    else:
        f, _ = cavity_map(cfg)
        fn = (lambda x: f(expand_common_iris(x))) if ten else f
        budget = args.budget if args.budget is not None else SURROGATE_DEFAULTS["ten" if ten else "cavity"]
        model = build_adaptive(fn, [DEV_BOX] * len(names), budget, weights=[1.0] * N_CELLS + [0.0])
    dists = [EmpiricalLaw(y[:, i]) for i in range(len(names))]
    sobol = saltelli_sobol(lambda x: model.evaluate(x)[:, KCC_OUT], dists, args.n,
                           seed_of(args, STREAM_SOBOL), correlated=True)
    report = sensitivity_report(names, sobol, y, kcc, n_bins=args.bins)
    main = f"sensitivity_{args.study}.csv"
    diag = f"sensitivity_{args.study}_diagnostics.csv"
    report.write_csv(Path(args.out) / main)
    write_rows(
        Path(args.out) / diag,
        ["parameter", "S_raw", "S_se", "S_T_raw", "S_T_se", "delta_kde_raw", "delta_kde_unweighted",
         "delta_kde_half_abs_ratio"],
        ([name, fmt(sobol.first_order_raw[i]), fmt(sobol.first_order_se[i]), fmt(sobol.total_raw[i]),
          fmt(sobol.total_se[i]), fmt(report.kde.delta_raw[i]),
          fmt(report.kde.diagnostics["unweighted"][i]), fmt(report.kde.diagnostics["half_abs_ratio"][i])]
         for i, name in enumerate(names)),
    )
    for w in sobol.warnings:
        log.warning(w)
    for name, s, st, dk, dh in report.rows():
        print(f"{name}\tS={s:.4f}\tS_T={st:.4f}\tdelta_kde={dk:.4f}\tdelta_hist={dh:.4f}")
    return [main, diag], {"n_evals": sobol.n_evals, "n_sample": int(y.shape[0])}


def cmd_invert(args):
    cfg = load_config(args.config)
    try:
        records = read_measurements(args.measurements)
    except OSError as exc:
        raise InputError(f"cannot read {args.measurements}: {exc}") from None
    curve = kcc_curve(cfg)
    stats, estimates = analyze_measurements(records, curve)
    out = Path(args.out)
    write_vendor_stats(out / "vendor_stats.csv", stats)
    write_estimates(out / "cavity_estimates.csv", estimates)
    write_mode_summary(out / "mode_summary.csv", mode_summary(records))
    n_bad = sum(e.status != "ok" for e in estimates)
    if n_bad:
        log.warning("%d cavities outside the k_cc curve image were excluded", n_bad)
    for s in stats:
        print(f"{s.vendor}\tn={s.n}\tk_cc={100 * s.mean_kcc:.3f}%\tdrir={s.mean_drir:.3f} mm")
    return ["vendor_stats.csv", "cavity_estimates.csv", "mode_summary.csv"], {"n_records": len(records)}


def cmd_report(args):
    """Figure data (CSV) and rendered PNGs from earlier result directories."""
    cfg = load_config(args.config)
    out = Path(args.out)
    files = []

    def emit(stem, header, rows, render):
        write_rows(out / f"{stem}.csv", header, rows)
        render(out / f"{stem}.png")
        files.extend([f"{stem}.csv", f"{stem}.png"])

    for src in map(Path, args.results or []):
        if (src / "mode_summary.csv").exists():
            _, rows = read_rows(src / "mode_summary.csv")
            data = [(r[0], int(r[1]), float(r[2]), float(r[3])) for r in rows]
            emit("measured_spectra", ["vendor", "mode", "mean_MHz", "std_MHz"],
                 ([v, m, f"{a:.6f}", f"{s:.6f}"] for v, m, a, s in data),
                 lambda p, d=data: plotting.vendor_passbands(p, d))
        if (src / SUMMARY_JSON).exists():
            summary = json.loads((src / SUMMARY_JSON).read_text())
            hist = summary.get("flatness_histogram")
            if hist:
                labels = list(hist)
                emit("flatness_histogram", ["bin", "cavities"], ([k, hist[k]] for k in labels),
                     lambda p, h=hist: plotting.flatness_bars(p, list(h), list(h.values())))
        if (src / MODE_STATS_CSV).exists():
            _, rows = read_rows(src / MODE_STATS_CSV)
            modes = [int(r[0]) for r in rows]
            mean = [float(r[1]) for r in rows]
            std = [float(r[2]) for r in rows]
            emit("simulated_passband", ["mode", "mean_MHz", "std_MHz", "minus3sigma_MHz", "plus3sigma_MHz"],
                 ([m, f"{a:.6f}", f"{s:.6f}", f"{a - 3 * s:.6f}", f"{a + 3 * s:.6f}"]
                  for m, a, s in zip(modes, mean, std)),
                 lambda p, a=(modes, mean, std): plotting.passband(p, *a))
        for study, stem in (("nineteen", "figure_sensitivity_nineteen"), ("ten", "figure_sensitivity_ten")):
            path = src / f"sensitivity_{study}.csv"
            if path.exists():
                header, rows = read_rows(path)
                cols = list(zip(*rows))
                emit(stem, header, rows,
                     lambda p, c=cols: plotting.sensitivity_bars(
                         p, list(c[0]), [float(v) for v in c[1]], [float(v) for v in c[3]],
                         [float(v) for v in c[4]]))
    curve = kcc_curve(cfg)
    emit("kcc_curve", ["drir_mm", "k_cc"],
         ([fmt(x), fmt(k)] for x, k in zip(curve.shifts, curve.kcc)),
         lambda p: plotting.kcc_curve(p, curve.shifts, curve.kcc))
    for f in files:
        if f.endswith(".csv"):
            print(f)
    return files, {}


# -- replay ------------------------------------------------------------------------

def cmd_replay(args):
    manifest = RunManifest.read(args.manifest)
    for key, (path, digest) in manifest.inputs.items():
        if not Path(path).exists() or input_digest(path) != digest:
            raise InputError(f"replay input {key} ({path}) is missing or changed")
    ns = argparse.Namespace(**manifest.args)
    ns.out, ns.threads, ns.verbose = args.out, args.threads, args.verbose
    files, _ = run_command(manifest.command, ns)
    mismatched = [f for f, d in sorted(manifest.outputs.items())
                  if sha256_file(Path(args.out) / f) != d]
    if mismatched:
        raise NumericalError(f"replay differs in: {', '.join(mismatched)}")
    print(f"replay identical: {len(manifest.outputs)} files")
    return [], {}


COMMANDS = {
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "surrogate": cmd_surrogate,
    "gsa": cmd_gsa,
    "invert": cmd_invert,
    "report": cmd_report,
    "replay": cmd_replay,
}


def run_command(name, args):
    Path(args.out).mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    files, telemetry = COMMANDS[name](args)
    if name == "replay":
        return files, telemetry
    telemetry["wall_seconds"] = round(time.perf_counter() - start, 3)
    inputs = {k: [str(Path(p).resolve()), input_digest(p)] for k, p in input_paths(args).items()}
    replay_args = {k: v for k, v in vars(args).items() if k not in NOT_REPLAYED}
    for k in ("config", "targets", "surrogate", "cell_surrogate", "cavity_surrogate", "measurements"):
        if replay_args.get(k):
            replay_args[k] = str(Path(replay_args[k]).resolve())
    if replay_args.get("results"):
        replay_args["results"] = [str(Path(p).resolve()) for p in replay_args["results"]]
    RunManifest(
        command=name, args=replay_args, seed=args.seed, out=str(Path(args.out).resolve()),
        inputs=inputs, outputs={f: sha256_file(Path(args.out) / f) for f in files},
        telemetry=telemetry, version=__version__,
    ).write(args.out)
    return files, telemetry


# -- argument parsing ------------------------------------------------------------------

def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _count(text):
    try:
        v = int(float(text)) if "e" in text.lower() else int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a count: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("count must be non-negative")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="model config JSON (default: built-in calibrated config)")
    common.add_argument("--seed", type=_u64, default=0)
    common.add_argument("--threads", type=_count, default=os.cpu_count() or 1,
                        help="worker threads; never changes results")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cavity-uq", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", parents=[common], help="fit model constants to targets")
    c.add_argument("--targets", help="JSON with k_cc_nominal, k_cc_slope, acceptance_rate")
    c.add_argument("--k-cc-nominal", type=float, default=CalibrationTargets.k_cc_nominal)
    c.add_argument("--k-cc-slope", type=float, default=CalibrationTargets.k_cc_slope)
    c.add_argument("--acceptance-rate", type=float, default=CalibrationTargets.acceptance_rate)
    c.add_argument("--n", type=_count, default=10_000, help="pilot cavities")

    s = sub.add_parser("simulate", parents=[common], help="run the virtual manufacturing chain")
    s.add_argument("--n", type=_count, default=1_000_000)
    s.add_argument("--eval-mode", choices=("direct", "surrogate"), default="direct")
    s.add_argument("--cell-surrogate", help="4-input cell surrogate JSON (surrogate mode)")
    s.add_argument("--cavity-surrogate", "--surrogate", dest="cavity_surrogate",
                   help="19-input cavity surrogate JSON (surrogate mode)")
    s.add_argument("--length-bound", type=float, default=3.0)
    s.add_argument("--iris-mode", choices=("independent", "common"), default="independent")

    g = sub.add_parser("surrogate", parents=[common], help="build a sparse-grid surrogate")
    g.add_argument("--dims", choices=("cell", "cavity", "ten"), default="cavity")
    g.add_argument("--budget", type=_count)
    g.add_argument("--weights", help="comma-separated output weights")
    g.add_argument("--n-cv", type=_count, default=1000)

    a = sub.add_parser("gsa", parents=[common], help="Sobol and Borgonovo sensitivity indices of k_cc")
    a.add_argument("--study", choices=("nineteen", "ten"), default="nineteen")
    a.add_argument("--n", type=_count, default=1 << 14, help="Sobol base sample size")
    a.add_argument("--n-sample", type=_count, default=10_000, help="cavities for the sorted sample")
    a.add_argument("--surrogate", help="surrogate JSON matching the study (built if omitted)")
    a.add_argument("--budget", type=_count)
    a.add_argument("--bins", type=_count, default=10)

    i = sub.add_parser("invert", parents=[common], help="iris deviations from measured spectra")
    i.add_argument("measurements", help="CSV: cavity_id,vendor,f0_MHz..f8_MHz")

    r = sub.add_parser("report", parents=[common], help="figure CSVs and PNGs from result dirs")
    r.add_argument("--from", dest="results", action="append", default=[],
                   help="result directory (repeatable)")

    rp = sub.add_parser("replay", help="rerun a manifest and compare outputs")
    rp.add_argument("manifest")
    rp.add_argument("--out", required=True)
    rp.add_argument("--threads", type=_count, default=os.cpu_count() or 1)
    rp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.threads = max(1, args.threads)
    try:
        run_command(args.command, args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except CavityUQError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
