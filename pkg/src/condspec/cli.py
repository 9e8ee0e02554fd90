"""Command-line front end: fit, summarize, simulate, study.

Every command writes a manifest.json (config echo, config hash, seed, tool
version, input digests) into its output directory; reruns with identical
manifests produce byte-identical outputs.  Exit codes: 0 success, 2 validation
failure (including usage errors), 3 numerical failure, 1 failed --assert.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import config_hash, load_checkpoint, save_checkpoint
from .dataset import load_dataset, save_dataset
from .errors import NumericalError, ValidationError
from .sampler import ModelConfig, run_chain
from .simstudy import (HF_BAND, LF_BAND, Ma2Config, StudyReport, generate_ma2,
                       run_study)
from .summaries import band_measures, surface_summaries


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True, indent=2)
        handle.write("\n")


def _write_manifest(outdir: Path, command: str, config: dict, seed, inputs, outputs):
    manifest = {
        "tool": "condspec",
        "version": __version__,
        "command": command,
        "config": config,
        "config_hash": hashlib.sha256(
            json.dumps(config, sort_keys=True).encode()).hexdigest(),
        "seed": seed,
        "inputs": {str(p): _sha256_file(p) for p in inputs},
        "outputs": sorted(outputs),
    }
    _write_json(outdir / "manifest.json", manifest)


def _parse_band(text):
    try:
        lo, hi = (float(part) for part in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"band must be LO:HI, got {text!r}") from None
    return (lo, hi)


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="condspec",
                                     description="Bayesian conditional spectral analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit the model to series/outcome CSV files")
    fit.add_argument("--series", required=True)
    fit.add_argument("--outcomes", required=True)
    fit.add_argument("--out", required=True)
    fit.add_argument("--iters", type=_positive_int, default=2000)
    fit.add_argument("--burnin", type=int, default=500)
    fit.add_argument("--seed", type=int, required=True)
    fit.add_argument("--nj", type=int, default=None)
    fit.add_argument("--nh", type=int, default=10)
    fit.add_argument("--sigma2-alpha", type=float, default=1e5)
    fit.add_argument("--G", type=float, default=1e5, dest="half_t_scale")
    fit.add_argument("--nu", type=float, default=3.0, dest="half_t_df")
    fit.add_argument("--proposal-df", type=float, default=None)
    fit.add_argument("--detrend", choices=("none", "mean", "linear"), default="mean")
    fit.add_argument("--threads", type=_positive_int, default=1)

    summ = sub.add_parser("summarize", help="evaluate functionals of a fitted chain")
    summ.add_argument("--checkpoint", required=True)
    summ.add_argument("--out", required=True)
    summ.add_argument("--ugrid", type=_positive_int, default=101)
    summ.add_argument("--band", type=_parse_band, default=HF_BAND,
                      help="high-frequency band LO:HI (half-open)")
    summ.add_argument("--lf", type=_parse_band, default=LF_BAND,
                      help="low-frequency band LO:HI (half-open)")
    summ.add_argument("--derivatives", action="store_true",
                      help="also write band-coherence derivative curves")
    summ.add_argument("--threads", type=_positive_int, default=1)

    sim = sub.add_parser("simulate", help="write a synthetic MA(2) dataset")
    sim.add_argument("--N", type=_positive_int, required=True)
    sim.add_argument("--n", type=_positive_int, required=True)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--out", required=True)

    study = sub.add_parser("study", help="run the simulation study")
    study.add_argument("--N", type=_positive_int, default=25)
    study.add_argument("--n", type=_positive_int, default=300)
    study.add_argument("--replicates", type=_positive_int, required=True)
    study.add_argument("--seed", type=int, required=True)
    study.add_argument("--out", required=True)
    study.add_argument("--iters", type=_positive_int, default=2000)
    study.add_argument("--burnin", type=int, default=500)
    study.add_argument("--nj", type=int, default=10)
    study.add_argument("--nh", type=int, default=5)
    study.add_argument("--G", type=float, default=1e5, dest="half_t_scale")
    study.add_argument("--sum", action="store_true",
                       help="two-stage stage 1 uses literal band sums")
    study.add_argument("--threads", type=_positive_int, default=1)
    study.add_argument("--assert", dest="assertions", action="append", default=[],
                       help="e.g. coverage:0.90:0.99 or ise-dominance")
    return parser


def cmd_fit(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    data = load_dataset(args.series, args.outcomes, detrend_mode=args.detrend)
    config = ModelConfig(iterations=args.iters, burn_in=args.burnin,
                         n_j=args.nj, n_h=args.nh,
                         sigma2_alpha=args.sigma2_alpha,
                         half_t_scale=args.half_t_scale,
                         half_t_df=args.half_t_df,
                         proposal_df=args.proposal_df,
                         seed=args.seed).resolve(data.n_time)
    draws = run_chain(data, config)
    ckpt = outdir / "chain.ckpt"
    save_checkpoint(ckpt, draws)
    secs = draws.seconds_per_iteration
    _write_json(outdir / "fit_log.json", {
        "iterations": config.iterations,
        "burn_in": config.burn_in,
        "retained": draws.n_retained,
        "acceptance": {str(k): v for k, v in draws.acceptance.items()},
        "seconds_per_iteration": {"mean": float(np.mean(secs)),
                                  "sd": float(np.std(secs, ddof=1)),
                                  "max": float(np.max(secs))},
        "n_subjects": int(data.n_subjects),
        "n_time": int(data.n_time),
        "n_channels": int(data.n_channels),
    })
    _write_manifest(outdir, "fit", dataclasses.asdict(config), args.seed,
                    [args.series, args.outcomes],
                    ["chain.ckpt", "fit_log.json"])
    return 0


def cmd_summarize(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    draws = load_checkpoint(args.checkpoint)
    us = np.linspace(0.0, 1.0, args.ugrid)
    outputs = []

    surfaces = surface_summaries(draws, us=us)
    for key, surf in surfaces.items():
        name = (f"logspec_p{key[1]}.csv" if key[0] == "logspec"
                else f"coherence_p{key[1]}q{key[2]}.csv")
        _write_surface_csv(outdir / name, surf)
        outputs.append(name)

    curves = band_measures(draws, us=us, lf=args.lf, hf=args.band)
    for key, curve in curves.items():
        name = (f"{key[0]}_p{key[1]}.csv" if len(key) == 2
                else f"{key[0]}_p{key[1]}q{key[2]}.csv")
        _write_curve_csv(outdir / name, curve)
        outputs.append(name)

    if args.derivatives:
        from .summaries import band_coherence_derivative
        for p in range(1, draws.n_channels + 1):
            for q in range(p + 1, draws.n_channels + 1):
                curve = band_coherence_derivative(draws, p, q, band=args.band, us=us)
                name = f"dcohhf_p{p}q{q}.csv"
                _write_curve_csv(outdir / name, curve)
                outputs.append(name)

    meta = {
        "checkpoint": str(args.checkpoint),
        "config_hash": config_hash(draws.config),
        "seed": draws.config.seed,
        "retained_draws": draws.n_retained,
        "u_grid": {"points": args.ugrid, "lo": 0.0, "hi": 1.0},
        "omega_grid": "training Fourier frequencies",
        "hf_band": list(args.band),
        "lf_band": list(args.lf),
        "band_convention": "half-open [lo, hi), in-band averages",
        "percentiles": "order statistics at ceil(alpha*S), alpha in {0.025, 0.975}",
        "scales": {"logspec": "log-spectrum",
                   "coherence": "logit-squared-coherence",
                   "band_curves": "linear"},
        "files": sorted(outputs),
    }
    _write_json(outdir / "metadata.json", meta)
    outputs.append("metadata.json")
    _write_manifest(outdir, "summarize",
                    {"ugrid": args.ugrid, "hf": list(args.band), "lf": list(args.lf),
                     "derivatives": bool(args.derivatives),
                     "checkpoint_config_hash": config_hash(draws.config)},
                    draws.config.seed, [args.checkpoint], outputs)
    return 0


def _write_surface_csv(path, surf):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["omega", "u", "mean", "lo95", "hi95"])
        for j, u in enumerate(surf.us):
            for i, om in enumerate(surf.omegas):
                writer.writerow([repr(float(om)), repr(float(u)),
                                 repr(float(surf.mean[i, j])),
                                 repr(float(surf.lower95[i, j])),
                                 repr(float(surf.upper95[i, j]))])


def _write_curve_csv(path, curve):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["u", "mean", "lo95", "hi95"])
        for j, u in enumerate(curve.us):
            writer.writerow([repr(float(u)), repr(float(curve.mean[j])),
                             repr(float(curve.lower95[j])),
                             repr(float(curve.upper95[j]))])


def cmd_simulate(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    data = generate_ma2(Ma2Config(n_subjects=args.N, n_time=args.n, seed=args.seed))
    save_dataset(data, outdir / "series.csv", outdir / "outcomes.csv")
    _write_manifest(outdir, "simulate",
                    {"N": args.N, "n": args.n}, args.seed, [],
                    ["series.csv", "outcomes.csv"])
    return 0


def cmd_study(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    study_cfg = Ma2Config(n_subjects=args.N, n_time=args.n, seed=args.seed)
    model = ModelConfig(iterations=args.iters, burn_in=args.burnin,
                        n_j=args.nj, n_h=args.nh, half_t_scale=args.half_t_scale,
                        seed=args.seed)
    report = run_study(args.replicates, study_cfg, model,
                       threads=args.threads, sums=args.sum)
    _write_report_csv(outdir / "report.csv", report)
    _write_json(outdir / "report.json", _report_payload(report))
    _write_manifest(outdir, "study",
                    {"N": args.N, "n": args.n, "replicates": args.replicates,
                     "iters": args.iters, "burnin": args.burnin,
                     "nj": args.nj, "nh": args.nh, "G": args.half_t_scale,
                     "sum": bool(args.sum)},
                    args.seed, [], ["report.csv", "report.json"])
    failures = _check_assertions(report, args.assertions)
    for message in failures:
        print(f"assertion failed: {message}", file=sys.stderr)
    return 1 if failures else 0


def _report_payload(report: StudyReport) -> dict:
    return {
        "replicates": report.replicates,
        "failed": list(report.failed),
        "measures": list(report.measures),
        "bayes_ise": report.bayes_ise,
        "bayes_coverage": report.bayes_coverage,
        "spline_ise": report.spline_ise,
        "local_ise": report.local_ise,
        "seconds_per_iteration": report.seconds_per_iteration,
        "metadata": report.metadata,
    }


def _write_report_csv(path, report: StudyReport):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["measure", "estimator", "ise_mean_scaled", "ise_sd_scaled",
                         "ise_scale", "coverage_mean", "coverage_sd"])
        for row in report.rows():
            writer.writerow([row[0], row[1]] + [repr(v) if isinstance(v, float) else v
                                                for v in row[2:]])


def _check_assertions(report: StudyReport, assertions) -> list:
    failures = []
    for spec in assertions:
        parts = spec.split(":")
        if parts[0] == "coverage":
            lo, hi = float(parts[1]), float(parts[2])
            for measure, (mean, _) in report.bayes_coverage.items():
                if not lo <= mean <= hi:
                    failures.append(f"coverage[{measure}]={mean:.4f} outside [{lo}, {hi}]")
        elif parts[0] == "ise-dominance":
            for measure in report.spline_ise:
                bayes = report.bayes_ise[measure][0]
                if bayes >= report.spline_ise[measure][0]:
                    failures.append(f"bayes ISE not below spline for {measure}")
                if bayes >= report.local_ise[measure][0]:
                    failures.append(f"bayes ISE not below local for {measure}")
        else:
            raise ValidationError(f"unknown assertion {spec!r}")
    return failures


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"fit": cmd_fit, "summarize": cmd_summarize,
                "simulate": cmd_simulate, "study": cmd_study}
    try:
        return handlers[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
