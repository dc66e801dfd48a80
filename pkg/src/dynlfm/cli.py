"""Command-line entry point: ``dynlfm {generate,fit,impute,evaluate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, RunConfig, build_config, read_ini, resolve_output
from .evaluation import column_mean_mse, evaluate_trials, feature_usage, instance_counts, trace_summary
from .generative import SyntheticSpec, generate_cambridge_bars, heldout_mask
from .inference import INITS, ModelKind, Regime, run_chains
from .model import Dataset

log = logging.getLogger("dynlfm")

PRESETS = ("cambridge-bars",)


def _write_manifest(out: Path, files, **meta) -> None:
    manifest = {"files": {f: io.file_digest(out / f) for f in sorted(files)}, **meta}
    (out / "manifest.json").write_text(io.canonical_json(manifest))


# -- generate ----------------------------------------------------------------

def cmd_generate(args) -> int:
    spec = SyntheticSpec(seed=args.seed, **{k: v for k, v in
                                            (("noise_sd", args.noise_sd), ("n_obs", args.n_obs))
                                            if v is not None})
    ds = generate_cambridge_bars(spec)
    out = Path(resolve_output(args.output))
    out.mkdir(parents=True, exist_ok=True)
    io.save_csv(out / "data.csv", ds.data)
    io.save_csv(out / "truth.csv", ds.truth)
    io.save_matrix(out / "features.csv", ds.true_dict.a)
    io.save_matrix(out / "allocation.csv", ds.true_alloc.lam, integer=True)
    io.save_matrix(out / "test_rows.csv", ds.test_rows[:, None], integer=True)
    params = {"preset": args.preset, "n_obs": spec.n_obs, "new_instance_prob": spec.new_instance_prob,
              "lifetime_param": spec.lifetime_param, "noise_sd": spec.noise_sd,
              "heldout_fraction": spec.heldout_fraction,
              "heldout_dims_per_obs": spec.heldout_dims_per_obs}
    _write_manifest(out, ["data.csv", "truth.csv", "features.csv", "allocation.csv", "test_rows.csv"],
                    seed=spec.seed, params=params)
    log.info("wrote %s", out)
    return 0


# -- fit ---------------------------------------------------------------------

_FLAG_KEYS = {"model": "model", "regime": "regime", "k_max": "k_max", "iters": "n_iters",
              "burn_in": "burn_in", "thin": "thin", "seed": "seed", "init": "init",
              "chains": "chains", "holdout_rows": "holdout_rows", "holdout_dims": "holdout_dims",
              "input": "input", "output": "output"}


def _run_config(args) -> RunConfig:
    over = read_ini(args.config) if args.config else {}
    for flag, key in _FLAG_KEYS.items():
        val = getattr(args, flag, None)
        if val is not None:
            over[key] = val
    if args.preprocess is not None:
        over["preprocess"] = tuple(s for s in args.preprocess.split(",") if s)
    cfg = build_config(over)
    if cfg.input is None:
        raise ConfigError("no input file given")
    if cfg.output is None:
        raise ConfigError("no output directory given (-o)")
    return cfg


def load_input(cfg: RunConfig) -> Dataset:
    if cfg.preprocess[:1] == ("stft",):
        return io.stft_spectrogram(io.read_waveform(cfg.input))
    return io.load_csv(cfg.input)


def hold_out(data: Dataset, cfg: RunConfig) -> tuple[Dataset, np.ndarray]:
    """Mask extra cells for scoring; returns the fitted data and the scored-cell mask."""
    if cfg.holdout_rows == 0:
        return data, np.zeros(data.shape, dtype=bool)
    if cfg.holdout_dims >= data.shape[1]:
        raise ConfigError("holdout_dims must leave at least one dimension observed")
    rng = np.random.default_rng([cfg.sampler.seed, 1])
    keep, _ = heldout_mask(*data.shape, cfg.holdout_rows, cfg.holdout_dims, rng)
    scored = data.observed & ~keep
    return data.with_mask(keep), scored


def cmd_fit(args) -> int:
    cfg = _run_config(args)
    raw = load_input(cfg)
    fitted, scored = hold_out(raw, cfg)
    data, transforms = io.preprocess(fitted, [s for s in cfg.preprocess if s != "stft"])
    out = Path(resolve_output(cfg.output))
    out.mkdir(parents=True, exist_ok=True)

    traces = run_chains(data, cfg.sampler, n_chains=cfg.chains, parallel=args.parallel)
    meta = cfg.to_dict()
    meta.pop("output")
    files = []
    for i, tr in enumerate(traces):
        sub = io.save_trace(tr, out / f"chain_{i}", meta, seed=cfg.sampler.seed, extra=None)
        files += [f"chain_{i}/{f}" for f in sorted(p.name for p in sub.iterdir())]
    io.save_csv(out / "data_used.csv", data)
    io.save_matrix(out / "scored.csv", np.argwhere(scored), integer=True)
    (out / "preprocess.json").write_text(io.canonical_json([t.to_dict() for t in transforms]))
    files += ["data_used.csv", "scored.csv", "preprocess.json"]
    _write_manifest(out, files, config=meta, seed=cfg.sampler.seed, chains=cfg.chains)
    for i, tr in enumerate(traces):
        log.info("chain %d: mean K %.2f, final log joint %.2f", i, tr.n_features.mean(),
                 tr.log_joint[-1] if len(tr) else float("nan"))
    return 0


# -- impute / evaluate -------------------------------------------------------

def load_run(path) -> tuple[list, Dataset, list, np.ndarray]:
    """Chains, fitted data, transforms and scored cells of a ``fit`` output directory."""
    path = Path(path)
    chains = sorted(path.glob("chain_*"), key=lambda p: int(p.name.split("_")[1]))
    if not chains:
        raise FileNotFoundError(f"{path} holds no chain_* trace directories")
    traces = [io.load_trace(p) for p in chains]
    data = io.load_csv(path / "data_used.csv")
    transforms = [io.Affine.from_dict(d) for d in json.loads((path / "preprocess.json").read_text())]
    scored = io.load_matrix(path / "scored.csv", int)
    return traces, data, transforms, scored


def _posterior_completion(traces, data: Dataset) -> np.ndarray:
    x = np.where(data.observed, data.x, np.nan)
    cells = traces[0].cells
    if len(cells):
        x[cells[:, 0], cells[:, 1]] = np.mean([t.imputed.mean(axis=0) for t in traces], axis=0)
    return x


def cmd_impute(args) -> int:
    traces, data, transforms, _ = load_run(args.trace)
    x = io.invert_transforms(_posterior_completion(traces, data), transforms)
    out = Path(resolve_output(args.output)) if args.output else Path(args.trace) / "completed.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    io.save_csv(out, Dataset(x, np.isfinite(x), data.column_names))
    return 0


def cmd_evaluate(args) -> int:
    traces, data, transforms, scored = load_run(args.trace)
    truth = io.load_csv(args.truth)
    if truth.shape != data.shape:
        raise ConfigError(f"truth shape {truth.shape} does not match fitted data {data.shape}")
    truth_x = io.apply_transforms(truth.x, transforms)
    mask = np.zeros(data.shape, dtype=bool)
    if len(scored):
        mask[scored[:, 0], scored[:, 1]] = True
    else:
        mask = ~data.observed & truth.observed
    report = evaluate_trials(traces, truth_x, mask)
    out = Path(resolve_output(args.output)) if args.output else Path(args.trace) / "evaluation"
    out.mkdir(parents=True, exist_ok=True)
    summaries = []
    for t in traces:
        s = trace_summary(t)
        summaries.append({k: {"mean": v["mean"], "sd": v["sd"]} for k, v in s.items()})
    result = {**report.to_dict(), "baseline_column_mean_mse": column_mean_mse(data, truth_x, mask),
              "n_scored_cells": int(mask.sum()), "chains": summaries}
    (out / "report.json").write_text(io.canonical_json(result))

    state = traces[0].final_state
    io.save_matrix(out / "feature_images.csv", state.features.a)
    order = np.argsort(-state.alloc.lam.sum(axis=0), kind="stable")
    with open(out / "feature_usage.csv", "w") as fh:
        fh.write("feature,count\n")
        for k, c in zip(order, feature_usage(state)):
            fh.write(f"{k},{c}\n")
    io.save_matrix(out / "instance_counts.csv", instance_counts(state))
    _write_manifest(out, ["report.json", "feature_images.csv", "feature_usage.csv",
                          "instance_counts.csv"])
    print(report.row())
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynlfm", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a synthetic dataset")
    g.add_argument("--preset", choices=PRESETS, default="cambridge-bars")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise-sd", type=float)
    g.add_argument("--n-obs", type=int)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="run the sampler on a CSV (or waveform with --preprocess stft)")
    f.add_argument("input", nargs="?")
    f.add_argument("--config")
    f.add_argument("--model", choices=[m.value for m in ModelKind])
    f.add_argument("--regime", choices=[r.value for r in Regime])
    f.add_argument("--k-max", type=int)
    f.add_argument("--iters", type=int)
    f.add_argument("--burn-in", type=int)
    f.add_argument("--thin", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--init", choices=INITS)
    f.add_argument("--chains", type=int)
    f.add_argument("--serial", dest="parallel", action="store_false",
                   help="run chains one after another instead of concurrently")
    f.add_argument("--preprocess", help=f"comma-separated steps from {', '.join(io.STEPS)}")
    f.add_argument("--holdout-rows", type=float, help="fraction of rows with cells held out for scoring")
    f.add_argument("--holdout-dims", type=int, help="cells held out in each chosen row")
    f.add_argument("-o", "--output")
    f.set_defaults(func=cmd_fit)

    i = sub.add_parser("impute", help="write posterior-mean completions of masked cells")
    i.add_argument("--trace", required=True)
    i.add_argument("-o", "--output")
    i.set_defaults(func=cmd_impute)

    e = sub.add_parser("evaluate", help="score held-out cells and export plot data")
    e.add_argument("--trace", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("-o", "--output")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, io.ParseError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"dynlfm {args.command}: error: {exc}", file=sys.stderr)
        return 1
