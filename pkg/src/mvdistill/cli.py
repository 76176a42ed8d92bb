"""Command-line entry point: verify, gen-data, train, eval, report.

Configuration precedence, lowest first: built-in defaults, the JSON file given
by ``--config``, then command-line flags (``--seed``, ``--out``,
``--loss-mode``, ``--epochs``). Nested sections of the file are merged key
by key into the defaults.

Exit status: 0 success, 1 identity or acceptance failure, 2 usage error,
3 training divergence.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .identities import TOLERANCE, run_identities
from .losses import LOSS_MODES
from .model import Model, ModelSpec, evaluate, representations
from .probe import DEFAULT_BINS, MIN_SAMPLES_PER_CELL, nuisance_info, probe_report, view_specific_plugin
from .synth import GeneratorSpec, export_dataset, generate_continuous, sample_continuous
from .train import (
    DivergenceError,
    TrainConfig,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    train,
    write_metrics_csv,
)

log = logging.getLogger("mvdistill")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3

DEFAULTS = {
    # scalar per-view dims so that changing n_views alone stays valid
    "generator": {**GeneratorSpec().to_dict(), "private_dim": 2, "nuisance_dim": 2},
    "model": {"encoder_widths": [64, 32], "bottleneck_hidden": 32, "bottleneck_dim": 8,
              "stochastic": True, "init_log_var": 0.0},
    "train": TrainConfig().to_dict(),
    "loss_modes": ["ce-only", "ce+mv2d"],
    "seeds": [0],
    "n_samples": 3000,
    "probe": {"bins": DEFAULT_BINS, "samples": 20000, "stream": 7, "epochs": [10]},
    "verify": {"draws": 200, "seed": 0},
    "out": "runs",
}


class UsageError(ValueError):
    pass


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class ExperimentConfig:
    command: str
    generator: GeneratorSpec
    model: dict
    train: TrainConfig
    out: Path
    seeds: list[int]
    loss_modes: list[str]
    n_samples: int
    probe: dict
    verify: dict
    raw: dict = field(repr=False, default_factory=dict)

    @classmethod
    def from_dict(cls, command: str, raw: dict) -> "ExperimentConfig":
        unknown = set(raw) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        seeds = [int(s) for s in raw["seeds"]]
        if not seeds:
            raise UsageError("seeds must be nonempty")
        modes = list(raw["loss_modes"])
        bad = [m for m in modes if m not in LOSS_MODES]
        if bad or not modes:
            raise UsageError(f"loss_modes must be a nonempty subset of {LOSS_MODES}, got {modes}")
        if int(raw["n_samples"]) < 10:
            raise UsageError("n_samples must be >= 10")
        try:
            gen = GeneratorSpec.from_dict(raw["generator"])
            tc = TrainConfig.from_dict(raw["train"])
            ModelSpec(gen.view_dims(), gen.n_classes, **raw["model"])
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid config: {exc}") from exc
        bins, samples = int(raw["probe"]["bins"]), int(raw["probe"]["samples"])
        need = MIN_SAMPLES_PER_CELL * gen.n_classes * bins ** gen.n_views
        if samples < need:
            raise UsageError(f"probe.samples={samples} is too few for {bins} bins and {gen.n_views} views; need {need}")
        out = Path(raw["out"])
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise UsageError(f"cannot create output directory {out}: {exc}") from exc
        return cls(command, gen, dict(raw["model"]), tc, out, seeds, modes, int(raw["n_samples"]),
                   dict(raw["probe"]), dict(raw["verify"]), raw)

    def echo(self, **extra) -> dict:
        """The exact configuration, embedded in every output file."""
        d = {"command": self.command, **copy.deepcopy(self.raw)}
        d.update(extra)
        return d

    def model_spec(self) -> ModelSpec:
        return ModelSpec(self.generator.view_dims(), self.generator.n_classes, **self.model)

    def run_dir(self, mode: str, seed: int) -> Path:
        return self.out / mode / f"seed{seed}"


def load_config(command: str, path: Optional[str] = None, seed: Optional[int] = None,
                out: Optional[str] = None, loss_mode: Optional[str] = None,
                epochs: Optional[int] = None) -> ExperimentConfig:
    raw = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            raw = _merge(raw, json.loads(Path(path).read_text()))
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if seed is not None:
        raw["seeds"] = [seed]
    if out is not None:
        raw["out"] = out
    if loss_mode is not None:
        raw["loss_modes"] = [loss_mode]
    if epochs is not None:
        raw["train"]["epochs"] = epochs
    return ExperimentConfig.from_dict(command, raw)


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------- verify

def run_verify(cfg: ExperimentConfig) -> int:
    results = run_identities(int(cfg.verify.get("draws", 200)), int(cfg.verify.get("seed", 0)))
    ok = all(r["pass"] for r in results.values())
    _write_json(cfg.out / "identities.json",
                {"config": cfg.echo(), "tolerance": TOLERANCE, "identities": results, "ok": ok})
    for name, r in results.items():
        status = "pass" if r["pass"] else f"FAIL (max residual {r['max_residual']:.3e})"
        print(f"{name}: {status}")
    if not ok:
        failing = [n for n, r in results.items() if not r["pass"]]
        print(f"identity check failed: {', '.join(failing)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# ---------------------------------------------------------------- data

def dataset_for(cfg: ExperimentConfig, seed: int):
    spec = GeneratorSpec.from_dict({**cfg.generator.to_dict(), "seed": seed})
    return generate_continuous(spec, cfg.n_samples)


def run_gen_data(cfg: ExperimentConfig) -> int:
    for seed in cfg.seeds:
        paths = export_dataset(dataset_for(cfg, seed), cfg.out / "data" / f"seed{seed}", cfg.echo(seed=seed))
        for p in paths:
            print(p)
    return EXIT_OK


# ---------------------------------------------------------------- train / eval

def probe_set(cfg: ExperimentConfig, seed: int):
    spec = GeneratorSpec.from_dict({**cfg.generator.to_dict(), "seed": seed})
    return sample_continuous(spec, int(cfg.probe["samples"]), stream=int(cfg.probe["stream"]))


def info_probe(model: Model, batch, bins: int) -> dict:
    """Plug-in summaries of the bottleneck means on a held-out batch."""
    reps = representations(model, batch)
    out = {"plugin_nuisance": float(np.mean([nuisance_info(z, m, bins) for z, m in zip(reps, batch.nuisance)]))}
    if len(reps) > 1:
        out["plugin_view_specific"] = float(np.mean(view_specific_plugin(reps, batch.labels, bins)))
    return out


def evaluate_run(model: Model, cfg: ExperimentConfig, mode: str, seed: int, probe_history=None) -> dict:
    """Test-split accuracies and probe summaries for one trained model."""
    ds = dataset_for(cfg, seed)
    held = probe_set(cfg, seed)
    n = model.spec.n_views
    bins = int(cfg.probe["bins"])
    test = evaluate(model, ds.test)
    val = evaluate(model, ds.val)
    big = evaluate(model, held)
    result = {
        "config": cfg.echo(loss_mode=mode, seed=seed),
        "loss_mode": mode,
        "seed": seed,
        "test": {"accuracy": test.accuracy, "per_head": test.per_head},
        "val": {"accuracy": val.accuracy, "per_head": val.per_head},
        "heldout": {"accuracy": big.accuracy, "per_head": big.per_head, "samples": len(held)},
        "info": info_probe(model, held, bins),
        "probe": probe_report(representations(model, held), held.labels, held.nuisance, bins, seed).to_dict(),
    }
    if n > 1:
        result["heldout"]["loo_mean"] = float(np.mean([big.per_head[f"loo{i + 1}"] for i in range(n)]))
        result["test"]["loo_mean"] = float(np.mean([test.per_head[f"loo{i + 1}"] for i in range(n)]))
    if probe_history:
        result["probe_epochs"] = probe_history
    return result


def run_single(cfg: ExperimentConfig, mode: str, seed: int) -> dict:
    """Train one (loss mode, seed) pair and write metrics, checkpoint, eval."""
    ds = dataset_for(cfg, seed)
    held = probe_set(cfg, seed)
    tc = TrainConfig.from_dict({**cfg.train.to_dict(), "loss_mode": mode, "seed": seed})
    model = Model(cfg.model_spec(), seed=seed)
    bins = int(cfg.probe["bins"])
    epochs = {int(e) for e in cfg.probe.get("epochs", [])} | {tc.epochs}
    probe_history = {}

    def probe(m, epoch):
        probe_history[str(epoch)] = info_probe(m, held, bins)
        return {}

    run_dir = cfg.run_dir(mode, seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    echo = cfg.echo(loss_mode=mode, seed=seed)
    result = train(model, ds, tc, probe=probe, probe_epochs=epochs)
    write_metrics_csv(run_dir / "metrics.csv", result.history, model.spec.n_views, echo)
    ckpt = result.checkpoint
    ckpt.spec["config"] = echo
    save_checkpoint(ckpt, run_dir / "model.ckpt")
    report = evaluate_run(model, cfg, mode, seed, probe_history)
    _write_json(run_dir / "eval.json", report)
    return report


SUMMARY_METRICS = {
    "test_accuracy": lambda r: r["test"]["accuracy"],
    "heldout_accuracy": lambda r: r["heldout"]["accuracy"],
    "heldout_loo_mean": lambda r: r["heldout"].get("loo_mean"),
    "plugin_nuisance": lambda r: r["info"]["plugin_nuisance"],
    "plugin_view_specific": lambda r: r["info"].get("plugin_view_specific"),
    "probe_acc_all_views": lambda r: r["probe"]["acc_all_views"],
}


def summarize(cfg: ExperimentConfig, reports: Sequence[dict], failures: Sequence[dict]) -> dict:
    modes = {}
    for mode in cfg.loss_modes:
        rs = sorted((r for r in reports if r["loss_mode"] == mode), key=lambda r: r["seed"])
        entry = {"completed_seeds": [r["seed"] for r in rs],
                 "failed": [f for f in failures if f["loss_mode"] == mode], "metrics": {}}
        for name, get in SUMMARY_METRICS.items():
            vals = [get(r) for r in rs]
            if not vals or any(v is None for v in vals):
                continue
            arr = np.asarray(vals, dtype=np.float64)
            entry["metrics"][name] = {"mean": float(arr.mean()), "std": float(arr.std()), "per_seed": [float(v) for v in arr]}
        modes[mode] = entry
    return {"config": cfg.echo(), "modes": modes}


def write_summary(cfg: ExperimentConfig, summary: dict):
    _write_json(cfg.out / "summary.json", summary)
    cols = ["loss_mode", "seed", *SUMMARY_METRICS]
    lines = ["# config: " + json.dumps(summary["config"], sort_keys=True), ",".join(cols)]
    for mode, entry in summary["modes"].items():
        for k, seed in enumerate(entry["completed_seeds"]):
            row = [mode, str(seed)]
            for name in SUMMARY_METRICS:
                m = entry["metrics"].get(name)
                row.append("" if m is None else repr(m["per_seed"][k]))
            lines.append(",".join(row))
    (cfg.out / "summary.csv").write_text("\n".join(lines) + "\n")


def run_experiment(cfg: ExperimentConfig) -> int:
    reports, failures = [], []
    for mode in cfg.loss_modes:
        for seed in cfg.seeds:
            try:
                reports.append(run_single(cfg, mode, seed))
                log.info("finished %s seed %d", mode, seed)
            except DivergenceError as exc:
                log.error("%s seed %d diverged: %s", mode, seed, exc)
                failures.append({"loss_mode": mode, "seed": seed, "error": str(exc)})
    write_summary(cfg, summarize(cfg, reports, failures))
    print(cfg.out / "summary.json")
    return EXIT_DIVERGED if failures else EXIT_OK


def _run_dirs(cfg: ExperimentConfig):
    for mode in cfg.loss_modes:
        for seed in cfg.seeds:
            yield mode, seed, cfg.run_dir(mode, seed)


def run_eval(cfg: ExperimentConfig, checkpoint: Optional[str] = None) -> int:
    """Re-evaluate saved checkpoints; rewrites each eval.json."""
    if checkpoint is not None:
        ckpt = load_checkpoint(checkpoint)
        echo = ckpt.spec.get("config", {})
        mode, seed = echo.get("loss_mode", cfg.loss_modes[0]), int(echo.get("seed", cfg.seeds[0]))
        report = evaluate_run(model_from_checkpoint(ckpt), cfg, mode, seed)
        print(json.dumps({k: report[k] for k in ("loss_mode", "seed", "test")}, sort_keys=True))
        return EXIT_OK
    found = 0
    for mode, seed, run_dir in _run_dirs(cfg):
        path = run_dir / "model.ckpt"
        if not path.exists():
            continue
        found += 1
        previous = json.loads((run_dir / "eval.json").read_text()) if (run_dir / "eval.json").exists() else {}
        report = evaluate_run(model_from_checkpoint(load_checkpoint(path)), cfg, mode, seed,
                              previous.get("probe_epochs"))
        _write_json(run_dir / "eval.json", report)
        print(run_dir / "eval.json")
    if not found:
        raise UsageError(f"no checkpoints under {cfg.out}")
    return EXIT_OK


def run_report(cfg: ExperimentConfig) -> int:
    reports, failures = [], []
    for mode, seed, run_dir in _run_dirs(cfg):
        path = run_dir / "eval.json"
        if path.exists():
            reports.append(json.loads(path.read_text()))
        else:
            failures.append({"loss_mode": mode, "seed": seed, "error": "no eval.json"})
    if not reports:
        raise UsageError(f"no evaluated runs under {cfg.out}")
    write_summary(cfg, summarize(cfg, reports, failures))
    print(cfg.out / "summary.json")
    return EXIT_OK


# ---------------------------------------------------------------- entry

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvdistill", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "verify": "check the information identities on random discrete systems",
        "gen-data": "export synthetic train/val/test splits",
        "train": "train every loss mode and seed, then summarize",
        "eval": "re-evaluate saved checkpoints",
        "report": "aggregate evaluated runs into summary files",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="run a single seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--loss-mode", choices=LOSS_MODES, help="run a single loss mode")
        p.add_argument("--epochs", type=int, help="override train.epochs")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "eval":
            p.add_argument("--checkpoint", help="evaluate one checkpoint file")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.command, args.config, args.seed, args.out, args.loss_mode, args.epochs)
        if args.command == "verify":
            return run_verify(cfg)
        if args.command == "gen-data":
            return run_gen_data(cfg)
        if args.command == "train":
            return run_experiment(cfg)
        if args.command == "eval":
            return run_eval(cfg, args.checkpoint)
        return run_report(cfg)
    except UsageError as exc:
        print(f"mvdistill: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
