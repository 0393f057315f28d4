"""Run, evaluate and sweep experiments described by an ExperimentConfig.

Run directory layout::

    metrics.csv      per-epoch training losses
    report.json      EvalReport on the held-out test split
    roc.csv          ROC points of the report
    checkpoint.dgua  trainer state after the last epoch
    roc.png, losses.png
    manifest.json    resolved config + content hashes, written last

A sweep writes one run directory per cell under ``cells/`` plus
``cells.csv``, ``summary.csv`` and ``summary.png``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import platform
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__, plotting
from .config import ExperimentConfig, canonical_json, git_blob_hash
from .datagen import (
    Dataset,
    ProtocolSpec,
    generate,
    load_feature_file,
    save_feature_file,
    split_protocol,
    write_dataset_manifest,
)
from .errors import DguaError, SchemaError
from .fileio import atomic_write_text
from .metrics import EvalReport, build_report
from .trainer import Trainer, history_csv

log = logging.getLogger(__name__)

ABLATIONS = {"none": (False, False), "sid": (True, False), "sood": (False, True), "sid+sood": (True, True)}
RUN_FILES = ("metrics.csv", "report.json", "roc.csv", "checkpoint.dgua")


def ablation_name(use_sid: bool, use_sood: bool) -> str:
    return {v: k for k, v in ABLATIONS.items()}[(bool(use_sid), bool(use_sood))]


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.feature_file is not None:
        return load_feature_file(cfg.feature_file)
    return generate(config=cfg.data)


def _fit_architecture(cfg: ExperimentConfig, data: Dataset) -> ExperimentConfig:
    spec = cfg.train.architecture
    if spec.input_dim != data.input_dim:
        spec = replace(spec, input_dim=data.input_dim)
        cfg = replace(cfg, train=replace(cfg.train, architecture=spec))
    return cfg


@dataclass
class RunResult:
    report: EvalReport
    output_dir: Path
    real_l1: list[float]


def evaluate(trainer: Trainer, test: Dataset, cfg: ExperimentConfig) -> EvalReport:
    probs = trainer.predict_proba(test.features)
    meta = {
        "protocol": cfg.protocol.name,
        "ablation": ablation_name(*cfg.ablation),
        "seed": cfg.seed,
        "experiment_hash": cfg.experiment_hash(),
        "epochs_trained": trainer.epoch,
        "real_embedding_l1": [r.real_l1 for r in trainer.history],
    }
    return build_report(probs, test.labels, threshold=cfg.threshold, metadata=meta)


def _write_report(report: EvalReport, out: Path, plots: bool, title: str) -> None:
    atomic_write_text(out / "report.json", report.to_json())
    atomic_write_text(out / "roc.csv", report.roc_csv())
    if plots:
        fpr, tpr = zip(*report.roc)
        plotting.plot_roc({title: (fpr, tpr, report.auc)}, out / "roc.png", title=f"ROC {title}")


def write_manifest(cfg: ExperimentConfig, out: Path, files=RUN_FILES) -> dict:
    resolved = cfg.resolved()
    manifest = {
        "kind": "dguafas-manifest",
        "package_version": __version__,
        "numpy_version": np.__version__,
        "python": platform.python_version(),
        "config": resolved,
        "content_hash": git_blob_hash(canonical_json(resolved).encode()),
        "experiment_hash": cfg.experiment_hash(),
        "outputs": {f: git_blob_hash((out / f).read_bytes()) for f in files if (out / f).exists()},
    }
    atomic_write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def run_experiment(cfg: ExperimentConfig, plots: bool = True) -> RunResult:
    data = load_dataset(cfg)
    cfg = _fit_architecture(cfg, data)
    train, test = split_protocol(data, cfg.protocol)
    log.info("run %s [%s] seed %d: %d train / %d test samples", cfg.protocol.name,
             ablation_name(*cfg.ablation), cfg.seed, len(train), len(test))
    trainer = Trainer(cfg.train)
    trainer.fit(train)
    report = evaluate(trainer, test, cfg)

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "metrics.csv", history_csv(trainer.history))
    _write_report(report, out, plots, f"{cfg.protocol.name} {ablation_name(*cfg.ablation)}")
    trainer.save(out / "checkpoint.dgua")
    if plots and trainer.history:
        plotting.plot_losses(trainer.history, out / "losses.png")
    write_manifest(cfg, out)
    return RunResult(report, out, [r.real_l1 for r in trainer.history])


def evaluate_checkpoint(checkpoint_path, cfg: ExperimentConfig, plots: bool = True) -> EvalReport:
    """Score a saved trainer on the config's test split (training settings come from the checkpoint)."""
    trainer = Trainer.load(checkpoint_path)
    data = load_dataset(cfg)
    if data.input_dim != trainer.config.architecture.input_dim:
        raise SchemaError(
            f"checkpoint expects input_dim {trainer.config.architecture.input_dim}, data has {data.input_dim}"
        )
    _, test = split_protocol(data, cfg.protocol)
    cfg = replace(cfg, train=trainer.config, seed=trainer.config.seed)
    report = evaluate(trainer, test, cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_report(report, out, plots, f"{cfg.protocol.name} (checkpoint)")
    return report


def generate_data(cfg: ExperimentConfig) -> Path:
    data = load_dataset(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_feature_file(data, out / "data.csv")
    write_dataset_manifest(data, out / "dataset_manifest.json", cfg.data)
    return out / "data.csv"


# --- sweeps ---

CELL_COLUMNS = ("protocol", "ablation", "seed", "status", "auc", "hter", "threshold", "unknown_score", "output_dir")
SUMMARY_COLUMNS = (
    "protocol", "ablation", "n", "n_failed",
    "auc_mean", "auc_median", "hter_mean", "hter_median", "unknown_score_mean", "unknown_score_median",
)


def protocol_axis(cfg: ExperimentConfig) -> list[ProtocolSpec]:
    """One protocol per held-out domain, keeping the base protocol's mode and classes."""
    base = cfg.protocol
    if cfg.data is not None:
        domains = list(range(cfg.data.n_domains))
    else:
        domains = sorted(set(base.train_domains) | {base.test_domain})
    if base.mode == "limited_source":
        tests = [d for d in domains if d not in base.train_domains]
        return [replace(base, test_domain=t) for t in tests]
    return [
        ProtocolSpec(base.mode, tuple(d for d in domains if d != t), t, base.known_k, base.unknown_classes)
        for t in domains
    ]


def sweep_cells(cfg: ExperimentConfig, axes, seeds=None) -> list[ExperimentConfig]:
    axes = set(axes)
    protocols = protocol_axis(cfg) if "protocol" in axes else [cfg.protocol]
    ablations = list(ABLATIONS.values()) if "ablation" in axes else [cfg.ablation]
    if seeds is None:
        seeds = [cfg.seed + i for i in range(5)] if "seed" in axes else [cfg.seed]
    cells = []
    root = Path(cfg.output_dir) / "cells"
    for proto, ab, seed in product(protocols, ablations, seeds):
        c = cfg.with_protocol(proto).with_ablation(*ab).with_seed(seed)
        cells.append(c.with_output_dir(root / f"test{proto.test_domain}" / ablation_name(*ab) / f"seed{seed}"))
    return cells


def _run_cell(cfg: ExperimentConfig, plots: bool) -> dict:
    row = {"protocol": cfg.protocol.name, "ablation": ablation_name(*cfg.ablation), "seed": cfg.seed,
           "output_dir": str(cfg.output_dir)}
    try:
        rep = run_experiment(cfg, plots=plots).report
    except (DguaError, OSError, ValueError) as exc:
        log.error("cell %s failed: %s", row, exc)
        log.debug("%s", traceback.format_exc())
        return {**row, "status": f"failed: {type(exc).__name__}: {exc}".replace("\n", " "),
                "auc": float("nan"), "hter": float("nan"), "threshold": float("nan"),
                "unknown_score": float("nan")}
    return {**row, "status": "ok", "auc": rep.auc, "hter": rep.hter, "threshold": rep.threshold,
            "unknown_score": rep.mean_spoof_score.get("unknown", float("nan"))}


def _stats(values) -> tuple[float, float]:
    v = np.array([x for x in values if np.isfinite(x)], dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(np.median(v))


def summarize(rows: list[dict]) -> list[dict]:
    """Mean and median across seeds for every (protocol, ablation) pair.

    With several protocols, an ``average`` row per ablation aggregates the
    per-seed protocol averages.
    """
    out = []
    protocols = list(dict.fromkeys(r["protocol"] for r in rows))
    ablations = list(dict.fromkeys(r["ablation"] for r in rows))

    def entry(proto, ab, group, failed):
        s = {"protocol": proto, "ablation": ab, "n": len(group), "n_failed": failed}
        for m in ("auc", "hter", "unknown_score"):
            s[f"{m}_mean"], s[f"{m}_median"] = _stats([g[m] for g in group])
        return s

    for proto, ab in product(protocols, ablations):
        group = [r for r in rows if r["protocol"] == proto and r["ablation"] == ab]
        if group:
            ok = [r for r in group if r["status"] == "ok"]
            out.append(entry(proto, ab, ok, len(group) - len(ok)))
    if len(protocols) > 1:
        for ab in ablations:
            per_seed = {}
            failed = 0
            for r in rows:
                if r["ablation"] != ab:
                    continue
                if r["status"] != "ok":
                    failed += 1
                    continue
                per_seed.setdefault(r["seed"], []).append(r)
            group = [
                {m: float(np.mean([g[m] for g in gs])) for m in ("auc", "hter", "unknown_score")}
                for gs in per_seed.values()
                if len(gs) == len(protocols)
            ]
            out.append(entry("average", ab, group, failed))
    return out


def _csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


@dataclass
class SweepResult:
    rows: list[dict]
    summary: list[dict]
    n_failed: int


def run_sweep(cfg: ExperimentConfig, axes, seeds=None, jobs: int = 1, plots: bool = True) -> SweepResult:
    cells = sweep_cells(cfg, axes, seeds)
    log.info("sweep: %d cells over %s", len(cells), sorted(axes))
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell, cells, [plots] * len(cells)))
    else:
        rows = [_run_cell(c, plots) for c in cells]
    summary = summarize(rows)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "cells.csv", _csv(rows, CELL_COLUMNS))
    atomic_write_text(out / "summary.csv", _csv(summary, SUMMARY_COLUMNS))
    if plots and any(np.isfinite(s["auc_median"]) for s in summary):
        plotting.plot_sweep(summary, out / "summary.png")
    write_manifest(cfg, out, files=("cells.csv", "summary.csv"))
    n_failed = sum(r["status"] != "ok" for r in rows)
    return SweepResult(rows, summary, n_failed)


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in r:
            if k not in ("protocol", "ablation"):
                r[k] = float(r[k]) if k not in ("n", "n_failed") else int(r[k])
    return rows


def report_from_file(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))

