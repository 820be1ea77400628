"""Experiment orchestration: train, evaluate, and emit artifacts.

A run writes ``metrics.csv`` (one row per step), ``checkpoint.bin``,
``report.json``, and the report figures into its output directory. A
non-finite loss aborts with a diagnostic snapshot artifact instead.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .config import OUT_DIR_ENV, RunConfig, serialize_config
from .data import LabeledData, load_csv, make_gaussian_clusters, write_csv
from .diagnostics import CollapseReport, collapse_report, nmi
from .dictionary import sample_dictionary
from .figures import render_report_figures
from .losses import Prior
from .optim import Adam
from .optimality import Lemma1Report, check_lemma1
from .projector import ProjectorParams, clip_probabilities, code_probabilities, embed, temperature
from .trainer import (
    DataError,
    MLPBackbone,
    TrainingDiverged,
    augment,
    linear_probe,
    save_checkpoint,
    train_step,
)

METRICS_HEADER = "step,invariance,prior_matching,total,lower_bound"


def resolve_out_dir(explicit: str | None, cfg_out_dir: str) -> Path:
    if explicit:
        return Path(explicit)
    if cfg_out_dir:
        return Path(cfg_out_dir)
    return Path(os.environ.get(OUT_DIR_ENV, "runs"))


def load_dataset(cfg: RunConfig) -> LabeledData:
    if cfg.dataset == "synthetic":
        return make_gaussian_clusters(cfg.synth_clusters, cfg.synth_dim,
                                      cfg.synth_per_cluster, cfg.synth_spread,
                                      cfg.data_seed)
    return load_csv(cfg.dataset)


@dataclass
class RunReport:
    config: dict
    seeds: dict
    per_epoch: list[dict]
    lemma: dict | None
    collapse: dict | None
    nmi_codes_vs_labels: float | None
    probe_accuracy: float | None
    final_loss: float
    floored_steps: int
    representation_stats: dict
    parameter_count: int
    wall_clock_seconds: float
    figures: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        doc = {
            "config": self.config,
            "seeds": self.seeds,
            "per_epoch": self.per_epoch,
            "lemma": self.lemma,
            "collapse": self.collapse,
            "nmi_codes_vs_labels": self.nmi_codes_vs_labels,
            "probe_accuracy": self.probe_accuracy,
            "final_loss": self.final_loss,
            "floored_steps": self.floored_steps,
            "representation_stats": self.representation_stats,
            "parameter_count": self.parameter_count,
            "wall_clock_seconds": self.wall_clock_seconds,
            "figures": self.figures,
        }
        _require_finite(doc, "report")
        return doc


def _require_finite(node, where: str) -> None:
    if isinstance(node, dict):
        for key, value in node.items():
            _require_finite(value, f"{where}.{key}")
    elif isinstance(node, (list, tuple)):
        for i, value in enumerate(node):
            _require_finite(value, f"{where}[{i}]")
    elif isinstance(node, float) and not math.isfinite(node):
        raise ValueError(f"non-finite value in report at {where}: {node}")


def _lemma_to_dict(report: Lemma1Report) -> dict:
    return {
        "invariance_residual": float(report.invariance_residual),
        "extrema_residual": float(report.extrema_residual),
        "prior_residual": float(report.prior_residual),
        "count_per_code": [int(v) for v in report.count_per_code],
        "expected_count_per_code": [float(v) for v in report.expected_count_per_code],
        "row_max_min": float(report.row_max_min),
        "loss_gap": float(report.loss_gap) if math.isfinite(report.loss_gap) else None,
        "converged": bool(report.converged),
        "cluster_collapse": bool(report.cluster_collapse),
    }


def _format_row(step: int, inv: float, prior: float, total: float, bound: float) -> str:
    return f"{step},{inv:.17g},{prior:.17g},{total:.17g},{bound:.17g}"


def run_train(cfg: RunConfig, out_dir: str | None = None) -> RunReport:
    """Train per the config, then evaluate and write all artifacts."""
    started = time.monotonic()
    out_path = resolve_out_dir(out_dir, cfg.out_dir)
    out_path.mkdir(parents=True, exist_ok=True)

    data = load_dataset(cfg)
    if data.dim != cfg.f and cfg.hidden == ():
        raise DataError(f"dataset dim {data.dim} incompatible with linear backbone f={cfg.f}")
    if cfg.dataset == "synthetic":
        write_csv(data, out_path / "dataset.csv")
    if data.m < cfg.batch:
        raise DataError(f"dataset has {data.m} rows, fewer than batch size {cfg.batch}")

    train_cfg = cfg.train_config()
    prior = train_cfg.resolved_prior()
    dictionary = sample_dictionary(cfg.f, cfg.c, cfg.dict_seed)
    seed_root = np.random.SeedSequence(cfg.train_seed)
    s_backbone, s_projector, s_loop, s_eval = (int(s.generate_state(1)[0])
                                               for s in seed_root.spawn(4))
    backbone = MLPBackbone([data.dim, *cfg.hidden, cfg.f], seed=s_backbone)
    projector = ProjectorParams(cfg.f, activation=cfg.activation, seed=s_projector)
    optimizer = Adam(backbone.parameters() + projector.parameters(), lr=cfg.lr)

    loop_rng = np.random.default_rng(s_loop)
    steps_per_epoch = data.m // cfg.batch
    metrics_lines = [METRICS_HEADER]
    metrics_rows: list[dict] = []
    per_epoch: list[dict] = []
    floored_steps = 0
    max_abs_mean = 0.0
    max_std = 0.0
    step = 0

    try:
        for epoch in range(cfg.epochs):
            perm = loop_rng.permutation(data.m)
            first_batch = data.features[perm[:cfg.batch]]
            z_probe = backbone.forward(Tensor(first_batch)).data
            max_abs_mean = max(max_abs_mean, float(np.abs(z_probe.mean(axis=0)).max()))
            max_std = max(max_std, float(z_probe.std(axis=0).max()))

            epoch_losses = []
            for b in range(steps_per_epoch):
                batch = Tensor(data.features[perm[b * cfg.batch:(b + 1) * cfg.batch]])
                step_seed = int(loop_rng.integers(2 ** 63))
                breakdown = train_step(batch, backbone, projector, dictionary, train_cfg,
                                       optimizer, step_seed)
                step += 1
                if breakdown.floored:
                    floored_steps += 1
                metrics_lines.append(_format_row(step, breakdown.invariance,
                                                 breakdown.prior_matching, breakdown.total,
                                                 breakdown.lower_bound))
                metrics_rows.append({"step": step, "invariance": breakdown.invariance,
                                     "prior_matching": breakdown.prior_matching,
                                     "total": breakdown.total,
                                     "lower_bound": breakdown.lower_bound})
                epoch_losses.append((breakdown.invariance, breakdown.prior_matching,
                                     breakdown.total))
            arr = np.array(epoch_losses)
            per_epoch.append({"epoch": epoch, "invariance": float(arr[:, 0].mean()),
                              "prior_matching": float(arr[:, 1].mean()),
                              "total": float(arr[:, 2].mean())})
    except TrainingDiverged as diverged:
        abort_doc = {"error": str(diverged), "snapshot": diverged.snapshot,
                     "completed_steps": step}
        (out_path / "abort.json").write_text(json.dumps(abort_doc, indent=2),
                                             encoding="utf-8")
        raise

    (out_path / "metrics.csv").write_text("\n".join(metrics_lines) + "\n", encoding="utf-8")
    config_text = serialize_config(cfg)
    save_checkpoint(out_path / "checkpoint.bin", config_text, dictionary, backbone,
                    projector, optimizer)

    # -- evaluation on the full dataset ------------------------------------
    z_full = backbone.forward(Tensor(data.features))
    h_full = embed(z_full, projector)
    tau_full = temperature(cfg.f, data.m, cfg.c, cfg.epsilon)
    p_full = code_probabilities(h_full, dictionary, tau_full)
    assignments = np.argmax(p_full.values, axis=1)

    labeled = data.labels >= 0
    nmi_value = None
    if labeled.any():
        nmi_value = nmi(assignments[labeled], data.labels[labeled])

    lemma_doc = None
    if cfg.run_lemma_check:
        eval_rng = np.random.default_rng(s_eval)
        idx = eval_rng.choice(data.m, size=cfg.batch, replace=False)
        held = Tensor(data.features[idx])
        view_a, view_b = augment(held, train_cfg.augment,
                                 int(eval_rng.integers(2 ** 63)))
        tau_batch = temperature(cfg.f, cfg.batch, cfg.c, cfg.epsilon)
        p_a = code_probabilities(embed(backbone.forward(view_a), projector), dictionary,
                                 tau_batch)
        p_b = code_probabilities(embed(backbone.forward(view_b), projector), dictionary,
                                 tau_batch)
        lemma_report = check_lemma1(clip_probabilities(p_a, cfg.epsilon),
                                    clip_probabilities(p_b, cfg.epsilon), prior, cfg.epsilon)
        lemma_doc = _lemma_to_dict(lemma_report)

    collapse_doc = None
    collapse: CollapseReport | None = None
    if cfg.run_diagnostics:
        collapse = collapse_report(h_full, p_full, z_full, dictionary,
                                   component_grid=cfg.gmm_components,
                                   mc_samples=cfg.gmm_samples, seed=cfg.train_seed)
        collapse_doc = collapse.to_json_dict()

    probe_accuracy = None
    if cfg.run_probe and labeled.any():
        classes = int(data.labels[labeled].max()) + 1
        probe_accuracy = linear_probe(z_full.data[labeled], data.labels[labeled], classes,
                                      epochs=cfg.probe_epochs, lr=cfg.probe_lr,
                                      seed=cfg.train_seed, holdout=cfg.probe_holdout)

    figure_paths: list[str] = []
    if cfg.figures:
        figure_paths = [str(p.name) for p in render_report_figures(
            metrics_rows, collapse, h_full.values, assignments, out_path)]

    report = RunReport(
        config={f.name: (list(v) if isinstance(v := getattr(cfg, f.name), tuple) else v)
                for f in cfg.__dataclass_fields__.values()},
        seeds={"dictionary": cfg.dict_seed, "data": cfg.data_seed, "training": cfg.train_seed},
        per_epoch=per_epoch,
        lemma=lemma_doc,
        collapse=collapse_doc,
        nmi_codes_vs_labels=nmi_value,
        probe_accuracy=probe_accuracy,
        final_loss=metrics_rows[-1]["total"] if metrics_rows else math.nan,
        floored_steps=floored_steps,
        representation_stats={"max_abs_feature_mean": max_abs_mean,
                              "max_feature_std": max_std},
        parameter_count=backbone.parameter_count()
        + sum(p.data.size for p in projector.parameters()),
        wall_clock_seconds=time.monotonic() - started,
        figures=figure_paths,
    )
    (out_path / "report.json").write_text(json.dumps(report.to_json_dict(), indent=2,
                                                     sort_keys=True), encoding="utf-8")
    return report


def diagnose_checkpoint(checkpoint_path, data_path: str | None,
                        out_dir: str | None = None) -> dict:
    """Re-run the collapse diagnostics for a saved checkpoint."""
    from .config import parse_config
    from .trainer import load_checkpoint

    ckpt = load_checkpoint(checkpoint_path)
    cfg = parse_config(ckpt.config_text, source=str(checkpoint_path))
    if data_path is not None:
        data = load_csv(data_path)
    else:
        data = load_dataset(cfg)
    out_path = resolve_out_dir(out_dir, cfg.out_dir)
    out_path.mkdir(parents=True, exist_ok=True)

    z_full = ckpt.backbone.forward(Tensor(data.features))
    h_full = embed(z_full, ckpt.projector)
    tau = temperature(cfg.f, data.m, cfg.c, cfg.epsilon)
    p_full = code_probabilities(h_full, ckpt.dictionary, tau)
    assignments = np.argmax(p_full.values, axis=1)
    collapse = collapse_report(h_full, p_full, z_full, ckpt.dictionary,
                               component_grid=cfg.gmm_components,
                               mc_samples=cfg.gmm_samples, seed=cfg.train_seed)
    doc = {"collapse": collapse.to_json_dict()}
    labeled = data.labels >= 0
    if labeled.any():
        doc["nmi_codes_vs_labels"] = nmi(assignments[labeled], data.labels[labeled])
    if cfg.figures:
        doc["figures"] = [str(p.name) for p in render_report_figures(
            [], collapse, h_full.values, assignments, out_path)]
    _require_finite(doc, "diagnostics")
    (out_path / "diagnostics.json").write_text(json.dumps(doc, indent=2, sort_keys=True),
                                               encoding="utf-8")
    return doc


def probe_checkpoint(checkpoint_path, data_path, epochs: int | None = None,
                     lr: float | None = None, seed: int | None = None) -> float:
    """Linear probe of a checkpoint's representations on a labeled CSV."""
    from .config import parse_config
    from .trainer import load_checkpoint

    ckpt = load_checkpoint(checkpoint_path)
    cfg = parse_config(ckpt.config_text, source=str(checkpoint_path))
    data = load_csv(data_path)
    labeled = data.labels >= 0
    if not labeled.any():
        raise DataError(f"{data_path}: no labeled rows to probe with")
    z = ckpt.backbone.forward(Tensor(data.features[labeled]))
    classes = int(data.labels[labeled].max()) + 1
    return linear_probe(z.data, data.labels[labeled], classes,
                        epochs=cfg.probe_epochs if epochs is None else epochs,
                        lr=cfg.probe_lr if lr is None else lr,
                        seed=cfg.train_seed if seed is None else seed,
                        holdout=cfg.probe_holdout)
