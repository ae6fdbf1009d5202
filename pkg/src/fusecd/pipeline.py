"""Experiment driver: dataset generation, fusion pretraining, adversarial
training, detection and evaluation, with a manifest that makes re-runs
idempotent (completed stages are skipped unless forced).

When the operators block carries a corruption entry, observations are
generated with the true operators while the generator (correction,
fusion, prediction) runs on the corrupted pair, reproducing the
mismatched-forward-model robustness scenario.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import numpy as np

from . import adversarial, datagen, detect, evaluate
from .config import ExperimentConfig, config_to_dict
from .core import make_rng
from .errors import ConfigError, NumericError
from .fusion import ModelBasedFusion, NeuralFusion, fuse, pretrain_fusion
from .io import write_cube, write_map
from .nn import critic_net, change_net, fusion_style_net, load_checkpoint, save_checkpoint
from .operators import DegradationPair, corrupt_operators

STAGES = ("gen", "pretrain", "train", "detect", "eval")
PRECISION = "float64"


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def true_operators(cfg: ExperimentConfig) -> DegradationPair:
    o = cfg.operators
    return DegradationPair.default(cfg.data.bands, blur_sigma=o.blur_sigma,
                                   subsample_factor=o.subsample_factor,
                                   spectral_width=o.spectral_width,
                                   kernel_radius=o.kernel_radius)


def model_operators(cfg: ExperimentConfig) -> DegradationPair:
    """Operators used inside the generator; corrupted when requested."""
    ops = true_operators(cfg)
    c = cfg.operators.corruption
    if c is None:
        return ops
    return corrupt_operators(ops, c.blur_sigma, c.snr_db, make_rng(c.seed, 3))


def generation_spec(cfg: ExperimentConfig) -> datagen.GenerationSpec:
    d = cfg.data
    return datagen.GenerationSpec(
        n_refs=d.refs, bands=d.bands, rows=d.rows, cols=d.cols, k=d.k, seed=d.seed,
        rules=tuple(d.rules), both_directions=d.both_directions,
        region_min_frac=d.region_min_frac, region_max_frac=d.region_max_frac,
        test_count=d.test_count, noise_sigma=d.noise_sigma,
        ref_paths=tuple(d.ref_paths),
    )


class Manifest:
    """Stage bookkeeping; every output artifact is declared here."""

    def __init__(self, out_dir: Path, cfg: ExperimentConfig):
        self.path = out_dir / "manifest.json"
        self.doc = {
            "config_hash": config_hash(cfg),
            "config": config_to_dict(cfg),
            "precision": PRECISION,
            "stages": {},
            "artifacts": {},
            "metrics": {},
        }
        if self.path.exists():
            old = json.loads(self.path.read_text())
            if old.get("config_hash") == self.doc["config_hash"]:
                self.doc = old

    def done(self, stage: str) -> bool:
        return self.doc["stages"].get(stage, {}).get("status") == "done"

    def mark(self, stage: str, seconds: float, artifacts: dict[str, str]) -> None:
        self.doc["stages"][stage] = {"status": "done", "seconds": round(seconds, 3)}
        self.doc["artifacts"].update(artifacts)
        self.save()

    def save(self) -> None:
        self.path.write_text(json.dumps(self.doc, indent=2, sort_keys=True))


def stage_plan(cfg: ExperimentConfig) -> list[str]:
    plan = ["gen"]
    if cfg.fusion.backend == "neural" and cfg.fusion.checkpoint is None:
        plan.append("pretrain")
    plan += ["train", "detect", "eval"]
    return plan


def run_pipeline(cfg: ExperimentConfig, out_dir, force: bool = False,
                 beta_override: float | None = None) -> dict:
    """Execute all stages into out_dir; returns the metrics block.

    Re-running with an unchanged config skips completed stages.  A failing
    stage raises with partial outputs preserved on disk.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if beta_override is not None:
        from dataclasses import replace
        cfg = ExperimentConfig(data=cfg.data, operators=cfg.operators, fusion=cfg.fusion,
                               train=replace(cfg.train, beta=beta_override),
                               detect=cfg.detect, eval=cfg.eval)
    manifest = Manifest(out_dir, cfg)

    data_dir = out_dir / "data"
    if force or not manifest.done("gen"):
        t0 = time.perf_counter()
        train_pairs, test_pairs = datagen.build_dataset(generation_spec(cfg), true_operators(cfg))
        datagen.save_dataset(data_dir, train_pairs, test_pairs,
                             {"seed": cfg.data.seed, "config_hash": manifest.doc["config_hash"]})
        manifest.mark("gen", time.perf_counter() - t0, {"data": str(data_dir)})
    train_pairs, test_pairs = datagen.load_dataset(data_dir)

    ops = model_operators(cfg)
    backend = _prepare_fusion(cfg, out_dir, manifest, train_pairs)

    ci_path = out_dir / "ci.nnw"
    critic_path = out_dir / "critic.nnw"
    log_path = out_dir / "training_log.csv"
    if force or not manifest.done("train"):
        t0 = time.perf_counter()
        tb = cfg.train
        ci = change_net(cfg.data.bands, ops.spectral.bands_out, cfg.data.bands,
                        factor=cfg.operators.subsample_factor, width=tb.width,
                        trunk_width=tb.trunk_width, trunk_depth=tb.trunk_depth)
        ci_params = ci.init_params(make_rng(tb.seed, 11))
        dnet = critic_net(cfg.data.bands, width=tb.critic_width)
        d_params = dnet.init_params(make_rng(tb.seed, 12))
        state = adversarial.GeneratorState(ci, ci_params, backend, ops)
        tcfg = adversarial.TrainConfig(alpha=tb.alpha, beta=tb.beta, lr=tb.lr,
                                       epochs=tb.epochs, batch=tb.batch, seed=tb.seed,
                                       adversarial=tb.adversarial,
                                       smooth_radius=cfg.detect.smooth_radius)
        try:
            log = adversarial.train(state, dnet, d_params, train_pairs, tcfg, val_pairs=test_pairs)
        finally:
            save_checkpoint(ci_path, ci, ci_params, meta={"role": "change_inference",
                                                          "precision": PRECISION})
            save_checkpoint(critic_path, dnet, d_params, meta={"role": "critic",
                                                               "precision": PRECISION})
        adversarial.write_training_log(log_path, log)
        manifest.mark("train", time.perf_counter() - t0,
                      {"ci": str(ci_path), "critic": str(critic_path), "training_log": str(log_path)})

    ci_net_loaded, ci_params_loaded, _ = load_checkpoint(ci_path)
    state = adversarial.GeneratorState(ci_net_loaded, ci_params_loaded, backend, ops)

    detect_dir = out_dir / "detect"
    if force or not manifest.done("detect"):
        t0 = time.perf_counter()
        detect_dir.mkdir(exist_ok=True)
        artifacts = {}
        for pair in test_pairs:
            tag = f"pair_{pair.meta['index']:04d}"
            ci_img = adversarial.infer_ci(state, pair.y1, pair.y2)
            e = detect.smooth(detect.cva_energy(ci_img), cfg.detect.smooth_radius)
            if cfg.detect.mode == "otsu":
                tau = detect.otsu_threshold(e)
            else:
                tau = float(cfg.detect.tau)
            cm = detect.threshold_map(e, tau)
            write_cube(detect_dir / f"{tag}_energy.hsc",
                       _energy_cube(e))
            write_map(detect_dir / f"{tag}.cm", cm)
            (detect_dir / f"{tag}_tau.json").write_text(json.dumps({"tau": tau}))
            artifacts[f"detect/{tag}"] = str(detect_dir / f"{tag}.cm")
        manifest.mark("detect", time.perf_counter() - t0, artifacts)

    if force or not manifest.done("eval"):
        t0 = time.perf_counter()
        records = []
        artifacts = {}
        for pair in test_pairs:
            if pair.rule == "none" or pair.d_ref.changed_count() == 0:
                continue
            tag = f"pair_{pair.meta['index']:04d}"
            ci_img = adversarial.infer_ci(state, pair.y1, pair.y2)
            e = detect.smooth(detect.cva_energy(ci_img), cfg.detect.smooth_radius)
            curve = evaluate.roc(e, pair.d_ref)
            if cfg.eval.write_roc:
                roc_path = out_dir / f"roc_{tag}.csv"
                evaluate.write_roc_csv(roc_path, curve)
                artifacts[f"roc/{tag}"] = str(roc_path)
            records.append({"pair": pair.meta["index"], "rule": pair.rule,
                            "auc": curve.auc, "dist": curve.dist})
        summary = evaluate.per_rule_summary(records)
        metrics = {"pairs": records, "per_rule": summary,
                   "mean_auc": float(np.mean([r["auc"] for r in records])) if records else float("nan")}
        (out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
        evaluate.write_summary_csv(out_dir / "summary.csv", summary)
        manifest.doc["metrics"] = metrics
        artifacts["metrics"] = str(out_dir / "metrics.json")
        artifacts["summary"] = str(out_dir / "summary.csv")
        manifest.mark("eval", time.perf_counter() - t0, artifacts)
    return manifest.doc["metrics"]


def _energy_cube(e: detect.EnergyMap):
    from .core import HyperImage
    return HyperImage(e.values[None, :, :])


def _prepare_fusion(cfg: ExperimentConfig, out_dir: Path, manifest: Manifest, train_pairs):
    fb = cfg.fusion
    if fb.backend == "model_based":
        return ModelBasedFusion(lam=fb.lam, cg_iters=fb.cg_iters, cg_tol=fb.cg_tol)
    if fb.checkpoint is not None:
        net, params, _ = load_checkpoint(fb.checkpoint)
        return NeuralFusion(net, params)
    ckpt = out_dir / "fusion.nnw"
    if not manifest.done("pretrain"):
        t0 = time.perf_counter()
        pretrain_set = [p for p in train_pairs if p.rule == "none"] or train_pairs
        net = _fusion_net_for(cfg)
        params = net.init_params(make_rng(fb.seed, 10))
        params, history = pretrain_fusion(net, params, pretrain_set, fb.epochs, fb.seed,
                                          lr=fb.lr, batch=fb.batch)
        save_checkpoint(ckpt, net, params, meta={"role": "fusion", "precision": PRECISION,
                                                 "loss_history": history})
        manifest.mark("pretrain", time.perf_counter() - t0, {"fusion": str(ckpt)})
    net, params, _ = load_checkpoint(ckpt)
    return NeuralFusion(net, params)


def _fusion_net_for(cfg: ExperimentConfig):
    fb = cfg.fusion
    m2 = cfg.data.bands // cfg.operators.spectral_width
    return fusion_style_net(cfg.data.bands, m2, cfg.data.bands,
                            factor=cfg.operators.subsample_factor, width=fb.width,
                            trunk_width=fb.trunk_width, trunk_depth=fb.trunk_depth)


def run_beta_grid(cfg: ExperimentConfig, out_dir, betas, force: bool = False) -> Path:
    """Ablation over the sparsity weight; emits one CSV row per (rule, beta)
    mirroring the sensitivity-table layout."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = {}
    for beta in betas:
        sub = out_dir / f"beta_{beta:g}"
        metrics = run_pipeline(cfg, sub, force=force, beta_override=beta)
        results[beta] = metrics["per_rule"]
    rules = sorted({r for per_rule in results.values() for r in per_rule})
    csv_path = out_dir / "ablation.csv"
    with open(csv_path, "w") as f:
        header = ",".join(f"beta={b:g}" for b in betas)
        f.write(f"rule,metric,{header}\n")
        for rule in rules:
            for metric in ("auc", "dist"):
                vals = ",".join(f"{results[b][rule][metric]:.6f}" if rule in results[b] else ""
                                for b in betas)
                f.write(f"{rule},{metric},{vals}\n")
    return csv_path
