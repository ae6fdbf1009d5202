"""Command-line experiment driver.

Subcommands: gen, pretrain-fusion, train, fuse, detect, eval, report,
run, gradcheck.  Exit codes: 0 success, 2 config error, 3 numeric
failure, 4 I/O error.  The FUSECD_THREADS environment variable sets the
default of --threads; all numerics run sequentially, so 1 (reference
mode) and N produce identical results.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import adversarial, datagen, detect, evaluate, pipeline
from .config import load_config
from .errors import ConfigError, NumericError
from .fusion import ModelBasedFusion, NeuralFusion, fuse
from .io import read_cube, read_map, write_cube, write_map
from .nn import load_checkpoint


def _add_common(p):
    p.add_argument("--threads", type=int, default=int(os.environ.get("FUSECD_THREADS", "1")),
                   help="worker threads (1 = reference mode; results are identical)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fusecd",
                                 description="fusion-based change detection toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    _add_common(g)

    pf = sub.add_parser("pretrain-fusion", help="pretrain the neural fusion network")
    pf.add_argument("--config", required=True)
    pf.add_argument("--data", required=True, help="dataset directory from 'gen'")
    pf.add_argument("--out", required=True, help="output checkpoint (.nnw)")
    _add_common(pf)

    t = sub.add_parser("train", help="adversarial change-inference training")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--fusion", required=True,
                   help="'model_based' or a fusion checkpoint path")
    t.add_argument("--out", required=True, help="output directory")
    _add_common(t)

    f = sub.add_parser("fuse", help="fuse one observation pair")
    f.add_argument("--config", required=True)
    f.add_argument("--y1", required=True)
    f.add_argument("--y2", required=True)
    f.add_argument("--fusion", required=True)
    f.add_argument("--out", required=True)
    _add_common(f)

    d = sub.add_parser("detect", help="change image -> binary change map")
    d.add_argument("--ci", required=True, help="change image (.hsc)")
    d.add_argument("--tau", type=float, default=None)
    d.add_argument("--otsu", action="store_true")
    d.add_argument("--smooth", type=int, default=0, help="median smoothing radius")
    d.add_argument("--out", required=True)
    _add_common(d)

    e = sub.add_parser("eval", help="ROC/AUC/dist of an energy map against a reference")
    e.add_argument("--energy", required=True, help="energy map as a 1-band .hsc")
    e.add_argument("--ref", required=True, help="reference change map (.cm)")
    e.add_argument("--out", required=True, help="output CSV")
    _add_common(e)

    r = sub.add_parser("report", help="aggregate per-rule metrics from run directories")
    r.add_argument("dirs", nargs="+", help="run directories containing metrics.json")
    r.add_argument("--out", required=True)
    _add_common(r)

    run = sub.add_parser("run", help="full pipeline: gen/pretrain/train/detect/eval")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--force", action="store_true", help="re-run completed stages")
    run.add_argument("--dry-run", action="store_true",
                     help="validate the config and print the stage plan")
    run.add_argument("--beta-grid", default=None,
                     help="comma-separated sparsity weights for an ablation sweep")
    _add_common(run)

    gc = sub.add_parser("gradcheck", help="finite-difference diagnostics for the network kernel")
    gc.add_argument("--seed", type=int, default=0)
    _add_common(gc)
    return ap


def cmd_gen(args) -> int:
    cfg = load_config(args.config)
    train_pairs, test_pairs = datagen.build_dataset(
        pipeline.generation_spec(cfg), pipeline.true_operators(cfg))
    datagen.save_dataset(args.out, train_pairs, test_pairs, {"seed": cfg.data.seed})
    print(f"wrote {len(train_pairs)} train / {len(test_pairs)} test pairs to {args.out}")
    return 0


def cmd_pretrain_fusion(args) -> int:
    from .core import make_rng
    from .fusion import pretrain_fusion
    from .nn import save_checkpoint
    cfg = load_config(args.config)
    train_pairs, _ = datagen.load_dataset(args.data)
    pretrain_set = [p for p in train_pairs if p.rule == "none"] or train_pairs
    net = pipeline._fusion_net_for(cfg)
    params = net.init_params(make_rng(cfg.fusion.seed, 10))
    params, history = pretrain_fusion(net, params, pretrain_set, cfg.fusion.epochs,
                                      cfg.fusion.seed, lr=cfg.fusion.lr, batch=cfg.fusion.batch)
    save_checkpoint(args.out, net, params, meta={"role": "fusion", "loss_history": history})
    print(f"pretrained fusion over {cfg.fusion.epochs} epochs; "
          f"final loss {history[-1]:.6g}" if history else "zero-epoch pretraining: wrote init")
    return 0


def _fusion_backend(cfg, spec: str):
    if spec == "model_based":
        fb = cfg.fusion
        return ModelBasedFusion(lam=fb.lam, cg_iters=fb.cg_iters, cg_tol=fb.cg_tol)
    net, params, _ = load_checkpoint(spec)
    return NeuralFusion(net, params)


def cmd_train(args) -> int:
    from .core import make_rng
    from .nn import change_net, critic_net, save_checkpoint
    cfg = load_config(args.config)
    train_pairs, test_pairs = datagen.load_dataset(args.data)
    ops = pipeline.model_operators(cfg)
    backend = _fusion_backend(cfg, args.fusion)
    tb = cfg.train
    ci = change_net(cfg.data.bands, ops.spectral.bands_out, cfg.data.bands,
                    factor=cfg.operators.subsample_factor, width=tb.width,
                    trunk_width=tb.trunk_width, trunk_depth=tb.trunk_depth)
    ci_params = ci.init_params(make_rng(tb.seed, 11))
    dnet = critic_net(cfg.data.bands, width=tb.critic_width)
    d_params = dnet.init_params(make_rng(tb.seed, 12))
    state = adversarial.GeneratorState(ci, ci_params, backend, ops)
    tcfg = adversarial.TrainConfig(alpha=tb.alpha, beta=tb.beta, lr=tb.lr, epochs=tb.epochs,
                                   batch=tb.batch, seed=tb.seed, adversarial=tb.adversarial,
                                   smooth_radius=cfg.detect.smooth_radius)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        log = adversarial.train(state, dnet, d_params, train_pairs, tcfg, val_pairs=test_pairs)
    finally:
        save_checkpoint(out / "ci.nnw", ci, ci_params, meta={"role": "change_inference"})
        save_checkpoint(out / "critic.nnw", dnet, d_params, meta={"role": "critic"})
    adversarial.write_training_log(out / "training_log.csv", log)
    print(f"trained {tb.epochs} epochs; final val AUC {log[-1]['val_auc']:.4f}")
    return 0


def cmd_fuse(args) -> int:
    cfg = load_config(args.config)
    ops = pipeline.model_operators(cfg)
    backend = _fusion_backend(cfg, args.fusion)
    y1 = read_cube(args.y1)
    y2 = read_cube(args.y2)
    write_cube(args.out, fuse(backend, y1, y2, ops))
    print(f"wrote fused cube to {args.out}")
    return 0


def cmd_detect(args) -> int:
    if args.otsu == (args.tau is not None):
        raise ConfigError("choose exactly one of --otsu or --tau")
    ci = read_cube(args.ci)
    e = detect.smooth(detect.cva_energy(ci), args.smooth)
    tau = detect.otsu_threshold(e) if args.otsu else args.tau
    write_map(args.out, detect.threshold_map(e, tau))
    print(f"tau={tau:.6g}; wrote change map to {args.out}")
    return 0


def cmd_eval(args) -> int:
    cube = read_cube(args.energy)
    if cube.bands != 1:
        raise ConfigError(f"energy map must be a 1-band cube, got {cube.bands} bands")
    e = detect.EnergyMap(cube.data[0])
    curve = evaluate.roc(e, read_map(args.ref))
    evaluate.write_roc_csv(args.out, curve)
    print(f"auc={curve.auc:.6f} dist={curve.dist:.6f}; wrote {args.out}")
    return 0


def cmd_report(args) -> int:
    records = []
    for d in args.dirs:
        metrics = json.loads((Path(d) / "metrics.json").read_text())
        records.extend(metrics["pairs"])
    summary = evaluate.per_rule_summary(records)
    evaluate.write_summary_csv(args.out, summary)
    for rule, s in summary.items():
        print(f"{rule}: auc={s['auc']:.4f} dist={s['dist']:.4f} (n={int(s['count'])})")
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.dry_run:
        plan = pipeline.stage_plan(cfg)
        print(f"config ok (hash {pipeline.config_hash(cfg)})")
        print("stage plan: " + " -> ".join(plan))
        return 0
    if args.beta_grid:
        betas = [float(b) for b in args.beta_grid.split(",")]
        csv_path = pipeline.run_beta_grid(cfg, args.out, betas, force=args.force)
        print(f"wrote ablation table to {csv_path}")
        return 0
    metrics = pipeline.run_pipeline(cfg, args.out, force=args.force)
    for rule, s in metrics["per_rule"].items():
        print(f"{rule}: auc={s['auc']:.4f} dist={s['dist']:.4f} (n={int(s['count'])})")
    return 0


def cmd_gradcheck(args) -> int:
    from .diagnostics import run_gradcheck
    ok = run_gradcheck(seed=args.seed, verbose=True)
    return 0 if ok else 3


_HANDLERS = {
    "gen": cmd_gen,
    "pretrain-fusion": cmd_pretrain_fusion,
    "train": cmd_train,
    "fuse": cmd_fuse,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "report": cmd_report,
    "run": cmd_run,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
