"""Adversarial change-inference training.

The generator chains four stages: a change-inference network maps the
observation pair to a full-resolution change image, the correction stage
subtracts its spectral degradation from the HRLS observation, the frozen
fusion backend merges the corrected pair into a latent estimate, and the
prediction stage degrades that estimate back to the LRHS geometry.  A
critic network scores predicted against observed LRHS images; training
alternates one critic ascent step with one inference descent step per
minibatch, with gradients flowing through prediction, fusion (network
backprop or the implicit linear-solve rule) and correction back into the
inference network.  The inference loss adds a prediction term (squared
Frobenius mismatch) and a spatial-sparsity term (sum of per-pixel column
norms of the change image) to the adversarial term.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import detect, evaluate
from .core import HyperImage, group21_norm, make_rng
from .errors import NumericError
from .fusion import FusionBackend, ModelBasedFusion, NeuralFusion, fuse
from .nn import AdamState, Network, ParamStore, adam_step
from .operators import DegradationPair

SCORE_CLAMP = 1e-6


@dataclass
class GeneratorState:
    """Change-inference network plus the frozen fusion backend and the
    degradation operators it assumes."""

    ci_net: Network
    ci_params: ParamStore
    fusion: FusionBackend
    ops: DegradationPair


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0        # prediction-loss weight
    beta: float = 1e-3        # spatial-sparsity weight
    lr: float = 2e-4
    epochs: int = 15
    batch: int = 4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    adversarial: str = "nonsaturating"  # or "saturating"
    smooth_radius: int = 1              # for validation energy maps

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.adversarial not in ("nonsaturating", "saturating"):
            raise ValueError(f"unknown adversarial mode {self.adversarial!r}")


# ---------------------------------------------------------------------------
# Generator stages
# ---------------------------------------------------------------------------


def infer_ci(state: GeneratorState, y1: HyperImage, y2: HyperImage) -> HyperImage:
    """Estimated change image at full resolution; may be negative."""
    out, _ = state.ci_net.forward(state.ci_params, {"y_lo": y1.data, "y_hi": y2.data})
    return HyperImage(out)


def correct(y2: HyperImage, ci: HyperImage, ops: DegradationPair) -> HyperImage:
    """Corrected HRLS image: the observation minus the spectrally degraded
    change image, i.e. the HRLS view as it would look before the change."""
    return HyperImage(y2.data - ops.spectral.apply(ci.data))


def generate(state: GeneratorState, y1: HyperImage, y2: HyperImage
             ) -> tuple[HyperImage, HyperImage, HyperImage]:
    """Full generator pass; returns (predicted y1, fused latent, change image)."""
    ci = infer_ci(state, y1, y2)
    y2t = correct(y2, ci, state.ops)
    x1_hat = fuse(state.fusion, y1, y2t, state.ops)
    y1_hat = HyperImage(state.ops.spatial.apply(x1_hat.data))
    return y1_hat, x1_hat, ci


def discriminate(d_net: Network, d_params: ParamStore, image: HyperImage) -> float:
    """Score in (0,1): global mean of the critic's sigmoid map.  The alike
    decision is score >= 0.5."""
    out, _ = d_net.forward(d_params, {"y": image.data})
    return float(out.mean())


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _clamped_log(scores: np.ndarray) -> np.ndarray:
    return np.log(np.clip(scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP))


def losses(state: GeneratorState, d_net: Network, d_params: ParamStore,
           batch, cfg: TrainConfig) -> dict:
    """Batch losses (empirical means).

    adv    = mean log D(Y1) + mean log(1 - D(Y1_hat))
    pre    = mean ||Y1 - Y1_hat||_F^2
    spa    = mean ||CI||_{2,1}
    total_c = adversarial term for the inference net (non-saturating
              -mean log D(Y1_hat) by default) + alpha*pre + beta*spa
    total_d = -adv (the critic maximizes adv)
    """
    real, fake, pre, spa = [], [], [], []
    for pair in batch:
        y1_hat, _, ci = generate(state, pair.y1, pair.y2)
        real.append(discriminate(d_net, d_params, pair.y1))
        fake.append(discriminate(d_net, d_params, y1_hat))
        diff = pair.y1.data - y1_hat.data
        pre.append(float(np.sum(diff * diff)))
        spa.append(group21_norm(ci))
    real_a, fake_a = np.array(real), np.array(fake)
    l_adv = float(np.mean(_clamped_log(real_a)) + np.mean(_clamped_log(1.0 - fake_a)))
    l_pre = float(np.mean(pre))
    l_spa = float(np.mean(spa))
    if cfg.adversarial == "nonsaturating":
        c_adv = float(-np.mean(_clamped_log(fake_a)))
    else:
        c_adv = float(np.mean(_clamped_log(1.0 - fake_a)))
    return {
        "adv": l_adv, "pre": l_pre, "spa": l_spa,
        "total_c": c_adv + cfg.alpha * l_pre + cfg.beta * l_spa,
        "total_d": -l_adv,
    }


def group21_grad(ci: np.ndarray) -> np.ndarray:
    """Subgradient of the per-pixel column-norm sum (zero on zero columns)."""
    cols = ci.reshape(ci.shape[0], -1)
    norms = np.sqrt(np.sum(cols * cols, axis=0))
    return (cols / np.maximum(norms, 1e-12)[None, :]).reshape(ci.shape)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class _Forward:
    """Cached per-sample generator pass used by both alternating steps."""

    ci: np.ndarray
    ci_tape: dict
    y2t: np.ndarray
    x_pre: np.ndarray          # fusion output before the nonnegativity clamp
    x1_hat: np.ndarray
    y1_hat: np.ndarray
    fusion_tape: dict | None   # neural backend only


def _forward_sample(state: GeneratorState, pair) -> _Forward:
    ci, ci_tape = state.ci_net.forward(state.ci_params, {"y_lo": pair.y1.data, "y_hi": pair.y2.data})
    y2t = pair.y2.data - state.ops.spectral.apply(ci)
    if isinstance(state.fusion, ModelBasedFusion):
        x_pre, _ = state.fusion.solve(pair.y1.data, y2t, state.ops)
        fusion_tape = None
    else:
        x_pre, fusion_tape = state.fusion.forward(pair.y1.data, y2t)
    x1_hat = np.maximum(x_pre, 0.0)
    y1_hat = state.ops.spatial.apply(x1_hat)
    return _Forward(ci, ci_tape, y2t, x_pre, x1_hat, y1_hat, fusion_tape)


def _score(d_net, d_params, arr):
    out, tape = d_net.forward(d_params, {"y": arr})
    return float(out.mean()), out, tape


def _score_grad_to_params(d_net, d_params, tape, out, dscore, grads):
    """Accumulate critic parameter grads for d(loss)/d(score) = dscore."""
    g, _ = d_net.backward(d_params, tape, np.full_like(out, dscore / out.size))
    grads.add_scaled(g, 1.0)


def _score_grad_to_input(d_net, d_params, tape, out, dscore):
    _, igrads = d_net.backward(d_params, tape, np.full_like(out, dscore / out.size))
    return igrads["y"]


def _interior(s: float) -> bool:
    return SCORE_CLAMP < s < 1.0 - SCORE_CLAMP


def train(state: GeneratorState, d_net: Network, d_params: ParamStore, train_pairs,
          cfg: TrainConfig, val_pairs=()) -> list[dict]:
    """Alternating minimax training.

    Per batch: one critic ascent step on the adversarial objective, then
    one inference descent step on the combined objective (fusion frozen).
    The generator pass is computed once per batch with the current
    inference parameters and shared by both steps, which is exact because
    the critic update does not touch the generator.  Returns the per-epoch
    log (losses averaged over the epoch's batches plus validation AUC).

    Raises NumericError on divergence; the caller still holds the latest
    parameters for checkpointing.  Emits a warning if the critic's scores
    stay saturated at the clamp bounds for a whole epoch.
    """
    adam_c = AdamState.for_params(state.ci_params)
    adam_d = AdamState.for_params(d_params)
    rng = make_rng(cfg.seed, 17)
    n = len(train_pairs)
    log: list[dict] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sums = {"adv": 0.0, "pre": 0.0, "spa": 0.0, "total_c": 0.0, "total_d": 0.0}
        nbatch = 0
        all_saturated = True
        for start in range(0, n, cfg.batch):
            idx = order[start : start + cfg.batch]
            pairs = [train_pairs[i] for i in idx]
            fwd = [_forward_sample(state, p) for p in pairs]
            b = len(pairs)

            # -- critic ascent -------------------------------------------------
            d_grads = d_params.zeros_like()
            real_logs, fake_logs = [], []
            for p, f in zip(pairs, fwd):
                sr, out_r, tape_r = _score(d_net, d_params, p.y1.data)
                sf, out_f, tape_f = _score(d_net, d_params, f.y1_hat)
                if _interior(sr):
                    # minimize -log D(Y1): d/ds = -1/s, averaged over batch
                    _score_grad_to_params(d_net, d_params, tape_r, out_r, -1.0 / (b * sr), d_grads)
                if _interior(sf):
                    # minimize -log(1 - D(Y1_hat)): d/ds = 1/(1-s)
                    _score_grad_to_params(d_net, d_params, tape_f, out_f, 1.0 / (b * (1.0 - sf)), d_grads)
                if _interior(sr) or _interior(sf):
                    all_saturated = False
                real_logs.append(float(_clamped_log(np.array([sr]))[0]))
                fake_logs.append(float(_clamped_log(np.array([1.0 - sf]))[0]))
            l_adv = float(np.mean(real_logs) + np.mean(fake_logs))
            adam_step(d_params, d_grads, adam_d, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)

            # -- inference descent --------------------------------------------
            c_grads = state.ci_params.zeros_like()
            l_pre = 0.0
            l_spa = 0.0
            c_adv_terms = []
            for p, f in zip(pairs, fwd):
                sf, out_f, tape_f = _score(d_net, d_params, f.y1_hat)
                if cfg.adversarial == "nonsaturating":
                    c_adv_terms.append(-float(_clamped_log(np.array([sf]))[0]))
                    dscore = -1.0 / (b * sf) if _interior(sf) else 0.0
                else:
                    c_adv_terms.append(float(_clamped_log(np.array([1.0 - sf]))[0]))
                    dscore = -1.0 / (b * (1.0 - sf)) if _interior(sf) else 0.0
                g_y1hat = _score_grad_to_input(d_net, d_params, tape_f, out_f, dscore)
                diff = f.y1_hat - p.y1.data
                l_pre += float(np.sum(diff * diff)) / b
                g_y1hat = g_y1hat + cfg.alpha * 2.0 * diff / b
                # prediction -> fused latent
                g_x1hat = state.ops.spatial.adjoint(g_y1hat)
                g_xpre = np.where(f.x_pre > 0.0, g_x1hat, 0.0)
                # fused latent -> corrected image
                if isinstance(state.fusion, ModelBasedFusion):
                    g_y2t, _ = state.fusion.input_grad(g_xpre, state.ops)
                else:
                    g_y2t = state.fusion.input_grad(f.fusion_tape, g_xpre)
                # corrected image -> change image (Y2t = Y2 - H2 ci)
                g_ci = -state.ops.spectral.adjoint(g_y2t)
                l_spa += group21_norm(f.ci) / b
                g_ci = g_ci + cfg.beta * group21_grad(f.ci) / b
                g, _ = state.ci_net.backward(state.ci_params, f.ci_tape, g_ci)
                c_grads.add_scaled(g, 1.0)
            adam_step(state.ci_params, c_grads, adam_c, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)

            c_adv = float(np.mean(c_adv_terms))
            total_c = c_adv + cfg.alpha * l_pre + cfg.beta * l_spa
            if not np.isfinite(total_c) or not np.isfinite(l_adv):
                raise NumericError(f"training diverged at epoch {epoch} (total_c={total_c})")
            sums["adv"] += l_adv
            sums["pre"] += l_pre
            sums["spa"] += l_spa
            sums["total_c"] += total_c
            sums["total_d"] += -l_adv
            nbatch += 1
        if all_saturated:
            warnings.warn(f"critic scores saturated for the whole of epoch {epoch}", UserWarning)
        row = {"epoch": epoch, **{k: v / nbatch for k, v in sums.items()}}
        row["val_auc"] = validation_auc(state, val_pairs, cfg.smooth_radius) if val_pairs else float("nan")
        log.append(row)
    return log


def validation_auc(state: GeneratorState, pairs, smooth_radius: int = 1) -> float:
    """Mean ROC area over pairs that carry a nondegenerate reference map."""
    aucs = []
    for pair in pairs:
        if pair.d_ref.changed_count() in (0, pair.d_ref.data.size):
            continue
        ci = infer_ci(state, pair.y1, pair.y2)
        e = detect.smooth(detect.cva_energy(ci), smooth_radius)
        aucs.append(evaluate.roc(e, pair.d_ref).auc)
    return float(np.mean(aucs)) if aucs else float("nan")


def write_training_log(path, log: list[dict]) -> None:
    with open(path, "w") as f:
        f.write("epoch,adv,pre,spa,total_c,total_d,val_auc\n")
        for row in log:
            f.write(f"{row['epoch']},{row['adv']:.10g},{row['pre']:.10g},{row['spa']:.10g},"
                    f"{row['total_c']:.10g},{row['total_d']:.10g},{row['val_auc']:.10g}\n")
