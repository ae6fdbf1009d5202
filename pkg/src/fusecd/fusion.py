"""Pluggable fusion stage: merge one LRHS and one HRLS observation into a
full-resolution cube.

Two interchangeable backends sit behind the same call signature, so the
adversarial trainer runs unmodified with either:

* model_based -- Tikhonov-regularized least squares solved by conjugate
  gradient on the normal equations.  The regularizer weight is given
  relative to the data-term scale (mean diagonal of the normal operator),
  making the default meaningful across image sizes.  Because the solution
  solves a linear system, its input sensitivities come from one extra CG
  solve with the same system (implicit-function rule), which keeps the
  backend differentiable end to end.
* neural -- a fusion-topology network (see nn.builders) applied to the
  observation pair; pretrained on no-change pairs, frozen afterwards.

Both backends return nonnegative cubes; the model-based one clamps after
the solve, the neural one ends in a ReLU.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import HyperImage, make_rng
from .errors import NumericError
from .nn import AdamState, Network, ParamStore, adam_step
from .operators import DegradationPair

__all__ = [
    "ModelBasedFusion", "NeuralFusion", "fuse", "consistency",
    "pretrain_fusion", "conjugate_gradient",
]


def conjugate_gradient(apply_a, b: np.ndarray, tol: float = 1e-8, maxiter: int = 500,
                       x0: np.ndarray | None = None):
    """CG for SPD apply_a; stops at ||r||/||b|| <= tol or maxiter.

    Returns (x, info) with info = {converged, iterations, rel_residual,
    residual_history}.
    """
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - apply_a(x) if x0 is not None else b.copy()
    p = r.copy()
    bnorm = float(np.sqrt(np.vdot(b, b).real))
    if bnorm == 0.0:
        return np.zeros_like(b), {"converged": True, "iterations": 0,
                                  "rel_residual": 0.0, "residual_history": [0.0]}
    rs = float(np.vdot(r, r).real)
    history = [np.sqrt(rs) / bnorm]
    it = 0
    while it < maxiter and history[-1] > tol:
        ap = apply_a(p)
        denom = float(np.vdot(p, ap).real)
        if denom <= 0.0:
            break
        alpha = rs / denom
        # in-place axpy updates; p is rebuilt from r after the beta scale
        x += alpha * p
        r -= alpha * ap
        rs_new = float(np.vdot(r, r).real)
        p *= rs_new / rs
        p += r
        rs = rs_new
        history.append(np.sqrt(rs) / bnorm)
        it += 1
    return x, {"converged": history[-1] <= tol, "iterations": it,
               "rel_residual": history[-1], "residual_history": history}


def _normal_gram(ops: DegradationPair, rows: int, cols: int):
    """Gram factors of the normal operator: H1^T H1 acts separably through
    (R^T R, C^T C) and H2^T H2 through L^T L, so one CG iteration costs two
    stacked matmuls and one GEMM."""
    rm, cm = ops.spatial._matrices(rows, cols)
    ltl = ops.spectral.response.T @ ops.spectral.response
    return rm.T @ rm, cm.T @ cm, ltl


@dataclass(frozen=True)
class ModelBasedFusion:
    """Tikhonov least-squares fusion; lam is relative to the data-term scale."""

    lam: float = 1e-4
    cg_iters: int = 500
    cg_tol: float = 1e-8

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")

    def lam_effective(self, ops: DegradationPair, bands: int, rows: int, cols: int) -> float:
        scale = (ops.spatial.frob2(rows, cols, bands)
                 + ops.spectral.frob2(rows * cols)) / (bands * rows * cols)
        return self.lam * scale

    def _apply_a(self, ops: DegradationPair, bands: int, rows: int, cols: int):
        lam = self.lam_effective(ops, bands, rows, cols)
        grow, gcol, ltl = _normal_gram(ops, rows, cols)

        def apply_a(x):
            # single large GEMM per axis: cols, then rows, then bands
            t = (x.reshape(bands * rows, cols) @ gcol).reshape(bands, rows, cols)
            t = t.transpose(1, 0, 2).reshape(rows, bands * cols)
            spatial = (grow @ t).reshape(rows, bands, cols).transpose(1, 0, 2)
            spectral = (ltl @ x.reshape(bands, -1)).reshape(bands, rows, cols)
            return spatial + spectral + lam * x

        return apply_a, lam

    def solve(self, y1: np.ndarray, y2t: np.ndarray, ops: DegradationPair):
        """Raw normal-equation solve; returns (x_pre_clamp, info)."""
        bands = y1.shape[0]
        rows, cols = y2t.shape[1], y2t.shape[2]
        apply_a, lam = self._apply_a(ops, bands, rows, cols)
        b = ops.spatial.adjoint(y1) + ops.spectral.adjoint(y2t)
        x, info = conjugate_gradient(apply_a, b, tol=self.cg_tol, maxiter=self.cg_iters)
        info["lam_effective"] = lam
        return x, info

    def input_grad(self, grad_x: np.ndarray, ops: DegradationPair):
        """Sensitivity of the solve w.r.t. the corrected image: one more CG
        solve with the same SPD system, then the spectral forward map."""
        bands, rows, cols = grad_x.shape
        apply_a, _ = self._apply_a(ops, bands, rows, cols)
        z, info = conjugate_gradient(apply_a, grad_x, tol=self.cg_tol, maxiter=self.cg_iters)
        return ops.spectral.apply(z), info


@dataclass
class NeuralFusion:
    """Frozen pretrained fusion network."""

    net: Network
    params: ParamStore

    def forward(self, y1: np.ndarray, y2t: np.ndarray):
        return self.net.forward(self.params, {"y_lo": y1, "y_hi": y2t})

    def input_grad(self, tape, grad_x: np.ndarray) -> np.ndarray:
        _, igrads = self.net.backward(self.params, tape, grad_x)
        return igrads["y_hi"]


FusionBackend = ModelBasedFusion | NeuralFusion


def fuse(backend: FusionBackend, y1: HyperImage, y2t: HyperImage,
         ops: DegradationPair) -> HyperImage:
    """Fuse an LRHS observation with a (corrected) HRLS image.

    Output is clamped to be nonnegative.  CG non-convergence raises a
    UserWarning but still returns the iterate.
    """
    if isinstance(backend, ModelBasedFusion):
        x, info = backend.solve(y1.data, y2t.data, ops)
        if not info["converged"]:
            warnings.warn(
                f"fusion CG stopped at rel_residual={info['rel_residual']:.2e} "
                f"after {info['iterations']} iterations", UserWarning)
        return HyperImage(np.maximum(x, 0.0))
    out, _ = backend.forward(y1.data, y2t.data)
    return HyperImage(np.maximum(out, 0.0))


def consistency(x1_hat: HyperImage, y1: HyperImage, ops: DegradationPair) -> float:
    """Relative prediction residual ||H1(X1_hat) - Y1||_F / ||Y1||_F.

    A zero observation makes the ratio undefined; the absolute residual is
    returned instead, with a warning.
    """
    pred = ops.spatial.apply(x1_hat.data)
    num = float(np.linalg.norm(pred - y1.data))
    den = float(np.linalg.norm(y1.data))
    if den == 0.0:
        warnings.warn("consistency against a zero observation: returning absolute residual",
                      UserWarning)
        return num
    return num / den


def pretrain_fusion(net: Network, params: ParamStore, train_pairs, epochs: int,
                    seed: int, lr: float = 2e-3, batch: int = 2):
    """Supervised fusion pretraining on no-change pairs.

    Minimizes the mean squared Frobenius error between the network output
    and the latent cube X1 with Adam (minibatch gradients averaged).
    Returns (params, per-epoch mean loss history); zero epochs return the
    initialization unchanged.  The resulting parameters are frozen by the
    adversarial trainer.
    """
    history: list[float] = []
    if epochs == 0:
        return params, history
    state = AdamState.for_params(params)
    rng = make_rng(seed, 91)
    n = len(train_pairs)
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            grads = params.zeros_like()
            batch_loss = 0.0
            for i in idx:
                pair = train_pairs[i]
                out, tape = net.forward(params, {"y_lo": pair.y1.data, "y_hi": pair.y2.data})
                resid = out - pair.x1.data
                batch_loss += float(np.sum(resid * resid))
                g, _ = net.backward(params, tape, 2.0 * resid / len(idx))
                grads.add_scaled(g, 1.0)
            batch_loss /= len(idx)
            if not np.isfinite(batch_loss):
                raise NumericError(f"fusion pretraining diverged at epoch {epoch}")
            losses.append(batch_loss)
            adam_step(params, grads, state, lr)
        history.append(float(np.mean(losses)))
    return params, history
