"""Detection figures-of-merit.

Empirical ROC over a full threshold sweep of the energy map, its
trapezoidal area (equal to the Mann-Whitney statistic with half credit
for ties), and a scalar distance score: the Euclidean distance from the
no-detection corner (PFA, PD) = (1, 0) to the curve's intersection with
the anti-diagonal segment joining (1, 0) and (0, 1), normalized by
sqrt(2) so a perfect detector scores 1 and a chance detector 0.5.  The
distance construction is this package's fixed interpretation of a metric
that is commonly reported without a formal definition; absolute values
from other toolchains may differ.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BinaryMap
from .detect import EnergyMap


@dataclass(frozen=True)
class RocCurve:
    """Threshold sweep from tau = +inf down to -inf.

    pfa/pd are matching arrays of curve points, monotone nondecreasing,
    from (0, 0) to (1, 1); thresholds[i] is the smallest tau producing
    point i (with +inf for the first and -inf for the last).
    """

    pfa: np.ndarray
    pd: np.ndarray
    thresholds: np.ndarray
    auc: float
    dist: float


def roc(e: EnergyMap, d_ref: BinaryMap) -> RocCurve:
    """One curve point per distinct energy value plus the two endpoints."""
    if (e.rows, e.cols) != (d_ref.rows, d_ref.cols):
        raise ValueError(f"shape mismatch: energy {e.values.shape} vs map {d_ref.data.shape}")
    labels = d_ref.flat().astype(bool)
    n_c = int(labels.sum())
    n_u = labels.size - n_c
    if n_c == 0 or n_u == 0:
        raise ValueError("reference map must contain both changed and unchanged pixels")
    v = e.flat()
    order = np.argsort(v)[::-1]
    sv = v[order]
    sl = labels[order]
    # block ends of the distinct descending values v_1 > v_2 > ... > v_k
    distinct = np.nonzero(np.diff(sv))[0]
    cut = np.concatenate([distinct, [sv.size - 1]])
    tp = np.cumsum(sl)[cut]
    fp = np.cumsum(~sl)[cut]
    pfa = np.concatenate([[0.0], fp / n_u])
    pd = np.concatenate([[0.0], tp / n_c])
    # point i counts e > tau for tau in [v_{i+1}, v_i); label it with the
    # smallest such tau so thresholding at thresholds[i] reproduces it
    thresholds = np.concatenate([[np.inf], sv[cut][1:], [-np.inf]])
    a = _trapezoid_auc(pfa, pd)
    d = _antidiagonal_dist(pfa, pd)
    return RocCurve(pfa=pfa, pd=pd, thresholds=thresholds, auc=a, dist=d)


def _trapezoid_auc(pfa: np.ndarray, pd: np.ndarray) -> float:
    return float(np.sum(np.diff(pfa) * (pd[1:] + pd[:-1]) * 0.5))


def _antidiagonal_dist(pfa: np.ndarray, pd: np.ndarray) -> float:
    # f < 0 below the anti-diagonal pd = 1 - pfa, f > 0 above
    f = pd + pfa - 1.0
    for i in range(len(f) - 1):
        if f[i] <= 0.0 <= f[i + 1]:
            if f[i + 1] == f[i]:
                xc, yc = pfa[i], pd[i]
            else:
                t = -f[i] / (f[i + 1] - f[i])
                xc = pfa[i] + t * (pfa[i + 1] - pfa[i])
                yc = pd[i] + t * (pd[i + 1] - pd[i])
            return math.hypot(xc - 1.0, yc) / math.sqrt(2.0)
    raise ValueError("ROC curve does not cross the anti-diagonal")


def auc(curve: RocCurve) -> float:
    return curve.auc


def dist(curve: RocCurve) -> float:
    return curve.dist


def write_roc_csv(path, curve: RocCurve) -> None:
    """Columns tau, pfa, pd, followed by a summary line with auc and dist."""
    with open(path, "w") as f:
        f.write("tau,pfa,pd\n")
        for t, x, y in zip(curve.thresholds, curve.pfa, curve.pd):
            f.write(f"{t:.10g},{x:.10g},{y:.10g}\n")
        f.write(f"# auc={curve.auc:.10g} dist={curve.dist:.10g}\n")


def per_rule_summary(records: list[dict]) -> dict[str, dict[str, float]]:
    """Mean auc/dist per change rule from per-pair metric records."""
    byrule: dict[str, list[dict]] = {}
    for r in records:
        byrule.setdefault(r["rule"], []).append(r)
    return {
        rule: {
            "auc": float(np.mean([r["auc"] for r in rs])),
            "dist": float(np.mean([r["dist"] for r in rs])),
            "count": len(rs),
        }
        for rule, rs in sorted(byrule.items())
    }


def write_summary_csv(path, summary: dict[str, dict[str, float]]) -> None:
    with open(path, "w") as f:
        f.write("rule,auc,dist,count\n")
        for rule, s in summary.items():
            f.write(f"{rule},{s['auc']:.10g},{s['dist']:.10g},{int(s['count'])}\n")
