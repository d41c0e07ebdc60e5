"""Training objective for kernel-seeded text segmentation.

Four components, each returning its value together with the analytic
gradient with respect to the prediction maps (no network backprop here;
gradients stop at the maps):

* aggregation: pulls each ground-truth text pixel's similarity vector
  within ``delta_agg`` of its own kernel's mean vector,
  mean over instances of mean over pixels of ln(max(||F(p)-G_i|| - d_agg, 0)^2 + 1)
* discrimination: pushes kernel mean vectors of distinct instances at
  least ``delta_dis`` apart,
  mean over ordered pairs of ln(max(d_dis - ||G_i-G_j||, 0)^2 + 1)
* dice loss on the text map (over an online-hard-example-mined mask) and
  on the kernel map (over ground-truth text pixels only)

Total = l_tex + alpha * l_ker + beta * (l_agg + l_dis).

Gradients flow through the kernel means (each kernel pixel receives the
mean-path term weighted 1/|K_i|). The clamp max(., 0)^2 uses the zero
branch at its boundary; mining masks are treated as constants when
differentiating. All arithmetic is float64 regardless of input dtype.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .groundtruth import GroundTruth

_SIM_DIM = 4


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.5
    beta: float = 0.25
    delta_agg: float = 0.5
    delta_dis: float = 3.0
    ohem_ratio: int = 3

    def __post_init__(self):
        if min(self.alpha, self.beta, self.delta_agg, self.delta_dis) <= 0:
            raise ValueError("loss weights and margins must be positive")
        if self.ohem_ratio < 1:
            raise ValueError(f"ohem_ratio must be >= 1, got {self.ohem_ratio}")


@dataclass
class LossBreakdown:
    l_tex: float
    l_ker: float
    l_agg: float
    l_dis: float
    total: float
    d_tex: np.ndarray
    d_ker: np.ndarray
    d_sim: np.ndarray

    def to_json(self) -> dict:
        return {"l_tex": self.l_tex, "l_ker": self.l_ker, "l_agg": self.l_agg,
                "l_dis": self.l_dis, "total": self.total}


def kernel_mean(sim: np.ndarray, kernel_mask: np.ndarray) -> np.ndarray:
    """Mean similarity vector over one kernel's pixels (the cluster center)."""
    if not kernel_mask.any():
        raise ValueError("kernel has no pixels; filter empty kernels upstream")
    return sim[:, kernel_mask].astype(np.float64).mean(axis=1)


def loss_agg(sim, instance_labels, kernel_labels, delta_agg: float = 0.5,
             ) -> tuple[float, np.ndarray]:
    """Pull text pixels toward their kernel's mean vector.

    Returns (value, d_sim). Gradient reaches F(p) for every ground-truth
    text pixel p and, through the mean, every kernel pixel.
    """
    simf = np.asarray(sim, dtype=np.float64)
    n = int(instance_labels.max())
    grad = np.zeros_like(simf)
    if n == 0:
        return 0.0, grad
    value = 0.0
    for i in range(1, n + 1):
        tmask = instance_labels == i
        kmask = kernel_labels == i
        center = kernel_mean(simf, kmask)
        vecs = simf[:, tmask] - center[:, None]          # (4, |T_i|)
        dist = np.sqrt(np.sum(vecs * vecs, axis=0))
        margin = np.maximum(dist - delta_agg, 0.0)
        value += float(np.mean(np.log(margin * margin + 1.0))) / n
        # d/d dist of ln(m^2+1) is 2m/(m^2+1); zero branch on the clamp
        active = margin > 0.0
        coef = np.zeros_like(dist)
        coef[active] = (2.0 * margin[active] / (margin[active] ** 2 + 1.0)
                        / dist[active]) / (n * tmask.sum())
        pull = vecs * coef[None, :]                      # (4, |T_i|)
        grad[:, tmask] += pull
        grad[:, kmask] -= pull.sum(axis=1)[:, None] / kmask.sum()
    return value, grad


def loss_dis(sim, kernel_labels, delta_dis: float = 3.0,
             ) -> tuple[float, np.ndarray]:
    """Push kernel means of distinct instances at least delta_dis apart.

    Zero (by convention) when fewer than two instances exist, since the
    pair normalizer 1/(N(N-1)) is undefined at N=1.
    """
    simf = np.asarray(sim, dtype=np.float64)
    n = int(kernel_labels.max())
    grad = np.zeros_like(simf)
    if n <= 1:
        return 0.0, grad
    kmasks = [kernel_labels == i for i in range(1, n + 1)]
    centers = np.stack([kernel_mean(simf, m) for m in kmasks])  # (N, 4)
    d_centers = np.zeros_like(centers)
    norm = 1.0 / (n * (n - 1))
    value = 0.0
    for i in range(n):
        for j in range(n):
            if j == i:
                continue
            u = centers[i] - centers[j]
            dist = float(np.sqrt(np.sum(u * u)))
            margin = max(delta_dis - dist, 0.0)
            value += np.log(margin * margin + 1.0) * norm
            if margin > 0.0 and dist > 0.0:
                g = (2.0 * margin / (margin * margin + 1.0)) * (-u / dist) * norm
                d_centers[i] += g
                d_centers[j] -= g
            # dist == 0: direction undefined; use the zero subgradient
    for i in range(n):
        grad[:, kmasks[i]] += d_centers[i][:, None] / kmasks[i].sum()
    return float(value), grad


def dice_loss(pred, target, mask) -> tuple[float, np.ndarray]:
    """1 - 2*sum(P*G) / (sum(P^2) + sum(G^2)) over masked pixels.

    Degenerate masks (empty, or all-zero denominator) give value 0 with a
    zero gradient. The gradient is exactly zero outside the mask.
    """
    p_full = np.asarray(pred, dtype=np.float64)
    grad = np.zeros_like(p_full)
    if not mask.any():
        return 0.0, grad
    p = p_full[mask]
    g = np.asarray(target, dtype=np.float64)[mask]
    inter = float(np.sum(p * g))
    denom = float(np.sum(p * p) + np.sum(g * g))
    if denom == 0.0:
        return 0.0, grad
    value = 1.0 - 2.0 * inter / denom
    grad[mask] = (4.0 * inter * p) / denom ** 2 - (2.0 * g) / denom
    return value, grad


def ohem_mask(p_tex, g_tex, ignore_mask, ratio: int = 3) -> np.ndarray:
    """Keep all positives plus the ratio*|positives| hardest negatives.

    Hardness is the predicted text score; ties resolve in scan order.
    Ignore pixels never enter the mask. With zero positives every
    non-ignored pixel is kept.
    """
    pos = (np.asarray(g_tex) > 0) & ~ignore_mask
    neg = (np.asarray(g_tex) <= 0) & ~ignore_mask
    n_pos = int(pos.sum())
    if n_pos == 0:
        return ~ignore_mask
    budget = min(ratio * n_pos, int(neg.sum()))
    mask = pos.copy()
    if budget > 0:
        neg_idx = np.flatnonzero(neg.reshape(-1))
        scores = np.asarray(p_tex).reshape(-1)[neg_idx]
        # stable sort on -score keeps scan order among ties
        keep = neg_idx[np.argsort(-scores, kind="stable")[:budget]]
        mask.reshape(-1)[keep] = True
    return mask


def total_loss(p_tex, p_ker, sim, gt: GroundTruth, cfg: LossConfig = LossConfig(),
               mined_mask: np.ndarray | None = None) -> LossBreakdown:
    """Combine all components; gradients are accumulated per map.

    ``mined_mask`` substitutes a precomputed hard-example mask (the mask is
    a constant w.r.t. differentiation, so gradient checks pass one in).
    """
    if sim.shape[0] != _SIM_DIM:
        raise ValueError(f"similarity field must have {_SIM_DIM} channels, "
                         f"got {sim.shape[0]}")
    g_tex = gt.text_mask
    mined = (mined_mask if mined_mask is not None
             else ohem_mask(p_tex, g_tex, gt.ignore_mask, cfg.ohem_ratio))
    l_tex, d_tex = dice_loss(p_tex, g_tex, mined)
    l_ker, d_ker = dice_loss(p_ker, gt.kernel_mask, g_tex & ~gt.ignore_mask)
    l_agg, d_agg = loss_agg(sim, gt.instance_labels, gt.kernel_labels,
                            cfg.delta_agg)
    l_dis, d_dis = loss_dis(sim, gt.kernel_labels, cfg.delta_dis)
    total = l_tex + cfg.alpha * l_ker + cfg.beta * (l_agg + l_dis)
    return LossBreakdown(
        l_tex=l_tex, l_ker=l_ker, l_agg=l_agg, l_dis=l_dis, total=total,
        d_tex=d_tex,
        d_ker=cfg.alpha * d_ker,
        d_sim=cfg.beta * (d_agg + d_dis),
    )
