import numpy as np

from pankit.groundtruth import GroundTruth


def random_loss_fixture(seed, h=16, w=16, n_instances=3, margin_gap=0.02):
    """Ground truth plus random maps for gradient checking.

    Lays out ``n_instances`` disjoint rectangles with single-pixel-eroded
    kernels and draws the similarity field uniformly from [-4, 4]^4,
    redrawing until every clamp margin in the aggregation/discrimination
    losses sits at least ``margin_gap`` away from its boundary, so central
    differences never straddle a kink.
    """
    rng = np.random.default_rng(seed)
    instance = np.zeros((h, w), dtype=np.int32)
    kernel = np.zeros((h, w), dtype=np.int32)
    ignore = np.zeros((h, w), dtype=bool)
    cols = np.array_split(np.arange(w), n_instances)
    for i, band in enumerate(cols, start=1):
        x0, x1 = band[0] + 1, band[-1]
        y0 = int(rng.integers(1, 4))
        y1 = int(rng.integers(h - 4, h - 1))
        instance[y0:y1, x0:x1] = i
        kernel[y0 + 1:y1 - 1, x0 + 1:x1 - 1] = i
    ignore[0, :] = rng.random(w) < 0.2
    gt = GroundTruth(instance, kernel, ignore, n_instances)

    p_tex = rng.uniform(0.05, 0.95, size=(h, w))
    p_ker = rng.uniform(0.05, 0.95, size=(h, w))
    for attempt in range(50):
        sim = rng.uniform(-4.0, 4.0, size=(4, h, w))
        if _margins_clear(sim, gt, margin_gap):
            return gt, p_tex, p_ker, sim
    raise AssertionError(f"seed {seed}: could not draw a boundary-clear field")


def _margins_clear(sim, gt, gap, delta_agg=0.5, delta_dis=3.0):
    centers = []
    for i in range(1, gt.n + 1):
        kmask = gt.kernel_labels == i
        center = sim[:, kmask].mean(axis=1)
        centers.append(center)
        dist = np.linalg.norm(sim[:, gt.instance_labels == i] - center[:, None],
                              axis=0)
        if np.any(np.abs(dist - delta_agg) < gap):
            return False
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            d = np.linalg.norm(centers[i] - centers[j])
            if abs(d - delta_dis) < gap or d < gap:
                return False
    return True


def rel_error(a, b, floor=1e-12):
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < floor and nb < floor:
        return 0.0
    return np.linalg.norm(a - b) / max(na, nb)
