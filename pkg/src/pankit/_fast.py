"""JIT-compiled hot loops for post-processing (single-image, sequential).

Both kernels are order-defined: components are labeled in raster-scan
discovery order, and region growth is one multi-source FIFO BFS seeded by
kernel pixels in raster order. Distance tests use squared Euclidean
distance in float64 with a fixed channel accumulation order so the pure
Python reference in :mod:`pankit.aggregation` reproduces results bit for
bit. ``nogil`` lets the pipeline bench run post-processing workers in
real threads.
"""

import numpy as np
from numba import njit

NEIGHBORS_4 = ((-1, 0), (0, -1), (0, 1), (1, 0))


@njit(cache=True, nogil=True)
def label_components(mask):
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    qy = np.empty(h * w, dtype=np.int32)
    qx = np.empty(h * w, dtype=np.int32)
    count = 0
    for y in range(h):
        for x in range(w):
            if mask[y, x] and labels[y, x] == 0:
                count += 1
                labels[y, x] = count
                qy[0] = y
                qx[0] = x
                head, tail = 0, 1
                while head < tail:
                    cy = qy[head]
                    cx = qx[head]
                    head += 1
                    for dy, dx in NEIGHBORS_4:
                        ny = cy + dy
                        nx = cx + dx
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] \
                                and labels[ny, nx] == 0:
                            labels[ny, nx] = count
                            qy[tail] = ny
                            qx[tail] = nx
                            tail += 1
    return labels, count


@njit(cache=True, nogil=True)
def kernel_centers(kernel_labels, sim, n_kernels):
    """Per-kernel mean similarity vectors, raster-order accumulation."""
    h, w = kernel_labels.shape
    sums = np.zeros((n_kernels, 4), dtype=np.float64)
    counts = np.zeros(n_kernels, dtype=np.int64)
    for y in range(h):
        for x in range(w):
            k = kernel_labels[y, x]
            if k > 0:
                for c in range(4):
                    sums[k - 1, c] += sim[c, y, x]
                counts[k - 1] += 1
    means = np.zeros((n_kernels, 4), dtype=np.float64)
    for i in range(n_kernels):
        if counts[i] > 0:
            for c in range(4):
                means[i, c] = sums[i, c] / counts[i]
    return means


@njit(cache=True, nogil=True)
def grow_labels(text, kernel_labels, sim, means, d2):
    """Multi-source FIFO BFS over text pixels, gated by squared distance
    to the (frozen) kernel mean of the claiming label."""
    h, w = text.shape
    labels = np.zeros((h, w), dtype=np.int32)
    qy = np.empty(h * w, dtype=np.int32)
    qx = np.empty(h * w, dtype=np.int32)
    tail = 0
    for y in range(h):
        for x in range(w):
            k = kernel_labels[y, x]
            if k > 0:
                labels[y, x] = k
                qy[tail] = y
                qx[tail] = x
                tail += 1
    head = 0
    while head < tail:
        y = qy[head]
        x = qx[head]
        head += 1
        lab = labels[y, x]
        for dy, dx in NEIGHBORS_4:
            ny = y + dy
            nx = x + dx
            if 0 <= ny < h and 0 <= nx < w and text[ny, nx] \
                    and labels[ny, nx] == 0:
                acc = 0.0
                for c in range(4):
                    dv = sim[c, ny, nx] - means[lab - 1, c]
                    acc += dv * dv
                if acc < d2:
                    labels[ny, nx] = lab
                    qy[tail] = ny
                    qx[tail] = nx
                    tail += 1
    return labels
