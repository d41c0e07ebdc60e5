import numpy as np
import pytest

from pankit.aggregation import (
    PAConfig,
    aggregate,
    aggregate_oracle,
    binarize,
    connected_components,
    convex_hull,
    extract_instances,
    min_area_rect,
    postprocess,
    trace_contour,
)
from pankit.groundtruth import rasterize_points


def random_grid(seed, h=32, w=32, max_kernels=4):
    """Random text mask, kernel seeds and similarity field for oracle trials."""
    rng = np.random.default_rng(seed)
    text = rng.random((h, w)) < rng.uniform(0.35, 0.75)
    n_want = int(rng.integers(1, max_kernels + 1))
    kernel_bin = np.zeros((h, w), dtype=bool)
    for _ in range(n_want):
        y = int(rng.integers(0, h - 3))
        x = int(rng.integers(0, w - 3))
        kernel_bin[y:y + int(rng.integers(1, 4)), x:x + int(rng.integers(1, 4))] = True
    text |= kernel_bin
    kernel_labels, _ = connected_components(kernel_bin)
    sim = rng.uniform(-4.0, 4.0, size=(4, h, w))
    return text, kernel_labels, sim


class TestBinarize:
    def test_full_mask(self):
        tex = np.full((4, 4), 0.6)
        ker = np.full((4, 4), 0.6)
        tb, kb = binarize(tex, ker)
        assert tb.all() and kb.all()

    def test_kernel_needs_text(self):
        tex = np.zeros((2, 2))
        ker = np.ones((2, 2))
        _, kb = binarize(tex, ker)
        assert not kb.any()

    def test_strict_threshold(self):
        tex = np.full((2, 2), 0.5)
        tb, _ = binarize(tex, tex, PAConfig(text_thresh=0.5))
        assert not tb.any()


class TestConnectedComponents:
    def test_empty(self):
        labels, n = connected_components(np.zeros((5, 5), dtype=bool))
        assert n == 0 and not labels.any()

    def test_two_blobs(self):
        mask = np.zeros((6, 6), dtype=bool)
        mask[0:2, 0:2] = True
        mask[4:6, 4:6] = True
        labels, n = connected_components(mask)
        assert n == 2
        assert labels[0, 0] == 1 and labels[5, 5] == 2  # raster discovery order

    def test_diagonal_not_connected(self):
        mask = np.zeros((3, 3), dtype=bool)
        mask[0, 0] = mask[1, 1] = True
        _, n = connected_components(mask)
        assert n == 2

    def test_snake(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[0, :] = True
        mask[:, 4] = True
        mask[4, :] = True
        _, n = connected_components(mask)
        assert n == 1


class TestAggregate:
    def test_single_kernel_uniform_field(self):
        text = np.zeros((8, 8), dtype=bool)
        text[2:6, 1:7] = True
        klabels = np.zeros((8, 8), dtype=np.int32)
        klabels[3:5, 3:5] = 1
        sim = np.ones((4, 8, 8))
        labels = aggregate(text, klabels, sim, d=0.5)
        np.testing.assert_array_equal(labels > 0, text)
        assert set(np.unique(labels)) == {0, 1}

    def test_bridge_blocked_by_distance(self):
        # two kernels joined by a text bridge whose vectors sit far from both
        text = np.zeros((3, 9), dtype=bool)
        text[1, :] = True
        klabels = np.zeros((3, 9), dtype=np.int32)
        klabels[1, 0] = 1
        klabels[1, 8] = 2
        sim = np.zeros((4, 3, 9))
        sim[0, 1, 8] = 1.0  # kernel 2's mean
        sim[0, 1, 3:6] = 10.0  # bridge pixels far from both means
        sim[0, 1, 6:8] = 1.0
        labels = aggregate(text, klabels, sim, d=2.0)
        assert labels[1, 0] == 1 and labels[1, 1] == 1 and labels[1, 2] == 1
        assert (labels[1, 3:6] == 0).all()
        assert (labels[1, 6:] == 2).all()

    def test_infinite_d_is_first_come_growth(self):
        text, klabels, sim = random_grid(99)
        labels = aggregate(text, klabels, sim, d=np.inf)
        expected = aggregate_oracle(text, klabels, sim, d=np.inf)
        np.testing.assert_array_equal(labels, expected)
        # with the gate disabled every text pixel 4-connected to a kernel is labeled
        reach, _ = connected_components(text)
        kernel_comps = set(np.unique(reach[klabels > 0]))
        reachable = np.isin(reach, list(kernel_comps)) & text
        np.testing.assert_array_equal(labels > 0, reachable)

    def test_kernel_outside_text_rejected(self):
        text = np.zeros((3, 3), dtype=bool)
        klabels = np.zeros((3, 3), dtype=np.int32)
        klabels[1, 1] = 1
        with pytest.raises(ValueError):
            aggregate(text, klabels, np.zeros((4, 3, 3)), d=1.0)

    def test_kernel_pixels_keep_identity(self):
        text, klabels, sim = random_grid(7)
        labels = aggregate(text, klabels, sim, d=2.0)
        kmask = klabels > 0
        np.testing.assert_array_equal(labels[kmask], klabels[kmask])

    def test_labeled_subset_of_text(self):
        text, klabels, sim = random_grid(8)
        labels = aggregate(text, klabels, sim, d=6.0)
        assert not (labels[~text] > 0).any()

    def test_monotone_in_d_single_kernel(self):
        text, klabels, sim = random_grid(31, max_kernels=1)
        prev = None
        for d in (0.5, 1.0, 2.0, 4.0, 8.0):
            got = aggregate(text, klabels, sim, d) > 0
            if prev is not None:
                assert not (prev & ~got).any()
            prev = got


class TestOracleEquivalence:
    @pytest.mark.parametrize("d", [0.5, 2.0, 6.0, np.inf])
    def test_exact_equality_smoke(self, d):
        for seed in range(10):
            text, klabels, sim = random_grid(1000 + seed)
            fast = aggregate(text, klabels, sim, d)
            ref = aggregate_oracle(text, klabels, sim, d)
            np.testing.assert_array_equal(fast, ref)


class TestExtract:
    def test_basic_instance(self):
        labels = np.zeros((16, 16), dtype=np.int32)
        labels[2:12, 2:12] = 1  # 100 pixels
        tex = np.full((16, 16), 0.9)
        out = extract_instances(labels, tex, PAConfig(), scale=1.0)
        assert len(out) == 1
        assert out[0].score == pytest.approx(0.9)
        assert out[0].pixels.shape[0] == 100

    def test_small_group_dropped(self):
        labels = np.zeros((8, 8), dtype=np.int32)
        labels[0, 0:5] = 1  # 5 pixels < min_area 16
        out = extract_instances(labels, np.ones((8, 8)), PAConfig())
        assert out == []

    def test_low_score_dropped(self):
        labels = np.zeros((16, 16), dtype=np.int32)
        labels[2:12, 2:12] = 1
        out = extract_instances(labels, np.full((16, 16), 0.5), PAConfig())
        assert out == []

    def test_filtering_preserves_pixel_sets(self):
        labels = np.zeros((16, 16), dtype=np.int32)
        labels[1:11, 1:6] = 1
        labels[1:3, 8:10] = 2  # too small, dropped
        tex = np.full((16, 16), 0.95)
        out = extract_instances(labels, tex, PAConfig(), scale=1.0)
        assert len(out) == 1
        np.testing.assert_array_equal(
            np.sort(out[0].pixels.view("i4,i4"), axis=0).view(np.int32),
            np.sort(np.argwhere(labels == 1).astype(np.int32).view("i4,i4"),
                    axis=0).view(np.int32))


class TestMinAreaRect:
    def test_axis_aligned_block(self):
        pts = np.array([(x + 0.5, y + 0.5) for y in range(4) for x in range(6)])
        rect = min_area_rect(pts)
        assert rect.angle_deg == pytest.approx(0.0, abs=1e-9)
        assert sorted([rect.w, rect.h]) == pytest.approx([3.0, 5.0])
        assert (rect.cx, rect.cy) == pytest.approx((3.0, 2.5))

    def test_diagonal_line(self):
        pts = np.array([(i + 0.5, i + 0.5) for i in range(10)], dtype=float)
        rect = min_area_rect(pts)
        assert rect.angle_deg == pytest.approx(45.0, abs=1e-6)
        assert min(rect.w, rect.h) == pytest.approx(0.0, abs=1e-9)

    def test_single_pixel(self):
        rect = min_area_rect(np.array([[2.5, 3.5]]))
        assert (rect.cx, rect.cy, rect.w, rect.h) == (2.5, 3.5, 0.0, 0.0)

    def test_matches_angle_sweep_oracle(self):
        rng = np.random.default_rng(13)
        for _ in range(5):
            pts = rng.normal(size=(30, 2)) * [3.0, 1.0]
            rect = min_area_rect(pts)
            best = np.inf
            for k in range(3600):
                theta = k * np.pi / 2 / 3600
                u = np.array([np.cos(theta), np.sin(theta)])
                v = np.array([-u[1], u[0]])
                pu = pts @ u
                pv = pts @ v
                best = min(best, (pu.max() - pu.min()) * (pv.max() - pv.min()))
            assert rect.area <= best + 1e-9

    def test_hull_of_collinear(self):
        pts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        hull = convex_hull(pts)
        assert hull.shape[0] == 2


class TestTraceContour:
    def test_square_block(self):
        mask = np.zeros((6, 6), dtype=bool)
        mask[1:4, 2:5] = True  # 3x3 block
        poly = trace_contour(mask, scale=1.0)
        assert poly.shape == (4, 2)
        corners = {tuple(p) for p in poly}
        assert corners == {(2.0, 1.0), (5.0, 1.0), (5.0, 4.0), (2.0, 4.0)}

    def test_l_shape_six_vertices(self):
        mask = np.zeros((6, 6), dtype=bool)
        mask[1:5, 1:3] = True
        mask[3:5, 3:5] = True
        poly = trace_contour(mask, scale=1.0)
        assert poly.shape[0] == 6

    def test_rerasterize_superset(self):
        rng = np.random.default_rng(14)
        for trial in range(10):
            mask = np.zeros((20, 20), dtype=bool)
            y, x = 10, 10
            mask[y, x] = True
            for _ in range(60):  # random 4-connected blob
                dy, dx = ((-1, 0), (0, -1), (0, 1), (1, 0))[rng.integers(4)]
                y = min(18, max(1, y + dy))
                x = min(18, max(1, x + dx))
                mask[y, x] = True
            poly = trace_contour(mask, scale=1.0)
            refilled = rasterize_points(poly, 20, 20, 1.0)
            assert (mask & ~refilled).sum() == 0

    def test_scale_applied(self):
        mask = np.zeros((4, 4), dtype=bool)
        mask[1, 1] = True
        poly = trace_contour(mask, scale=4.0)
        assert poly.min() == 4.0 and poly.max() == 8.0


class TestPostprocess:
    def test_pipeline_two_instances(self):
        h = w = 32
        tex = np.zeros((h, w))
        ker = np.zeros((h, w))
        sim = np.zeros((4, h, w))
        tex[4:12, 4:28] = 0.95
        tex[20:28, 4:28] = 0.95
        ker[6:10, 8:24] = 0.95
        ker[22:26, 8:24] = 0.95
        sim[1, 20:28, :] = 8.0  # second instance's field, well separated
        out = postprocess(tex, ker, sim, PAConfig(min_area=10), scale=1.0)
        assert len(out) == 2
        assert all(inst.rect is not None for inst in out)

    def test_no_kernels_no_instances(self):
        assert postprocess(np.zeros((8, 8)), np.zeros((8, 8)),
                           np.zeros((4, 8, 8))) == []
