import numpy as np
import pytest

from vvtrack import shadows as sh
from vvtrack.frames import SceneObject, SyntheticScene, generate_synthetic
from vvtrack.shadows import (GradientField, PoissonConvergenceError,
                             ShadowError, divergence, edge_strength,
                             extract_blobs, forward_gradient,
                             hard_shadow_mask, invariant_images,
                             masked_gradient, poisson_reconstruct,
                             shadow_masks, split_shadow)


class TestInvariantImages:
    def test_unit_l2_norm_where_nonblack(self):
        rng = np.random.default_rng(0)
        frame = rng.random((6, 6, 3)) * 0.9 + 0.05
        inv = invariant_images(frame)
        norm = np.sqrt((frame ** 2).sum(axis=2))
        assert np.allclose(inv.inv1, frame[..., 0] / norm)
        assert np.allclose(inv.inv2, frame[..., 1] / norm)

    def test_intensity_scale_invariance(self):
        rng = np.random.default_rng(1)
        frame = rng.random((8, 8, 3)) * 0.5 + 0.25
        dim = np.clip(frame * 0.4, 0, 1)
        a = invariant_images(frame)
        b = invariant_images(dim)
        assert np.allclose(a.inv1, b.inv1, atol=1e-12)
        assert np.allclose(a.inv2, b.inv2, atol=1e-12)

    def test_black_pixels_map_to_zero(self):
        frame = np.zeros((4, 4, 3))
        frame[0, 0] = (0.2, 0.3, 0.1)
        inv = invariant_images(frame)
        assert inv.inv1[1, 1] == 0.0 and inv.inv2[1, 1] == 0.0
        assert inv.inv1[0, 0] > 0


class TestEdgeStrength:
    def test_flat_image_zero(self):
        assert edge_strength(np.full((8, 8), 0.5)).max() == 0.0

    def test_peak_normalized(self):
        rng = np.random.default_rng(2)
        e = edge_strength(rng.random((16, 16)), sigma=1.0)
        assert e.max() == pytest.approx(1.0)
        assert e.min() >= 0.0

    def test_step_edge_located(self):
        frame = np.zeros((16, 16))
        frame[:, 8:] = 1.0
        e = edge_strength(frame, sigma=1.0)
        # strongest response should sit on the step columns
        cols = np.argmax(e, axis=1)
        assert np.all((cols >= 6) & (cols <= 9))

    def test_negative_sigma_errors(self):
        with pytest.raises(ShadowError):
            edge_strength(np.zeros((4, 4)), sigma=-1.0)


class TestHardShadowMask:
    def test_truth_table(self):
        e_ori = np.array([[0.9, 0.9], [0.1, 0.9]])
        e_i1 = np.array([[0.0, 0.5], [0.0, 0.05]])
        e_i2 = np.array([[0.05, 0.5], [0.0, 0.5]])
        hs = hard_shadow_mask(e_ori, e_i1, e_i2, t1=0.3, t2=0.1)
        # only pixels strong in original AND weak in min(invariants)
        assert hs.tolist() == [[True, False], [False, True]]

    def test_bad_thresholds_error(self):
        e = np.zeros((2, 2))
        with pytest.raises(ShadowError):
            hard_shadow_mask(e, e, e, t1=0.1, t2=0.3)

    def test_intensity_only_edge_flagged(self):
        # gray frame with a darker gray region: original edge, no
        # chromaticity edge anywhere
        frame = np.full((24, 24, 3), 0.7)
        frame[8:16, 8:16] *= 0.5
        masks = shadow_masks(frame, sigma=1.0)
        assert masks.HS.any()

    def test_material_edge_not_flagged(self):
        # red square on green background: strong chromaticity edge too
        frame = np.zeros((24, 24, 3))
        frame[..., 1] = 0.7
        frame[8:16, 8:16] = (0.7, 0.0, 0.0)
        masks = shadow_masks(frame, sigma=1.0)
        assert not masks.HS.any()

    def test_penumbra_is_dilation(self):
        frame = np.full((24, 24, 3), 0.7)
        frame[8:16, 8:16] *= 0.5
        m = shadow_masks(frame, sigma=1.0, penumbra=2)
        assert m.VS.sum() > m.HS.sum()
        assert not (m.HS & ~m.VS).any()
        assert np.array_equal(m.mask, m.HS | m.VS)


class TestGradients:
    def test_forward_difference_values(self):
        f = np.array([[0.0, 1.0, 3.0], [2.0, 2.0, 2.0]])
        g = forward_gradient(f)
        assert g.gx.tolist() == [[1.0, 2.0, 0.0], [0.0, 0.0, 0.0]]
        assert g.gy.tolist() == [[2.0, 1.0, -1.0], [0.0, 0.0, 0.0]]

    def test_masked_gradient_kills_step(self):
        # a one-pixel-wide mask on a step edge removes both touching samples
        f = np.zeros((4, 6))
        f[:, 3:] = 1.0
        mask = np.zeros((4, 6), bool)
        mask[:, 3] = True
        g = masked_gradient(f, mask)
        assert g.gx[:, 2].tolist() == [0.0] * 4  # left endpoint unmasked, right masked
        assert g.gx[:, 3].tolist() == [0.0] * 4
        assert not g.gx.any()

    def test_mask_shape_mismatch_errors(self):
        with pytest.raises(ShadowError):
            masked_gradient(np.zeros((4, 4)), np.zeros((3, 4), bool))

    def test_divergence_adjointness(self):
        # <div g, u> == -<g, grad u> over interior supports (discrete
        # integration by parts); checked numerically on random fields
        rng = np.random.default_rng(3)
        for _ in range(5):
            u = rng.random((7, 9))
            g = GradientField(gx=rng.random((7, 9)), gy=rng.random((7, 9)))
            g.gx[:, -1] = 0.0
            g.gy[-1, :] = 0.0
            gu = forward_gradient(u)
            lhs = float((divergence(g) * u).sum())
            rhs = -float((g.gx * gu.gx + g.gy * gu.gy).sum())
            assert lhs == pytest.approx(rhs, abs=1e-10)


class TestPoisson:
    def test_roundtrip_recovers_field(self):
        # integrate the gradient of a known zero-mean field
        rng = np.random.default_rng(4)
        f = rng.random((24, 24))
        f -= f.mean()
        s = poisson_reconstruct(forward_gradient(f))
        assert np.abs(s - f).max() < 1e-3

    def test_zero_field_returns_zero(self):
        g = GradientField(gx=np.zeros((8, 8)), gy=np.zeros((8, 8)))
        assert not poisson_reconstruct(g).any()

    def test_solution_zero_mean(self):
        rng = np.random.default_rng(5)
        f = rng.random((12, 12))
        s = poisson_reconstruct(forward_gradient(f))
        assert abs(s.mean()) < 1e-9

    def test_linearity(self):
        rng = np.random.default_rng(6)
        f1 = rng.random((12, 12))
        f2 = rng.random((12, 12))
        g1, g2 = forward_gradient(f1), forward_gradient(f2)
        g12 = GradientField(gx=g1.gx + g2.gx, gy=g1.gy + g2.gy)
        s = poisson_reconstruct(g12, tol=1e-9)
        s1 = poisson_reconstruct(g1, tol=1e-9)
        s2 = poisson_reconstruct(g2, tol=1e-9)
        assert np.abs(s - (s1 + s2)).max() < 1e-4

    def test_nonconvergence_raises_with_residual(self):
        rng = np.random.default_rng(7)
        g = forward_gradient(rng.random((32, 32)))
        with pytest.raises(PoissonConvergenceError) as exc:
            poisson_reconstruct(g, max_sweeps=10)
        assert exc.value.sweeps == 10
        assert exc.value.residual > 0


class TestSplitShadow:
    def _shadow_frame(self):
        obj = SceneObject(shape="rect", trajectory=[(14, 20, 12, 12)],
                          albedo=(0.85, 0.3, 0.25),
                          shadow_offset=(4, 10), shadow_attenuation=0.5)
        scene = SyntheticScene(width=48, height=48, background=0.6,
                               objects=[obj], noise_sigma=0.0)
        frames, truth = generate_synthetic(scene, 1)
        return frames[0], truth[0]

    def test_components_multiply_back(self):
        # S * R must reproduce exp(log frame) up to a global scale
        frame, _ = self._shadow_frame()
        masks = shadow_masks(frame, sigma=1.0)
        S, R = split_shadow(frame, masks)
        gray = sh.to_grayscale(frame) + sh.LOG_OFFSET
        prod = S * R
        ratio = gray / prod
        assert ratio.std() / ratio.mean() < 1e-6

    def test_empty_mask_gives_flat_shadow_image(self):
        rng = np.random.default_rng(8)
        frame = np.clip(rng.random((16, 16, 3)) * 0.3 + 0.4, 0, 1)
        masks = shadow_masks(frame, sigma=1.0, t1=0.999999, t2=0.0)
        assert not masks.mask.any()  # thresholds chosen so nothing fires
        S, _ = split_shadow(frame, masks)
        assert np.allclose(S, 1.0)

    def test_shadow_region_attenuated_in_s(self):
        frame, truth = self._shadow_frame()
        from vvtrack.frames import rle_decode
        shadow_px = rle_decode(truth["shadow_rle"], frame.shape[:2])
        masks = shadow_masks(frame, sigma=1.0)
        S, R = split_shadow(frame, masks)
        lit = ~shadow_px
        # interior of the shadow should be darker in S than lit background
        inner = sh.ndimage.binary_erosion(shadow_px, iterations=2)
        if inner.any():
            assert S[inner].mean() < S[lit].mean() - 0.1


class TestExtractBlobs:
    def test_two_components_sorted_by_area(self):
        m = np.zeros((20, 20), bool)
        m[2:6, 2:6] = True      # 16 px
        m[10:18, 10:18] = True  # 64 px
        blobs = extract_blobs(m, min_area=1)
        assert [b.area for b in blobs] == [64, 16]
        assert blobs[0].bbox == (10, 10, 8, 8)
        assert blobs[1].centroid == (3.5, 3.5)

    def test_min_area_filters(self):
        m = np.zeros((10, 10), bool)
        m[1, 1] = True
        m[4:8, 4:8] = True
        blobs = extract_blobs(m, min_area=4)
        assert len(blobs) == 1 and blobs[0].area == 16

    def test_diagonal_pixels_connect(self):
        m = np.zeros((6, 6), bool)
        m[1, 1] = m[2, 2] = m[3, 3] = True
        assert len(extract_blobs(m, min_area=1)) == 1

    def test_empty_mask(self):
        assert extract_blobs(np.zeros((5, 5), bool)) == []
