"""Constraint rows, conditioning, DLT and the RANSAC wrapper."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apapstitch import (
    CorrespondenceSet,
    DegenerateSolveError,
    InsufficientDataError,
    NoConsensusError,
    PointAtInfinityError,
    apply_homography,
    apply_homography_many,
    condition_points,
    dlt_homography,
    monomial_rows,
    ransac_homography,
    stack_monomials,
    transfer_errors,
)

from conftest import consistent_matches, homography_distance, map_points, probe_grid, random_homography


class TestMonomialRows:
    def test_known_pair(self):
        rows = monomial_rows((1.0, 2.0), (3.0, 4.0))
        np.testing.assert_array_equal(rows[0], [0, 0, 0, -1, -2, -1, 4, 8, 4])
        np.testing.assert_array_equal(rows[1], [1, 2, 1, 0, 0, 0, -3, -6, -3])

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_annihilates_consistent_homography(self, seed):
        """Both rows vanish on vec(H) whenever x' = Hx exactly."""
        rng = np.random.default_rng(seed)
        h = random_homography(rng)
        x = rng.uniform(-50.0, 50.0, 2)
        xp = map_points(h, x[None, :])[0]
        rows = monomial_rows(x, xp)
        np.testing.assert_allclose(rows @ h.ravel(), 0.0, atol=1e-9)

    def test_stack_matches_single_rows(self, rng):
        src = rng.uniform(0.0, 100.0, (6, 2))
        dst = rng.uniform(0.0, 100.0, (6, 2))
        stacked = stack_monomials(src, dst)
        assert stacked.shape == (12, 9)
        for i in range(6):
            np.testing.assert_array_equal(stacked[2 * i : 2 * i + 2], monomial_rows(src[i], dst[i]))


class TestConditioning:
    def test_centroid_and_scale(self, rng):
        pts = rng.uniform(-300.0, 700.0, (40, 2))
        cond, t = condition_points(pts)
        np.testing.assert_allclose(cond.mean(axis=0), 0.0, atol=1e-9)
        assert np.linalg.norm(cond, axis=1).mean() == pytest.approx(np.sqrt(2.0), abs=1e-9)

    def test_transform_reproduces_points(self, rng):
        pts = rng.uniform(0.0, 500.0, (15, 2))
        cond, t = condition_points(pts)
        lifted = np.column_stack([pts, np.ones(15)]) @ t.T
        np.testing.assert_allclose(lifted[:, :2] / lifted[:, 2:3], cond, atol=1e-9)


class TestDlt:
    def test_identity_data(self, rng):
        matches = consistent_matches(np.eye(3), 8, rng)
        h = dlt_homography(matches)
        assert homography_distance(h, np.eye(3), probe_grid(200, 150)) < 1e-6

    def test_recovers_random_homography(self, rng):
        for _ in range(10):
            truth = random_homography(rng)
            matches = consistent_matches(truth, 12, rng)
            h = dlt_homography(matches)
            assert homography_distance(h, truth, probe_grid(200, 150)) < 1e-6

    def test_four_point_minimal_case(self, rng):
        truth = random_homography(rng)
        matches = consistent_matches(truth, 4, rng)
        h = dlt_homography(matches)
        assert homography_distance(h, truth, probe_grid(200, 150)) < 1e-5

    def test_permutation_invariance(self, rng):
        truth = random_homography(rng)
        matches = consistent_matches(truth, 20, rng)
        perm = rng.permutation(20)
        h_a = dlt_homography(matches)
        h_b = dlt_homography(matches.subset(perm))
        assert homography_distance(h_a, h_b, probe_grid(200, 150)) < 1e-6

    def test_collinear_sources_degenerate(self):
        src = np.column_stack([np.arange(6.0), 2.0 * np.arange(6.0)])
        matches = CorrespondenceSet(src, src + 1.0)
        with pytest.raises(DegenerateSolveError):
            dlt_homography(matches)

    def test_too_few_matches(self, rng):
        matches = consistent_matches(np.eye(3), 3, rng)
        with pytest.raises(InsufficientDataError):
            dlt_homography(matches)


class TestCanonicalize:
    def test_largest_entry_becomes_plus_one(self, rng):
        from apapstitch import canonicalize_homography

        for _ in range(8):
            h = rng.normal(size=(3, 3))
            canon = canonicalize_homography(h)
            flat = canon.ravel()
            assert flat[np.argmax(np.abs(flat))] == pytest.approx(1.0, abs=1e-12)
            scale = h.ravel()[np.argmax(np.abs(h.ravel()))]
            np.testing.assert_allclose(canon, h / scale, atol=1e-12)


class TestApply:
    def test_round_trip_through_inverse(self, rng):
        h = random_homography(rng)
        pts = rng.uniform(0.0, 200.0, (30, 2))
        back = map_points(np.linalg.inv(h), map_points(h, pts))
        np.testing.assert_allclose(back, pts, atol=1e-8)

    def test_point_at_infinity_raises(self):
        h = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
        with pytest.raises(PointAtInfinityError):
            apply_homography(h, (0.0, 5.0))

    def test_many_flags_infinite_points(self):
        h = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
        pts = np.array([[0.0, 5.0], [2.0, 1.0]])
        out, valid = apply_homography_many(h, pts)
        assert valid.tolist() == [False, True]
        np.testing.assert_allclose(out[1], [1.0, 0.5], atol=1e-12)

    def test_transfer_errors_zero_on_consistent(self, rng):
        h = random_homography(rng)
        matches = consistent_matches(h, 10, rng)
        np.testing.assert_allclose(transfer_errors(h, matches.src, matches.dst), 0.0, atol=1e-7)


class TestRansac:
    def test_fifty_fifty_contamination(self, rng):
        """Half the matches follow one homography, half are uniform junk.
        The fit must land on the structured half."""
        truth = random_homography(rng)
        inliers = consistent_matches(truth, 50, rng)
        junk_src = rng.uniform(0.0, 200.0, (50, 2))
        junk_dst = rng.uniform(0.0, 200.0, (50, 2)) + 300.0
        src = np.vstack([inliers.src, junk_src])
        dst = np.vstack([inliers.dst, junk_dst])
        perm = rng.permutation(100)
        matches = CorrespondenceSet(src[perm], dst[perm])
        h, kept = ransac_homography(matches, inlier_threshold=1.0, max_iters=500, seed=0)
        assert len(kept) >= 48
        assert homography_distance(h, truth, probe_grid(200, 150)) < 0.5

    def test_clean_data_keeps_everything(self, rng):
        truth = random_homography(rng)
        matches = consistent_matches(truth, 25, rng)
        h, kept = ransac_homography(matches, inlier_threshold=1.0, seed=3)
        assert len(kept) == 25
        assert homography_distance(h, truth, probe_grid(200, 150)) < 1e-5

    def test_deterministic_for_fixed_seed(self, rng):
        truth = random_homography(rng)
        inliers = consistent_matches(truth, 30, rng)
        noisy = CorrespondenceSet(
            np.vstack([inliers.src, rng.uniform(0, 200, (20, 2))]),
            np.vstack([inliers.dst, rng.uniform(0, 200, (20, 2))]),
        )
        h1, k1 = ransac_homography(noisy, seed=11)
        h2, k2 = ransac_homography(noisy, seed=11)
        np.testing.assert_array_equal(h1, h2)
        np.testing.assert_array_equal(k1.src, k2.src)

    def test_no_consensus_raises(self, rng):
        """Collinear sources make every 4-point hypothesis degenerate."""
        src = np.column_stack([np.arange(12.0), 3.0 * np.arange(12.0) + 1.0])
        dst = rng.uniform(0.0, 100.0, (12, 2))
        with pytest.raises(NoConsensusError):
            ransac_homography(CorrespondenceSet(src, dst), max_iters=50, seed=0)
