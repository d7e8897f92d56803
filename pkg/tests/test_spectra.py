import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import posteriorlens as pl
from posteriorlens import oracle
from posteriorlens.errors import ValidationError, WireDecodeError
from posteriorlens.spectra import (
    PcConfig,
    convergence_to_csv,
    convergence_trace,
    jvp,
    posterior_pcs,
    posterior_pcs_from_matvec,
    read_plpc,
    write_plpc,
)


def linear_denoiser(variances, means=None):
    means = means if means is not None else [0.0] * len(variances)
    return pl.make_linear_gaussian_denoiser(pl.LinearGaussianSpec(means, variances))


class TestJvp:
    def test_linear_map_exact_for_any_c(self):
        den = linear_denoiser([1.0, 1.0])
        v = np.array([0.3, -0.7])
        for c in (1e-5, 1e-2, 1.0):
            np.testing.assert_allclose(
                jvp(den, [0.4, 0.1], v, 1.0, c), v / 2.0, atol=1e-12
            )

    def test_zero_vector(self):
        den = linear_denoiser([1.0, 1.0])
        np.testing.assert_array_equal(jvp(den, [0.0, 0.0], np.zeros(2), 1.0), np.zeros(2))

    def test_step_robustness_on_gmm(self, gmm_2d_prior):
        den = pl.make_gmm_denoiser(gmm_2d_prior)
        y = np.array([0.4, -0.3])
        v = np.array([0.6, 0.8])
        a = jvp(den, y, v, 2.0, c=1e-5)
        b = jvp(den, y, v, 2.0, c=1e-6)
        assert np.max(np.abs(a - b)) <= 1e-4 * np.max(np.abs(a))

    def test_invalid_c(self, gmm_2d_prior):
        den = pl.make_gmm_denoiser(gmm_2d_prior)
        with pytest.raises(ValidationError):
            jvp(den, [0.0, 0.0], [1.0, 0.0], 1.0, c=0.0)


class TestPosteriorPcs:
    def test_diagonal_linear_gaussian_axes(self):
        den = linear_denoiser([4.0, 1.0])
        cfg = PcConfig(n_components=2, iterations=50, seed=3, convergence_threshold=None)
        pcs = posterior_pcs(den, [0.3, 0.7], 1.0, cfg)
        assert abs(pcs.vectors[0, 0]) >= 1.0 - 1e-10
        assert abs(pcs.vectors[1, 1]) >= 1.0 - 1e-10
        np.testing.assert_allclose(pcs.eigenvalues, [0.8, 0.5], rtol=1e-10)

    def test_isotropic_degenerate_spectrum(self):
        den = linear_denoiser([1.0, 1.0])
        pcs = posterior_pcs(den, [0.0, 0.0], 1.0, PcConfig(n_components=2, seed=5))
        vtv = pcs.vectors.T @ pcs.vectors
        np.testing.assert_allclose(vtv, np.eye(2), atol=1e-12)
        np.testing.assert_allclose(pcs.eigenvalues, [0.5, 0.5], atol=1e-10)

    def test_gmm_2d_matches_oracle_eigensystem(self, gmm_2d_prior):
        den = pl.make_gmm_denoiser(gmm_2d_prior)
        y = np.array([0.4, -0.3])
        oc = oracle.oracle_posterior_covariance(gmm_2d_prior, 2.0, y)
        pcs = posterior_pcs(den, y, 2.0, PcConfig(n_components=2, iterations=50, seed=1))
        for i in range(2):
            assert abs(pcs.vectors[:, i] @ oc.eigenvectors[:, i]) >= 0.999
            assert pcs.eigenvalues[i] == pytest.approx(oc.eigenvalues[i], rel=0.01)

    def test_seed_determinism_bitwise(self, gmm_2d_prior):
        den = pl.make_gmm_denoiser(gmm_2d_prior)
        y = np.array([0.4, -0.3])
        cfg = PcConfig(n_components=2, iterations=20, seed=42)
        a = posterior_pcs(den, y, 2.0, cfg)
        b = posterior_pcs(den, y, 2.0, cfg)
        assert a.vectors.tobytes() == b.vectors.tobytes()
        assert a.eigenvalues.tobytes() == b.eigenvalues.tobytes()
        assert a.convergence.tobytes() == b.convergence.tobytes()

    def test_eigenvalues_match_masked_closed_form_jacobian(self):
        variances = [9.0, 4.0, 1.0, 0.25]
        den = linear_denoiser(variances)
        sigma = 1.0
        gains = np.array([v / (v + 1.0) for v in variances])
        mask = np.array([True, False, True, True])
        cfg = PcConfig(n_components=2, iterations=60, seed=0, mask=mask,
                       convergence_threshold=None)
        pcs = posterior_pcs(den, np.zeros(4), sigma, cfg)
        expected = np.sort(gains[mask])[::-1][:2]
        np.testing.assert_allclose(pcs.eigenvalues, expected, rtol=1e-8)

    def test_masked_run_equals_zero_padded_subproblem(self):
        variances = [4.0, 2.0, 1.0]
        den3 = linear_denoiser(variances)
        mask = np.array([True, False, True])
        cfg = PcConfig(n_components=2, iterations=50, seed=7, mask=mask,
                       convergence_threshold=None)
        pcs = posterior_pcs(den3, np.zeros(3), 1.0, cfg)
        assert np.all(pcs.vectors[1, :] == 0.0)
        den2 = linear_denoiser([4.0, 1.0])
        # the masked coordinates' gains are what the subproblem sees
        sub = posterior_pcs(
            den2, np.zeros(2), 1.0,
            PcConfig(n_components=2, iterations=50, seed=7, convergence_threshold=None),
        )
        np.testing.assert_allclose(pcs.eigenvalues, sub.eigenvalues, atol=1e-10)
        for i in range(2):
            assert abs(pcs.vectors[[0, 2], i] @ sub.vectors[:, i]) >= 1.0 - 1e-10

    def test_fd_jvp_agrees_with_analytic_jacobian_pcs(self, gmm_2d_prior):
        den = pl.make_gmm_denoiser(gmm_2d_prior)
        y = np.array([0.4, -0.3])
        cfg = PcConfig(n_components=2, iterations=50, seed=2)
        approx = posterior_pcs(den, y, 2.0, cfg)
        jac = oracle.gmm_denoiser_jacobian(gmm_2d_prior, 2.0, y)
        exact = posterior_pcs_from_matvec(lambda v: jac @ v, 2, 2.0, cfg)
        for i in range(2):
            assert abs(approx.vectors[:, i] @ exact.vectors[:, i]) >= 0.96

    def test_collinear_iterates_rerandomized_and_recorded(self):
        # rank-1 Jacobian: every iterate collapses onto one direction
        proj = np.outer([0.8, 0.6], [0.8, 0.6])
        den = pl.DenoiserHandle(
            evaluate=lambda b, s: b @ proj.T, dimension=2, sigma_aware=True
        )
        pcs = posterior_pcs(den, np.zeros(2), 1.0,
                            PcConfig(n_components=2, iterations=5, seed=1))
        assert len(pcs.events) >= 1
        assert "re-randomized" in pcs.events[0]
        assert pcs.eigenvalues[1] == pytest.approx(0.0, abs=1e-9)

    def test_mask_must_keep_enough_coordinates(self):
        with pytest.raises(ValidationError):
            PcConfig(n_components=3, mask=np.array([True, True, False]))


class TestOrthonormalityProperty:
    @given(
        seed=st.integers(0, 2 ** 31),
        n=st.integers(1, 3),
        masked=st.booleans(),
    )
    @settings(max_examples=20)
    def test_orthonormal_and_mask_supported(self, seed, n, masked):
        rng = np.random.default_rng(seed)
        d = 4
        variances = rng.uniform(0.2, 5.0, size=d)
        den = linear_denoiser(list(variances))
        mask = None
        if masked:
            mask = np.zeros(d, dtype=bool)
            keep = rng.choice(d, size=max(n, 2), replace=False)
            mask[keep] = True
        cfg = PcConfig(n_components=n, iterations=15, seed=seed, mask=mask)
        pcs = posterior_pcs(den, rng.standard_normal(d), 1.3, cfg)
        vtv = pcs.vectors.T @ pcs.vectors
        assert np.max(np.abs(vtv - np.eye(n))) <= 1e-10
        assert np.max(np.abs(np.diag(vtv) - 1.0)) <= 1e-12
        assert np.all(np.diff(pcs.eigenvalues) <= 1e-12)
        assert np.all(pcs.eigenvalues >= 0.0)
        if masked:
            assert np.all(pcs.vectors[~mask, :] == 0.0)


class TestConvergenceTrace:
    def test_isotropic_all_ones_from_second_iteration(self):
        den = linear_denoiser([1.0, 1.0])
        cfg = PcConfig(n_components=2, iterations=8, seed=4, convergence_threshold=None)
        pcs = posterior_pcs(den, [0.1, -0.2], 1.0, cfg)
        trace = convergence_trace(pcs)
        assert trace.shape == (8, 2)
        np.testing.assert_allclose(trace[1:], 1.0, atol=1e-12)

    def test_gmm_converged_by_50(self, gmm_2d_prior):
        den = pl.make_gmm_denoiser(gmm_2d_prior)
        cfg = PcConfig(n_components=2, iterations=50, seed=9, convergence_threshold=None)
        pcs = posterior_pcs(den, [0.4, -0.3], 2.0, cfg)
        assert float(np.min(pcs.convergence[-1])) >= 1.0 - 1e-6

    def test_single_iteration_trace(self):
        den = linear_denoiser([2.0, 1.0])
        pcs = posterior_pcs(den, [0.0, 0.0], 1.0, PcConfig(n_components=2, iterations=1))
        assert pcs.convergence.shape == (1, 2)
        assert np.all(np.isfinite(pcs.convergence))

    def test_early_stop_records_iterations_run(self, gmm_2d_prior):
        den = pl.make_gmm_denoiser(gmm_2d_prior)
        pcs = posterior_pcs(den, [0.4, -0.3], 2.0,
                            PcConfig(n_components=2, iterations=50, seed=1))
        assert pcs.iterations_run < 50
        assert pcs.convergence.shape == (pcs.iterations_run, 2)

    def test_csv_export_shape(self, gmm_2d_prior):
        den = pl.make_gmm_denoiser(gmm_2d_prior)
        pcs = posterior_pcs(den, [0.4, -0.3], 2.0,
                            PcConfig(n_components=2, iterations=5,
                                     convergence_threshold=None))
        lines = convergence_to_csv(pcs).strip().splitlines()
        assert lines[0] == "iteration,cosine_pc1,cosine_pc2"
        assert len(lines) == 6


class TestPlpcFormat:
    def test_round_trip_lossless(self, gmm_2d_prior):
        den = pl.make_gmm_denoiser(gmm_2d_prior)
        pcs = posterior_pcs(den, [0.4, -0.3], 2.0, PcConfig(n_components=2, seed=1))
        blob = write_plpc(pcs)
        assert blob[:4] == b"PLPC"
        back = read_plpc(blob)
        assert back.vectors.tobytes() == pcs.vectors.tobytes()
        assert back.eigenvalues.tobytes() == pcs.eigenvalues.tobytes()

    def test_bad_magic_rejected(self):
        with pytest.raises(WireDecodeError):
            read_plpc(b"NOPE" + b"\x00" * 40)

    def test_truncated_payload_rejected(self, gmm_2d_prior):
        den = pl.make_gmm_denoiser(gmm_2d_prior)
        pcs = posterior_pcs(den, [0.4, -0.3], 2.0, PcConfig(n_components=1, seed=1))
        blob = write_plpc(pcs)
        with pytest.raises(WireDecodeError, match="length"):
            read_plpc(blob[:-3])

    def test_version_mismatch_rejected(self, gmm_2d_prior):
        den = pl.make_gmm_denoiser(gmm_2d_prior)
        pcs = posterior_pcs(den, [0.4, -0.3], 2.0, PcConfig(n_components=1, seed=1))
        blob = bytearray(write_plpc(pcs))
        blob[4] = 9
        with pytest.raises(WireDecodeError, match="version"):
            read_plpc(bytes(blob))
