import json
import math

import numpy as np
import pytest

import posteriorlens as pl
from posteriorlens import oracle
from posteriorlens.errors import ValidationError

from conftest import FIXTURE_DIR, leggauss_quadrature, load_golden_csv


class TestPosteriorComponents:
    def test_single_component_gaussian_conditioning(self):
        prior = pl.GmmPrior([1.0], [[1.0]], [[2.0]])
        comps = oracle.gmm_posterior_components(prior, 1.0, [4.0])
        assert len(comps) == 1
        c = comps[0]
        assert c.responsibility == pytest.approx(1.0, abs=1e-15)
        # mbar = s2/(s2+sig2) (y - m) + m; cbar = s2 - s2^2/(s2+sig2)
        assert c.mean[0] == pytest.approx(1.0 + (2.0 / 3.0) * 3.0, abs=1e-12)
        assert c.covariance[0, 0] == pytest.approx(2.0 - 4.0 / 3.0, abs=1e-12)

    def test_symmetric_prior_splits_even(self, bimodal_1d_prior):
        comps = oracle.gmm_posterior_components(bimodal_1d_prior, 1.0, [0.0])
        assert [c.responsibility for c in comps] == pytest.approx([0.5, 0.5], abs=1e-14)

    def test_responsibilities_match_bayes_quadrature(self, bimodal_1d_prior):
        """Independent route: responsibility_l is the quadrature mass of
        component l's joint density against the likelihood."""
        y, sigma = 1.0, 1.0
        xs, ws = leggauss_quadrature(-8.0, 8.0, 2400)
        lik = np.exp(-0.5 * (y - xs) ** 2 / sigma ** 2)
        masses = []
        for w, m, c in zip(
            bimodal_1d_prior.weights,
            bimodal_1d_prior.means,
            bimodal_1d_prior.covariances,
        ):
            comp_pdf = np.exp(-0.5 * (xs - m[0]) ** 2 / c[0, 0]) / math.sqrt(
                2 * math.pi * c[0, 0]
            )
            masses.append(w * float(np.dot(ws, lik * comp_pdf)))
        expected = np.array(masses) / sum(masses)
        comps = oracle.gmm_posterior_components(bimodal_1d_prior, sigma, [y])
        got = np.array([c.responsibility for c in comps])
        np.testing.assert_allclose(got, expected, atol=1e-10)

    def test_posterior_mean_matches_denoiser(self, gmm_2d_prior):
        den = pl.make_gmm_denoiser(gmm_2d_prior)
        y = np.array([0.4, -0.3])
        np.testing.assert_allclose(
            oracle.posterior_mean(gmm_2d_prior, 2.0, y), den.evaluate(y, 2.0), atol=1e-12
        )


class TestMarginalDensity:
    def test_single_component_is_gaussian(self):
        prior = pl.GmmPrior([1.0], [[0.5, -0.5]], [np.diag([1.0, 2.0])])
        v = np.array([1.0, 1.0]) / math.sqrt(2)
        comps = oracle.gmm_posterior_components(prior, 1.0, [0.0, 0.0])
        var = float(v @ comps[0].covariance @ v)
        mu = float(v @ comps[0].mean)
        alphas = np.linspace(mu - 3, mu + 3, 101)
        dens = oracle.gmm_marginal_along(prior, 1.0, [0.0, 0.0], v, alphas)
        expected = np.exp(-0.5 * (alphas - mu) ** 2 / var) / math.sqrt(2 * math.pi * var)
        np.testing.assert_allclose(dens, expected, atol=1e-12)

    def test_integrates_to_one(self, gmm_2d_prior):
        v = np.array([0.8, 0.6])
        grid = np.linspace(-15, 15, 20001)
        dens = oracle.gmm_marginal_along(gmm_2d_prior, 2.0, [0.4, -0.3], v, grid)
        assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-8)

    def test_bimodal_along_top_pc(self, gmm_2d_prior):
        oc = oracle.oracle_posterior_covariance(gmm_2d_prior, 2.0, [0.4, -0.3])
        v = oc.eigenvectors[:, 0]
        grid = np.linspace(-6, 6, 2001)
        dens = oracle.gmm_marginal_along(gmm_2d_prior, 2.0, [0.4, -0.3], v, grid, centered=True)
        interior = (dens[1:-1] > dens[:-2]) & (dens[1:-1] > dens[2:])
        assert int(interior.sum()) == 2

    def test_centered_mode_puts_mean_at_zero(self, asym_1d_prior):
        den = pl.make_gmm_denoiser(asym_1d_prior)
        mu1 = float(den.evaluate(0.5, 1.0))
        d_cent = oracle.gmm_marginal_along(asym_1d_prior, 1.0, [0.5], [1.0], [0.0], centered=True)
        d_abs = oracle.gmm_marginal_along(asym_1d_prior, 1.0, [0.5], [1.0], [mu1])
        assert d_cent[0] == pytest.approx(d_abs[0], abs=1e-14)


class TestQuadratureMoments:
    def test_single_component_gaussian_moments(self):
        prior = pl.GmmPrior([1.0], [[0.0, 0.0]], [np.diag([1.0, 0.5])])
        v = np.array([1.0, 0.0])
        m = oracle.quadrature_central_moments(prior, 1.0, [0.3, -0.2], v)
        comps = oracle.gmm_posterior_components(prior, 1.0, [0.3, -0.2])
        var = float(v @ comps[0].covariance @ v)
        assert m.central[0] == pytest.approx(var, rel=1e-10)
        assert m.central[1] == pytest.approx(0.0, abs=1e-12)
        assert m.central[2] == pytest.approx(3 * var ** 2, rel=1e-9)

    def test_symmetric_fixture_odd_moments_vanish(self, bimodal_1d_prior):
        m = oracle.quadrature_central_moments(bimodal_1d_prior, 1.0, [0.0], [1.0], order=6)
        assert m.central[1] == pytest.approx(0.0, abs=1e-12)  # mu3
        assert m.central[3] == pytest.approx(0.0, abs=1e-11)  # mu5

    def test_golden_asymmetric_fixture(self):
        cfg = json.loads((FIXTURE_DIR / "asym_1d.json").read_text())
        prior = pl.GmmPrior(**cfg["prior"])
        m = oracle.quadrature_central_moments(prior, cfg["sigma"], cfg["y"], cfg["v"], order=6)
        golden = {int(r[0]): float(r[1]) for r in load_golden_csv("asym_1d_moments.csv")}
        assert m.mean == pytest.approx(golden[1], rel=1e-12)
        for k in range(2, 7):
            assert m.central[k - 2] == pytest.approx(golden[k], rel=1e-12)
        assert golden[3] != 0.0  # the fixture exists to pin nonzero skewness

    def test_node_floor_enforced(self, bimodal_1d_prior):
        with pytest.raises(ValidationError):
            oracle.quadrature_central_moments(bimodal_1d_prior, 1.0, [0.0], [1.0], nodes=100)


class TestPosteriorCovariance:
    def test_single_isotropic_component(self):
        prior = pl.GmmPrior([1.0], [[0.0, 0.0]], [np.eye(2) * 4.0])
        oc = oracle.oracle_posterior_covariance(prior, 1.0, [1.0, -1.0])
        np.testing.assert_allclose(oc.covariance, np.eye(2) * (4.0 / 5.0), atol=1e-12)

    def test_between_component_spread_adds(self, bimodal_1d_prior):
        oc = oracle.oracle_posterior_covariance(bimodal_1d_prior, 1.0, [0.0])
        comps = oracle.gmm_posterior_components(bimodal_1d_prior, 1.0, [0.0])
        for c in comps:
            assert oc.covariance[0, 0] > c.covariance[0, 0]

    def test_law_of_total_variance_identity(self, gmm_2d_prior):
        y = [0.4, -0.3]
        comps = oracle.gmm_posterior_components(gmm_2d_prior, 2.0, y)
        mu1 = sum(c.responsibility * c.mean for c in comps)
        form_a = sum(
            c.responsibility * (c.covariance + np.outer(c.mean, c.mean)) for c in comps
        ) - np.outer(mu1, mu1)
        form_b = sum(
            c.responsibility
            * (c.covariance + np.outer(c.mean - mu1, c.mean - mu1))
            for c in comps
        )
        np.testing.assert_allclose(form_a, form_b, atol=1e-12)
        oc = oracle.oracle_posterior_covariance(gmm_2d_prior, 2.0, y)
        np.testing.assert_allclose(oc.covariance, form_b, atol=1e-12)

    def test_golden_2d_eigensystem(self):
        cfg = json.loads((FIXTURE_DIR / "gmm2d.json").read_text())
        prior = pl.GmmPrior(**cfg["prior"])
        oc = oracle.oracle_posterior_covariance(prior, cfg["sigma"], cfg["y"])
        golden = load_golden_csv("gmm2d_eigs.csv")
        for quantity, i, j, value in golden:
            i, j, value = int(i), int(j), float(value)
            if quantity == "eigenvalue":
                assert oc.eigenvalues[i] == pytest.approx(value, rel=1e-12)
            elif quantity == "eigenvector":
                assert oc.eigenvectors[j, i] == pytest.approx(value, rel=1e-10)
            elif quantity == "covariance":
                assert oc.covariance[i, j] == pytest.approx(value, rel=1e-12)
            elif quantity == "mean":
                assert oc.mean[i] == pytest.approx(value, rel=1e-12)

    def test_analytic_jacobian_matches_covariance(self, gmm_2d_prior):
        """Two closed-form routes to the same matrix: direct differentiation
        of the posterior mean vs posterior covariance over sigma^2."""
        y = [0.4, -0.3]
        oc = oracle.oracle_posterior_covariance(gmm_2d_prior, 2.0, y)
        jac = oracle.gmm_denoiser_jacobian(gmm_2d_prior, 2.0, y)
        np.testing.assert_allclose(4.0 * jac, oc.covariance, atol=1e-12)


class TestJointQuadratureTensors:
    def test_contractions_match_marginal_quadrature(self, gmm_2d_prior):
        """Directional contractions of joint-posterior tensor moments equal
        the 1-D marginal quadrature moments, independently of any
        denoiser-derivative machinery."""
        y = [0.4, -0.3]
        tensors = oracle.joint_quadrature_central_tensors(gmm_2d_prior, 2.0, y, order=4)
        rng = np.random.default_rng(5)
        for _ in range(4):
            v = rng.standard_normal(2)
            v /= np.linalg.norm(v)
            m = oracle.quadrature_central_moments(gmm_2d_prior, 2.0, y, v, order=4)
            mu2 = float(np.einsum("ab,a,b->", tensors[0], v, v))
            mu3 = float(np.einsum("abc,a,b,c->", tensors[1], v, v, v))
            mu4 = float(np.einsum("abcd,a,b,c,d->", tensors[2], v, v, v, v))
            scale = m.central[0]
            assert abs(mu2 - m.central[0]) <= 1e-6 * scale
            assert abs(mu3 - m.central[1]) <= 1e-6 * scale ** 1.5
            assert abs(mu4 - m.central[2]) <= 1e-6 * scale ** 2

    def test_dimension_cap(self):
        prior = pl.GmmPrior([1.0], [np.zeros(4)], [np.eye(4)])
        with pytest.raises(ValidationError):
            oracle.joint_quadrature_central_tensors(prior, 1.0, np.zeros(4))
