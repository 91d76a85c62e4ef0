import itertools
import math

import numpy as np
import pytest

from conftest import data_path
from functional import (
    GridFunction,
    GridFunctionSpace,
    ProjectionCertificate,
    certify_all_projections,
    certify_projection_dp,
    functional_laplace_scale,
    load_functional_database,
    project,
    sample_noise,
    sanitize_function,
    sanitize_records,
)
from mechanism import PrivacyParams, laplace_scale
from utils import CapacityError, SpecError


@pytest.fixture
def grid3():
    return GridFunctionSpace((0.0, 0.5, 1.0), 0.0, 1.0)


class TestGridFunctionSpace:
    def test_grid_validation(self):
        with pytest.raises(SpecError):
            GridFunctionSpace((), 0.0, 1.0)
        with pytest.raises(SpecError, match="increasing"):
            GridFunctionSpace((0.5, 0.5), 0.0, 1.0)
        with pytest.raises(SpecError, match=r"\[0, 1\]"):
            GridFunctionSpace((0.0, 1.5), 0.0, 1.0)
        with pytest.raises(SpecError):
            GridFunctionSpace((0.0,), 1.0, 1.0)

    def test_clipping(self, grid3, caplog):
        f = grid3.make_function([-0.5, 0.5, 2.0])
        assert f.values == (0.0, 0.5, 1.0)
        assert "clipped 2 sample(s)" in caplog.text

    def test_function_checked_against_its_space(self, grid3):
        assert grid3.make_function([0.1, 0.2, 0.3]).space is grid3
        with pytest.raises(SpecError, match="expected 3 samples"):
            GridFunction((0.1, 0.2), grid3)
        with pytest.raises(SpecError, match=r"positions \[3\]"):
            GridFunction((0.1, 0.2, 1.5), grid3)
        with pytest.raises(SpecError, match="finite"):
            GridFunction((0.1, math.nan))
        with pytest.raises(SpecError, match="at least one sample"):
            GridFunction(())
        assert GridFunction((0.1, 0.2, 0.3), grid3) == GridFunction((0.1, 0.2, 0.3))

    def test_distances(self, grid3):
        f = grid3.make_function([0.0, 0.5, 1.0])
        g = grid3.make_function([0.2, 0.5, 0.4])
        assert grid3.sup_distance(f, g) == pytest.approx(0.6)
        assert grid3.l1_distance(f, g) == pytest.approx(0.8)
        assert grid3.record_diameter == 3.0

    def test_project(self, grid3):
        f = grid3.make_function([0.1, 0.2, 0.3])
        assert project(f, [1, 3]) == [0.1, 0.3]
        with pytest.raises(SpecError, match="outside"):
            project(f, [0])
        with pytest.raises(SpecError, match="increasing"):
            project(f, [3, 1])
        with pytest.raises(SpecError, match="nonempty"):
            project(f, [])


class TestCalibration:
    def test_single_point_matches_laplace_scale(self):
        space = GridFunctionSpace((0.3,), -1.0, 2.0)
        params = PrivacyParams(0.7, 0.05)
        assert functional_laplace_scale(space, params) == laplace_scale(3.0, params)

    def test_scale_grows_with_grid(self, grid3):
        assert functional_laplace_scale(grid3, PrivacyParams(1.0)) == pytest.approx(3.0)


class TestCertificates:
    def test_calibrated_scale_certifies_everything(self, grid3):
        params = PrivacyParams(1.0, 0.1)
        b = functional_laplace_scale(grid3, params)
        certificates = certify_all_projections(grid3, b, params)
        assert len(certificates) == 7
        assert all(c.certified for c in certificates)

    def test_full_projection_is_the_binding_one(self, grid3):
        params = PrivacyParams(1.0)
        certificate = certify_projection_dp(grid3, 2.0, params, [1, 2, 3])
        assert not certificate.certified
        assert certificate.worst_case_ratio == pytest.approx(math.exp(1.5))
        assert certify_projection_dp(grid3, 2.0, params, [1, 3]).certified

    @pytest.mark.parametrize("k", range(1, 7))
    def test_monotone_in_the_index_set(self, k):
        space = GridFunctionSpace(tuple(np.linspace(0, 1, k)), 0.0, 1.0)
        params = PrivacyParams(0.8, 0.0)
        b = 0.6 * functional_laplace_scale(space, params)
        by_indices = {c.indices: c for c in certify_all_projections(space, b, params)}
        assert len(by_indices) == 2 ** k - 1
        for indices, certificate in by_indices.items():
            for size in range(1, len(indices)):
                for subset in itertools.combinations(indices, size):
                    smaller = by_indices[subset]
                    assert smaller.worst_case_ratio <= certificate.worst_case_ratio
                    if certificate.certified:
                        assert smaller.certified

    def test_vacuous_delta_always_certifies(self, grid3):
        certificate = certify_projection_dp(grid3, 1e-3, PrivacyParams(0.0, 1.0), [1, 2, 3])
        assert certificate.certified
        assert certificate.worst_case_ratio == math.inf

    def test_capacity(self):
        space = GridFunctionSpace(tuple(np.linspace(0, 1, 17)), 0.0, 1.0)
        with pytest.raises(CapacityError):
            certify_all_projections(space, 1.0, PrivacyParams(1.0))

    def test_round_trip(self, grid3):
        certificate = certify_projection_dp(grid3, 4.0, PrivacyParams(1.0), [2])
        assert ProjectionCertificate.from_dict(certificate.to_dict()) == certificate


class TestSanitisation:
    def test_noise_statistics(self):
        b = 0.7
        noise = sample_noise(b, 3, 100_000, seed=123)
        assert noise.shape == (100_000, 3)
        # |L| is exponential with mean b and standard deviation b
        sigma = b / math.sqrt(noise.shape[0])
        np.testing.assert_allclose(np.abs(noise).mean(axis=0), b, atol=3 * sigma)
        np.testing.assert_allclose(noise.mean(axis=0), 0.0, atol=4 * math.sqrt(2) * sigma)

    def test_sanitize_function_is_seeded(self, grid3):
        f = grid3.make_function([0.1, 0.2, 0.3])
        first = sanitize_function(f, 0.5, seed=4)
        assert first == sanitize_function(f, 0.5, seed=4)
        assert first != sanitize_function(f, 0.5, seed=5)
        assert len(first) == 3

    def test_noise_columns_do_not_depend_on_k(self):
        wide = sample_noise(1.0, 4, 10, seed=8)
        narrow = sample_noise(1.0, 2, 10, seed=8)
        np.testing.assert_array_equal(wide[:, :2], narrow)

    def test_records_get_independent_noise(self, grid3):
        f = grid3.make_function([0.5, 0.5, 0.5])
        out = sanitize_records([f, f], 1.0, seed=1)
        assert len(out) == 2
        assert out[0] != out[1]

    def test_grid_points_get_uncorrelated_noise(self):
        noise = sample_noise(1.0, 2, 100_000, seed=21)
        assert abs(np.corrcoef(noise[:, 0], noise[:, 1])[0, 1]) <= 0.02

    def test_tiny_scale_leaves_function_unchanged(self, grid3):
        f = grid3.make_function([0.1, 0.6, 0.9])
        out = sanitize_function(f, 1e-12, seed=2)
        np.testing.assert_allclose(out, f.values, rtol=0, atol=1e-9)

    def test_rejects_bad_scale(self, grid3):
        with pytest.raises(SpecError):
            sample_noise(0.0, 3, 1, seed=0)


class TestLoading:
    def test_load_functional_database(self, caplog):
        space, records = load_functional_database(data_path("functional.csv"), 0.0, 1.0)
        assert space.grid == (0.0, 0.5, 1.0)
        assert len(records) == 2
        assert records[1].values == (0.9, 1.0, 0.0)
        assert "clipped" in caplog.text

    def test_short_file(self, tmp_path):
        path = tmp_path / "only_grid.csv"
        path.write_text("0.0,1.0\n")
        with pytest.raises(SpecError, match="at least one record"):
            load_functional_database(str(path), 0.0, 1.0)
