#!/usr/bin/env python3
"""
Test PCA model construction, decoding, encoding and the model file format.
"""
import numpy as np
import pytest

from shapefit.errors import GridFormatError, ShapeModelError
from shapefit.sdf_grid import SdfGrid, sample
from shapefit.shape_model import (
    ShapeModel,
    build_model,
    decode,
    decode_at,
    decode_many,
    encode,
    load_model,
    save_model,
)

DIMS = (6, 5, 4)


def random_exemplars(count, seed=0):
    rng = np.random.default_rng(seed)
    return [SdfGrid(DIMS, (0.0, 0.0, 0.0), 0.1, rng.normal(size=DIMS)) for _ in range(count)]


@pytest.fixture
def model():
    return build_model(random_exemplars(6), 3)


def test_zero_code_decodes_to_mean_exactly(model):
    assert np.array_equal(decode(model, np.zeros(3)).values, model.mean.values)


def test_single_component(model):
    z = np.array([model.sigmas[0], 0.0, 0.0])
    expected = model.mean.values + model.sigmas[0] * model.basis[0].values
    assert np.allclose(decode(model, z).values, expected, atol=1e-12)


def test_decode_is_affine(model):
    rng = np.random.default_rng(1)
    za, zb = rng.normal(size=3), rng.normal(size=3)
    lhs = decode(model, za).values + decode(model, zb).values - decode(model, np.zeros(3)).values
    assert np.allclose(lhs, decode(model, za + zb).values, atol=1e-9)


def test_decode_at_matches_full_decode(model):
    rng = np.random.default_rng(2)
    for _ in range(20):
        z = rng.normal(size=3)
        X = rng.uniform(0.0, 0.3, 3)
        value, basis = decode_at(model, z, X)
        assert value == pytest.approx(sample(decode(model, z), X)[0], abs=1e-12)
        for k in range(3):
            assert basis[k] == pytest.approx(sample(model.basis[k], X)[0], abs=1e-12)


def test_decode_many_gradient_is_linear_in_code(model):
    rng = np.random.default_rng(3)
    points = rng.uniform(0.0, 0.3, (10, 3))
    z = rng.normal(size=3)
    full = decode_many(model, z, points)
    mean = decode_many(model, np.zeros(3), points)
    assert np.allclose(full.values, mean.values + full.basis @ z)


def test_code_length_is_checked(model):
    with pytest.raises(ShapeModelError):
        decode(model, np.zeros(2))


def test_two_exemplar_pca():
    g1, g2 = random_exemplars(2, seed=4)
    m = build_model([g1, g2], 1)
    assert np.allclose(m.mean.values, 0.5 * (g1.values + g2.values))
    diff = (g1.values - g2.values).reshape(-1)
    basis = m.basis[0].values.reshape(-1)
    cosine = abs(diff @ basis) / np.linalg.norm(diff)
    assert cosine == pytest.approx(1.0, abs=1e-9)
    assert np.linalg.norm(basis) == pytest.approx(1.0)


def test_identical_exemplars_are_degenerate():
    g = random_exemplars(1)[0]
    with pytest.raises(ShapeModelError, match="degenerate dataset"):
        build_model([g, g, g], 1)


def test_too_few_exemplars():
    with pytest.raises(ShapeModelError, match="too few exemplars"):
        build_model(random_exemplars(2), 2)


def test_inconsistent_layout_is_rejected():
    a = random_exemplars(2)
    other = SdfGrid(DIMS, (1.0, 0.0, 0.0), 0.1, np.zeros(DIMS))
    with pytest.raises(ShapeModelError):
        build_model(a + [other], 1)


def test_full_rank_reconstruction():
    exemplars = random_exemplars(5, seed=5)
    m = build_model(exemplars, 4)
    for g in exemplars:
        rebuilt = decode(m, encode(m, g))
        rms = np.sqrt(np.mean((rebuilt.values - g.values) ** 2))
        assert rms < 1e-6


def test_sigmas_descend(model):
    assert np.all(np.diff(model.sigmas) <= 0)
    assert np.all(model.sigmas > 0)


def test_basis_is_orthonormal(model):
    basis = np.stack([g.values.reshape(-1) for g in model.basis])
    assert np.allclose(basis @ basis.T, np.eye(3), atol=1e-9)


def test_unsorted_eigenvalues_are_rejected(model):
    with pytest.raises(ShapeModelError):
        ShapeModel(model.mean, model.basis, model.eigenvalues[::-1])


def test_model_file_round_trip(tmp_path, model):
    path = tmp_path / "model.sdfm"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.K == model.K
    assert np.array_equal(loaded.eigenvalues, model.eigenvalues)
    assert np.allclose(loaded.mean.values, model.mean.values, atol=1e-6)
    for a, b in zip(loaded.basis, model.basis):
        assert np.allclose(a.values, b.values, atol=1e-6)


def test_model_file_with_wrong_magic(tmp_path, model):
    path = tmp_path / "model.sdfm"
    save_model(model, path)
    path.write_bytes(b"NOPE" + path.read_bytes()[4:])
    with pytest.raises(GridFormatError):
        load_model(path)
