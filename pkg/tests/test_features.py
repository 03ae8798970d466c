import numpy as np
import pytest

from paofed.features import (
    FeatureMap,
    build_feature_map,
    map_input,
    median_kernel_width,
)


def test_build_is_deterministic_in_seed():
    a = build_feature_map(5, 1, 1, 1.0)
    b = build_feature_map(5, 1, 1, 1.0)
    assert np.array_equal(a.frequencies, b.frequencies)
    assert np.array_equal(a.phases, b.phases)


def test_different_seeds_differ():
    a = build_feature_map(1, 4, 32, 1.0)
    b = build_feature_map(2, 4, 32, 1.0)
    assert np.any(a.frequencies != b.frequencies)


def test_shapes_and_phase_range():
    fm = build_feature_map(7, 4, 200, 1.3)
    assert fm.frequencies.shape == (200, 4)
    assert fm.phases.shape == (200,)
    assert np.all(fm.phases >= 0.0) and np.all(fm.phases < 2 * np.pi)


@pytest.mark.parametrize("bad", [dict(dim_in=0), dict(dim_out=0), dict(kernel_width=0.0),
                                 dict(kernel_width=-1.0)])
def test_invalid_arguments(bad):
    kw = dict(seed=0, dim_in=4, dim_out=8, kernel_width=1.0)
    kw.update(bad)
    with pytest.raises(ValueError):
        build_feature_map(**kw)


def test_zero_frequency_map_gives_constant_entries():
    fm = build_feature_map(0, 3, 8, 1.0)
    object.__setattr__(fm, "frequencies", np.zeros((8, 3)))
    object.__setattr__(fm, "phases", np.zeros(8))
    z = map_input(fm, np.array([0.3, -0.7, 2.0]))
    assert np.allclose(z, np.sqrt(2.0 / 8))


def test_norm_bound_holds():
    fm = build_feature_map(3, 4, 64, 0.9)
    rng = np.random.default_rng(0)
    for _ in range(50):
        z = map_input(fm, rng.uniform(-3, 3, size=4))
        assert np.all(np.abs(z) <= np.sqrt(2.0 / 64) + 1e-15)
        assert z @ z <= 2.0 + 1e-12


def test_length_mismatch_raises():
    fm = build_feature_map(0, 4, 8, 1.0)
    with pytest.raises(ValueError):
        map_input(fm, np.zeros(3))
    with pytest.raises(ValueError):
        fm.transform(np.zeros((5, 3)))


def test_map_is_pure_and_batch_consistent():
    fm = build_feature_map(11, 4, 16, 1.2)
    x = np.array([0.1, -0.2, 0.5, 0.9])
    z1 = map_input(fm, x)
    z2 = map_input(fm, x)
    assert np.array_equal(z1, z2)
    assert np.allclose(fm.transform(x[None, :])[0], z1)


def test_kernel_approximation_monte_carlo():
    # E over map draws of z(x).z(x') equals the Gaussian kernel value.
    sigma = 1.1
    rng = np.random.default_rng(3)
    x, xp = rng.uniform(-1, 1, 4), rng.uniform(-1, 1, 4)
    target = np.exp(-np.sum((x - xp) ** 2) / (2 * sigma**2))
    acc = 0.0
    n_maps = 2000
    for s in range(n_maps):
        fm = build_feature_map(s, 4, 64, sigma)
        acc += map_input(fm, x) @ map_input(fm, xp)
    assert abs(acc / n_maps - target) < 0.05


def test_maps_are_immutable():
    fm = build_feature_map(0, 2, 4, 1.0)
    with pytest.raises(ValueError):
        fm.frequencies[0, 0] = 1.0


def test_serialization_round_trip(tmp_path):
    fm = build_feature_map(21, 4, 32, 0.8)
    path = tmp_path / "fm.json"
    fm.save(path)
    fm2 = FeatureMap.load(path)
    assert np.array_equal(fm.frequencies, fm2.frequencies)
    assert np.array_equal(fm.phases, fm2.phases)
    probe = np.array([0.5, -0.5, 0.25, 1.0])
    assert np.array_equal(map_input(fm, probe), map_input(fm2, probe))


def test_median_kernel_width():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(256, 4))
    w = median_kernel_width(X)
    diff = X[:, None, :] - X[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    assert w == pytest.approx(np.median(dist[np.triu_indices(256, 1)]))
    with pytest.raises(ValueError):
        median_kernel_width(X[:1])
    with pytest.raises(ValueError):
        median_kernel_width(np.zeros((10, 3)))
