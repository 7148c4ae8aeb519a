import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mchaos.core import make_grid, make_rng, total_mass
from mchaos.errors import ArgumentError, NumericError
from mchaos.gaussian import (GmcConfig, GmcSampler, augment_layer0, exponentiate_layer, layer_factor,
                             parity_independence_check, sample_gmc, sample_layer)
from mchaos.kernels import KernelDecomposition, LayerKernel, exact_log_decomposition, exact_log_layer


def _zero_layer(j, b=2):
    return LayerKernel(j, b, lambda r: np.zeros_like(np.asarray(r, dtype=float)), 0.0, 0.0)


def _layer_ensemble(layer, grid, S, seed=0):
    return np.array([sample_layer(layer, grid, make_rng(seed, s, layer.j)).values for s in range(S)])


def test_zero_layer_is_zero():
    g = make_grid(1, 2, 6)
    lf = sample_layer(_zero_layer(3), g, make_rng(0, 0, 3))
    assert np.all(lf.values == 0)


@pytest.mark.parametrize("d,j", [(1, 2), (1, 0), (2, 1)])
def test_embedding_reproduces_kernel(d, j):
    # the circulant spectrum must invert back to K_j sampled on the torus
    from mchaos.kernels import make_decomposition
    dec = exact_log_decomposition(2) if d == 1 else make_decomposition("star-scale", 2, 2)
    lay = dec.layer(j)
    g = make_grid(d, 2, 5)
    sq, shape = layer_factor(lay, g)
    c = np.fft.irfftn(sq**2, s=shape, axes=tuple(range(d)))
    N = shape[0]
    k = np.arange(N)
    off = np.where(k < N - k, k, k - N) * g.width
    if d == 1:
        target = lay.radial(np.abs(off))
    else:
        target = lay.radial(np.hypot(off[:, None], off[None, :]))
    assert np.max(np.abs(c - target)) < 1e-10


def test_layer_variance_exact_log_j2():
    lay = exact_log_decomposition(2).layer(2)
    g = make_grid(1, 2, 6)
    x = _layer_ensemble(lay, g, 4096)
    S = x.shape[0]
    var = (x**2).mean(axis=0)  # centred field
    se = math.log(2) * math.sqrt(2 / S)
    assert np.all(np.abs(var[[0, 17, 40, 63]] - math.log(2)) < 3 * se * 1.5)
    assert abs(var.mean() - math.log(2)) < 3 * se


def test_layer_covariance_matches_kernel():
    lay = exact_log_decomposition(2).layer(2)
    g = make_grid(1, 2, 6)
    x = _layer_ensemble(lay, g, 4096, seed=1)
    S = x.shape[0]
    for lag in (1, 3, 8, 20):
        prod = x[:, 10] * x[:, 10 + lag]
        se = prod.std(ddof=1) / math.sqrt(S)
        assert abs(prod.mean() - exact_log_layer(2, 2, lag * g.width)) < 4 * se


def test_layer_independent_beyond_support():
    lay = exact_log_decomposition(2).layer(3)
    g = make_grid(1, 2, 6)
    x = _layer_ensemble(lay, g, 4096, seed=2)
    # cells 9 and 9 + 10 are 10/64 > 1/8 apart
    prod = x[:, 9] * x[:, 19]
    assert abs(prod.mean()) < 3 * prod.std(ddof=1) / math.sqrt(x.shape[0])


def test_exponentiate_gamma_zero():
    lay = exact_log_decomposition(2).layer(1)
    lf = sample_layer(lay, make_grid(1, 2, 4), make_rng(0, 0, 1))
    assert np.all(exponentiate_layer(lf, 0.0) == 1.0)


@pytest.mark.parametrize("gamma", [0.5, 1.0])
def test_exponentiate_moments(gamma):
    lay = exact_log_decomposition(2).layer(2)
    g = make_grid(1, 2, 5)
    S = 8192
    P = np.array([exponentiate_layer(sample_layer(lay, g, make_rng(3, s, 2)), gamma)[7] for s in range(S)])
    se1 = P.std(ddof=1) / math.sqrt(S)
    assert abs(P.mean() - 1) < 3 * se1
    P2 = P**2
    se2 = P2.std(ddof=1) / math.sqrt(S)
    assert abs(P2.mean() - math.exp(gamma**2 * math.log(2))) < 3 * se2


def test_gmc_config_validation():
    with pytest.raises(ArgumentError):
        GmcConfig(1.5, d=1)
    with pytest.raises(ArgumentError):
        GmcConfig(0.5, m=5, grid_level=3)
    assert GmcConfig(0.5, m=4).grid_level == 6
    assert GmcConfig(0.5, d=2).kernel == "star-scale"


def test_gmc_m0_with_null_layer_is_lebesgue():
    dec = KernelDecomposition(2, 0.5, 1, "null-first", lambda j: _zero_layer(j), 1)
    f = GmcSampler(GmcConfig(0.5, m=0), dec).sample(0, 0)
    assert np.all(f.values == 1.0)


def test_gmc_deterministic_and_distinct():
    cfg = GmcConfig(0.5, m=6)
    a, b = sample_gmc(cfg, 11, 2), sample_gmc(cfg, 11, 2)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, sample_gmc(cfg, 11, 3).values)
    assert a.m == 6 and a.seed_path == (11, 2)


def test_gmc_mean_mass_m10():
    cfg = GmcConfig(0.5, m=10)
    mass = np.array([total_mass(sample_gmc(cfg, 5, s)) for s in range(512)])
    assert abs(mass.mean() - 1) < 3 * mass.std(ddof=1) / math.sqrt(mass.size)


def _second_moment_oracle(gamma, m, level):
    # E[mu_m(grid)^2] = delta^2 sum_{i,k} exp(gamma^2 sum_j K_j(x_i - x_k))
    # the summand depends on the lag l = |i - k| only, which occurs (2 - [l = 0])(n - l) times
    g = make_grid(1, 2, level)
    n = g.cells_per_axis
    lag = np.arange(n)
    K = sum(exact_log_layer(2, j, lag * g.width) for j in range(m + 1))
    mult = np.where(lag == 0, 1, 2) * (n - lag)
    return float((mult * np.exp(gamma**2 * K)).sum() * g.width**2)


def test_gmc_second_moment_bounded():
    ms = list(range(4, 13, 2))
    oracle = [_second_moment_oracle(0.5, m, m + 2) for m in ms]
    inc = np.diff(oracle)
    assert np.all(inc > 0) and np.all(inc[1:] < inc[:-1])  # increasing to a finite limit
    for m, o in zip(ms, oracle):
        cfg = GmcConfig(0.5, m=m)
        mass2 = np.array([total_mass(sample_gmc(cfg, 9, s)) ** 2 for s in range(512)])
        assert abs(mass2.mean() - o) < 4 * mass2.std(ddof=1) / math.sqrt(mass2.size)


def test_non_psd_layer_raises():
    bad = LayerKernel(1, 2, lambda r: np.where(np.asarray(r) <= 0.5, 1 - 4 * np.asarray(r), 0.0), 1.0, 0.5)
    with pytest.raises(NumericError):
        sample_layer(bad, make_grid(1, 2, 5), make_rng(0, 0, 1))


def test_parity_check_exact_log():
    dec = exact_log_decomposition(2)
    g = make_grid(1, 2, 6)
    j = 3
    ens = _layer_ensemble(dec.layer(j), g, 4096, seed=4)
    rep = parity_independence_check(ens, g, j)
    assert rep["pass"] and rep["n_pairs"] > 0
    assert rep["same_cell_variance"] == pytest.approx(math.log(2), rel=0.1)


def test_parity_check_flags_long_range_field():
    # a layer whose support spans the unit interval correlates same-parity cells
    g = make_grid(1, 2, 6)
    lay = exact_log_decomposition(2).layer(0)
    ens = _layer_ensemble(lay, g, 4096, seed=5)
    assert not parity_independence_check(ens, g, 3)["pass"]


def test_augment_zero_remainder_unchanged():
    s = GmcSampler(GmcConfig(0.5, m=5, grid_level=6))
    aug = augment_layer0(s, lambda t, u: np.zeros(np.broadcast_shapes(t.shape, u.shape)[:-1]))
    for sid in range(3):
        np.testing.assert_allclose(aug.sample(1, sid).values, s.sample(1, sid).values, rtol=1e-13)


def test_augment_constant_remainder_mean_mass():
    lam = 0.7
    s = GmcSampler(GmcConfig(0.8, m=5, grid_level=6))
    aug = augment_layer0(s, lambda t, u: np.full(np.broadcast_shapes(t.shape, u.shape)[:-1], lam))
    mass = np.array([total_mass(aug.sample(2, i)) for i in range(2048)])
    assert abs(mass.mean() - 1) < 3 * mass.std(ddof=1) / math.sqrt(mass.size)
    # a constant remainder multiplies the field by one global lognormal factor
    ratio = aug.sample(2, 0).values / s.sample(2, 0).values
    # eigh leaves ~1e-15 eigenvalues whose square roots add ~1e-8 noise
    assert np.ptp(ratio) < 1e-6 * ratio.max()


def test_augment_second_moment_nontrivial():
    gamma = 0.6
    R = lambda t, u: 0.4 * np.maximum(1 - 2 * np.linalg.norm(t - u, axis=-1), 0)  # noqa: E731
    s = GmcSampler(GmcConfig(gamma, m=0, grid_level=5))
    aug = augment_layer0(s, R)
    k0 = s.layers[0].k0
    S = 8192
    v = np.array([aug.sample(3, i).values[5] for i in range(S)])
    target = math.exp(gamma**2 * (k0 + 0.4))
    assert abs((v**2).mean() - target) < 3 * (v**2).std(ddof=1) / math.sqrt(S)


def test_augment_rejects_indefinite():
    s = GmcSampler(GmcConfig(0.5, m=2, grid_level=4))
    with pytest.raises(NumericError):
        augment_layer0(s, lambda t, u: np.where(np.linalg.norm(t - u, axis=-1) < 1e-9, 0.0, 1.0))


@settings(max_examples=15)
@given(st.floats(0.05, 1.3), st.integers(0, 6), st.integers(0, 2**20))
def test_gmc_field_positive_finite(gamma, m, seed):
    f = sample_gmc(GmcConfig(gamma, m=m), seed, 0)
    assert np.all(np.isfinite(f.values)) and np.all(f.values > 0)
