import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mchaos.cascades import (WeightLaw, WeightProcess, cascade_moment_report, constant_law, discrete_law,
                             gbm_increment_moment, gbm_moment, gbm_paths, lognormal_law, sample_canonical_cascade,
                             sample_gbm_cascade, sample_generalized_cascade, validate_custom)
from mchaos.core import make_grid, make_rng, total_mass
from mchaos.errors import ArgumentError


def test_constant_weights_give_lebesgue():
    g = make_grid(2, 2, 5)
    f = sample_canonical_cascade(constant_law(), 2, 2, 4, g, 0, 0)
    assert np.all(f.values == 1.0) and f.m == 4


def test_zero_two_weights_level_one():
    law = discrete_law([0, 2], [0.5, 0.5])
    g = make_grid(1, 2, 1)
    masses = []
    for s in range(4000):
        f = sample_canonical_cascade(law, 2, 1, 1, g, 1, s)
        assert set(np.unique(f.values)) <= {0.0, 2.0}
        masses.append(total_mass(f))
    masses = np.array(masses)
    assert set(np.unique(masses)) <= {0.0, 1.0, 2.0}
    assert abs(masses.mean() - 1) < 3 * masses.std(ddof=1) / math.sqrt(masses.size)


def test_half_three_halves_wlogw():
    law = discrete_law([0.5, 1.5], [0.5, 0.5])
    direct = 0.5 * (0.5 * math.log(0.5) + 1.5 * math.log(1.5))
    assert law.mean_wlogw() == pytest.approx(direct, abs=1e-15)
    assert law.mean_wlogw() == pytest.approx(0.1308, abs=1e-4)
    assert law.mean_wlogw() < math.log(2)


def test_discrete_law_validation():
    with pytest.raises(ArgumentError):
        discrete_law([0.5, 2.0], [0.5, 0.5])  # mean 1.25
    with pytest.raises(ArgumentError):
        discrete_law([-1.0, 3.0], [0.5, 0.5])
    with pytest.raises(ArgumentError):
        WeightLaw("weird")


@pytest.mark.parametrize("law", [discrete_law([0.5, 1.5], [0.5, 0.5]), lognormal_law(0.4)])
def test_cascade_mass_moments_vs_recursion(law):
    b, m = 2, 8
    g = make_grid(1, b, m)
    ew2 = law.moment(2.0)
    z2 = 1.0
    for _ in range(m):
        z2 = ew2 / b * z2 + (1 - 1 / b)
    S = 4000
    mass = np.array([total_mass(sample_canonical_cascade(law, b, 1, m, g, 7, s)) for s in range(S)])
    assert abs(mass.mean() - 1) < 3 * mass.std(ddof=1) / math.sqrt(S)
    m2 = mass**2
    assert abs(m2.mean() - z2) < 3 * m2.std(ddof=1) / math.sqrt(S)


def test_cascade_2d_mean_mass():
    law = discrete_law([0.5, 1.5], [0.5, 0.5])
    g = make_grid(2, 2, 5)
    mass = np.array([total_mass(sample_canonical_cascade(law, 2, 2, 4, g, 2, s)) for s in range(1000)])
    assert abs(mass.mean() - 1) < 3 * mass.std(ddof=1) / math.sqrt(mass.size)


def test_cascade_is_piecewise_constant_on_level_m():
    law = lognormal_law(0.5)
    g = make_grid(1, 3, 6)
    f = sample_canonical_cascade(law, 3, 1, 4, g, 0, 0)
    blocks = f.values.reshape(3**4, 9)
    assert np.all(blocks == blocks[:, :1])


def test_cascade_grid_checks():
    with pytest.raises(ArgumentError):
        sample_canonical_cascade(constant_law(), 2, 1, 5, make_grid(1, 2, 4), 0)
    with pytest.raises(ArgumentError):
        sample_canonical_cascade(constant_law(), 3, 1, 2, make_grid(1, 2, 4), 0)


def test_gbm_sigma_zero_is_lebesgue():
    g = make_grid(1, 2, 8)
    assert np.all(sample_gbm_cascade(0.0, 2, 6, g, 0, 0).values == 1.0)


def test_gbm_sigma_range():
    with pytest.raises(ArgumentError):
        sample_gbm_cascade(math.sqrt(2 * math.log(2)), 2, 4, make_grid(1, 2, 6), 0)


def test_gbm_pointwise_moments():
    sigma = 0.6
    u = np.broadcast_to(np.linspace(0.05, 1.0, 20), (50_000, 20))
    W = gbm_paths(sigma, u, make_rng(0, 0, 0))
    n = W.shape[0]
    for k in (0, 9, 19):
        t = u[0, k]
        assert abs(W[:, k].mean() - 1) < 3 * W[:, k].std(ddof=1) / math.sqrt(n)
        w2 = W[:, k] ** 2
        assert abs(w2.mean() - gbm_moment(sigma, 2, t)) < 3 * w2.std(ddof=1) / math.sqrt(n)
        assert gbm_moment(sigma, 2, t) == pytest.approx(math.exp(sigma**2 * t))


def test_gbm_increment_regularity():
    sigma = 0.6
    u = np.broadcast_to(np.array([0.2, 0.5, 0.9]), (100_000, 3))
    W = gbm_paths(sigma, u, make_rng(1, 0, 0))
    for i, k in ((0, 1), (1, 2), (0, 2)):
        inc = (W[:, k] - W[:, i]) ** 2
        target = gbm_increment_moment(sigma, u[0, k], u[0, i])
        assert target == pytest.approx(abs(math.exp(sigma**2 * u[0, k]) - math.exp(sigma**2 * u[0, i])))
        assert abs(inc.mean() - target) < 3 * inc.std(ddof=1) / math.sqrt(inc.size)


def test_gbm_cascade_mean_mass():
    g = make_grid(1, 2, 10)
    sig = math.sqrt(math.log(2)) / 2
    mass = np.array([total_mass(sample_gbm_cascade(sig, 2, 8, g, 4, s)) for s in range(1000)])
    assert abs(mass.mean() - 1) < 3 * mass.std(ddof=1) / math.sqrt(mass.size)


def test_generalized_custom_process():
    # W(u) = 1 + 0.5 sin(2 pi (u + U)) with U uniform has mean 1 at every u
    def sampler(rng, u):
        shift = rng.random((u.shape[0], 1))
        return 1 + 0.5 * np.sin(2 * np.pi * (u + shift))

    proc = WeightProcess("custom", sampler=sampler, moment_fn=lambda p: 1.5**p)
    g = make_grid(1, 2, 9)
    mass = np.array([total_mass(sample_generalized_cascade(proc, 2, 6, g, 0, s)) for s in range(800)])
    assert abs(mass.mean() - 1) < 3 * mass.std(ddof=1) / math.sqrt(mass.size)
    assert proc.profile()(2.0) == 2.25


def test_custom_process_needs_moment_bound():
    with pytest.raises(ArgumentError):
        WeightProcess("custom", sampler=lambda rng, u: np.ones_like(u)).profile()


def test_validate_custom_law():
    good = WeightLaw("custom", sampler=lambda rng, size: rng.exponential(1.0, size))
    assert abs(validate_custom(good) - 1) < 0.1
    with pytest.raises(ArgumentError):
        validate_custom(WeightLaw("custom", sampler=lambda rng, size: rng.exponential(2.0, size)))
    with pytest.raises(ArgumentError):
        validate_custom(WeightLaw("custom", sampler=lambda rng, size: rng.standard_normal(size) + 1))


def test_moment_report_half_three_halves():
    rep = cascade_moment_report(discrete_law([0.5, 1.5], [0.5, 0.5]), [1.5, 2.0], 2, 1)
    row = rep["moments"][-1]
    assert row["moment"] == pytest.approx(1.25) and row["threshold"] == 2.0 and row["pass"]
    assert rep["pass"] and not rep["degenerate"]


@given(st.floats(0.01, 2.0), st.sampled_from([2, 3]), st.integers(1, 2))
def test_moment_report_lognormal_wlogw(sigma, b, d):
    rep = cascade_moment_report(lognormal_law(sigma), [1.5], b, d)
    assert rep["wlogw"] == pytest.approx(sigma**2 / 2)
    assert rep["wlogw_pass"] == (sigma**2 < 2 * d * math.log(b))


def test_moment_report_lognormal_mc_oracle():
    sigma = 0.8
    w = lognormal_law(sigma).sample(make_rng(0, 0, 0), 400_000)
    wl = w * np.log(w)
    assert abs(wl.mean() - sigma**2 / 2) < 3 * wl.std(ddof=1) / math.sqrt(w.size)


def test_moment_report_constant_is_degenerate():
    rep = cascade_moment_report(constant_law(), [1.5, 2.0], 2, 1)
    assert rep["pass"] and rep["degenerate"]


def test_moment_report_p_grid_range():
    with pytest.raises(ArgumentError):
        cascade_moment_report(constant_law(), [2.5], 2, 1)


@settings(max_examples=20)
@given(st.floats(0.05, 0.95), st.integers(1, 6), st.integers(0, 1000))
def test_discrete_cascade_nonnegative(q, m, seed):
    # two-point law {0, 1/q} with P(1/q) = q has mean one
    law = discrete_law([0.0, 1 / q], [1 - q, q])
    f = sample_canonical_cascade(law, 2, 1, m, make_grid(1, 2, m), seed, 0)
    assert np.all(f.values >= 0) and np.all(np.isfinite(f.values))
