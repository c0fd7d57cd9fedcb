import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wiener4nls.norms import sobolev_norm
from wiener4nls.randomization import (CoefficientBox, RandomCoefficientModel, SobolevSampleSpec, box_indices,
                                      coefficients_from_json, coefficients_to_json, cube_hash, derive_seed,
                                      dilate_field, dilated_grid, make_partition, mgf_bound_check, randomize,
                                      randomize_dilated, sample_box, sample_coefficients)
from wiener4nls.spectral import cube_weights, make_grid, physical_field, spectral_field


def random_spectral(grid, seed=0):
    rng = np.random.default_rng(seed)
    return physical_field(grid, rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)).spectral()


def unit_box(grid, part):
    lo, shape = part.cube_box(grid)
    return CoefficientBox(lo, np.ones(shape, dtype=complex))


# ------------------------------------------------------------------ partition


def test_hat_partition_half_point():
    part = make_partition(1, 1)
    assert part(np.array([[0.5]]))[0] == pytest.approx(0.5)
    assert part(np.array([[0.5 - 1.0]]))[0] == pytest.approx(0.5)


@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_partition_at_lattice_points(p):
    part = make_partition(p, 2)
    xi = np.array([3.0, -2.0])
    assert part(xi - np.array([3.0, -2.0])) == 1.0
    for shift in ([1, 0], [0, -1], [1, 1]):
        assert part(xi - np.array([3.0, -2.0]) - np.array(shift)) == 0.0


@pytest.mark.parametrize("p", [1, 3, 5])
def test_partition_sum_is_one(p):
    g = make_grid(3, 16, 5.3)
    part = make_partition(p, 3)
    assert np.max(np.abs(part.partition_sum(g) - 1.0)) <= 1e-10


def test_dilated_partition():
    g = make_grid(2, 32, 9.0)
    part = make_partition(3, 2, 2.0)
    assert np.max(np.abs(part.partition_sum(g) - 1.0)) <= 1e-10
    pts = np.array([[1.99, 0.0], [2.0, 0.0], [2.5, 1.0]])
    vals = part(pts)
    assert vals[0] > 0 and vals[1] == 0.0 and vals[2] == 0.0


# ---------------------------------------------------------------- coefficients


def test_bernoulli_support():
    model = RandomCoefficientModel("bernoulli", 11)
    g = model.draw(box_indices((-3, -3), (7, 7)))
    assert np.all(np.abs(g.real) == 1) and np.all(np.abs(g.imag) == 1)


def test_sampling_deterministic_and_order_free():
    model = RandomCoefficientModel("complex_gaussian", 99)
    cubes = [(0, 1, 2), (-4, 0, 5), (7, 7, 7)]
    a = sample_coefficients(model, cubes)
    b = sample_coefficients(model, list(reversed(cubes)))
    assert a == b
    assert sample_coefficients(model.with_seed(100), cubes) != a


def test_gaussian_moments():
    model = RandomCoefficientModel("complex_gaussian", 2024)
    m = 100_000
    cubes = np.stack([np.arange(m), np.zeros(m, dtype=np.int64)], axis=1)
    g = model.draw(cubes)
    assert abs(g.mean()) <= 3 * np.sqrt(2 / m)
    assert np.mean(np.abs(g) ** 2) == pytest.approx(2.0, rel=0.02)


def test_hash_distinct_and_seed_derivation():
    keys = cube_hash(5, box_indices((-10, -10), (21, 21)))
    assert len(np.unique(keys)) == keys.size
    assert derive_seed(5, 0) != derive_seed(5, 1)
    assert derive_seed(5, 3) == derive_seed(5, 3)


def test_custom_law_validation():
    with pytest.raises(ValueError):
        RandomCoefficientModel("custom", 0, ((1.0, -1.0), (0.3, 0.3)))
    model = RandomCoefficientModel("custom", 0, ((1.0, -1.0), (0.5, 0.5)))
    assert model.second_moment() == pytest.approx(2.0)


def test_coefficient_json_roundtrip():
    model = RandomCoefficientModel("complex_gaussian", 3)
    coeffs = sample_coefficients(model, [(0, 0), (1, -2), (-3, 4)])
    assert coefficients_from_json(coefficients_to_json(coeffs)) == coeffs


# ------------------------------------------------------------------ randomize


@pytest.mark.parametrize("p", [1, 2, 3])
def test_unit_coefficients_reconstruct(p):
    g = make_grid(3, 16, 4.0)
    phi = random_spectral(g, 1)
    part = make_partition(p, 3)
    out = randomize(phi, part, unit_box(g, part))
    assert np.max(np.abs(out.data - phi.data)) <= 1e-10 * np.max(np.abs(phi.data))


def test_missing_cube_is_an_error():
    g = make_grid(2, 16, 4.0)
    phi = random_spectral(g, 2)
    part = make_partition(3, 2)
    with pytest.raises(ValueError):
        randomize(phi, part, {(0, 0): 1.0})
    lo, shape = part.cube_box(g)
    small = CoefficientBox(tuple(x + 1 for x in lo), np.ones(tuple(s - 2 for s in shape)))
    with pytest.raises(ValueError):
        randomize(phi, part, small)


def test_single_cube_support_uses_at_most_2d_terms():
    g = make_grid(2, 32, 4 * np.pi)  # spacing 1/4
    part = make_partition(3, 2)
    inside = (np.abs(g.xi_axis(0) - 0.5) < 0.3) & (np.abs(g.xi_axis(1) - 0.5) < 0.3)
    phi = spectral_field(g, np.where(inside, 1.0, 0.0))
    lo, shape = part.cube_box(g)
    touching = [tuple(n) for n in box_indices(lo, shape) if np.any((cube_weights(g, n) > 0) & inside)]
    assert len(touching) <= 2**2
    coeffs = {(0, 0): 2.0, (1, 0): 1j, (0, 1): -1.0, (1, 1): 0.5}
    out = randomize(phi, part, coeffs)
    assert np.isfinite(out.data).all()


def test_mean_energy_matches_weight():
    g = make_grid(2, 16, 3.0)
    phi = SobolevSampleSpec(1.5).field(g)
    part = make_partition(3, 2)
    W = part.energy_weight(g)
    target = 2.0 * float(np.sum(np.abs(W * phi.data) ** 2) * g.spectral_cell)
    model = RandomCoefficientModel("complex_gaussian", 0)
    acc = 0.0
    for i in range(4096):
        box = sample_box(model.with_seed(derive_seed(77, i)), part, g)
        acc += randomize(phi, part, box).l2_norm() ** 2
    assert acc / 4096 == pytest.approx(target, rel=0.05)


@settings(max_examples=15, deadline=None)
@given(a=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
       b=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
       seed=st.integers(0, 2**40))
def test_randomize_linear(a, b, seed):
    g = make_grid(2, 8, 2.0)
    part = make_partition(3, 2)
    box = sample_box(RandomCoefficientModel("complex_gaussian", seed), part, g)
    f, h = random_spectral(g, 1), random_spectral(g, 2)
    lhs = randomize(a * f + b * h, part, box).data
    rhs = a * randomize(f, part, box).data + b * randomize(h, part, box).data
    assert np.allclose(lhs, rhs, atol=1e-9)


def test_randomize_dilated_cases():
    g = make_grid(2, 16, 4.0)
    phi = random_spectral(g, 3)
    part = make_partition(3, 2)
    box = sample_box(RandomCoefficientModel("bernoulli", 4), part, g)
    assert np.array_equal(randomize_dilated(phi, 1.0, part, box).data, randomize(phi, part, box).data)
    half = part.dilated(0.5)
    out = randomize_dilated(phi, 0.5, part, unit_box(g, half))
    assert np.max(np.abs(out.data - phi.data)) <= 1e-10 * np.max(np.abs(phi.data))
    with pytest.raises(ValueError):
        randomize_dilated(phi, 1.5, part, box)


def test_dilated_randomization_commutes_with_rescaling():
    g = make_grid(2, 32, 8.0)
    phi = SobolevSampleSpec(2.0).field(g)
    mu = 0.5
    part = make_partition(3, 2)
    box = sample_box(RandomCoefficientModel("complex_gaussian", 5), part.dilated(mu), g)
    lhs = dilate_field(randomize_dilated(phi, mu, part, box), mu)
    phi_mu = dilate_field(phi, mu)
    rhs = randomize(phi_mu, part, box)
    assert np.max(np.abs(lhs.data - rhs.data)) <= 1e-8 * np.max(np.abs(rhs.data))


# ------------------------------------------------------------------- dilation


def test_dilate_identity_and_rejects():
    g = make_grid(3, 16, 4.0)
    phi = random_spectral(g, 6)
    assert np.array_equal(dilate_field(phi, 1.0).data, phi.data)
    with pytest.raises(ValueError):
        dilate_field(phi, 0.3)


def test_dilate_preserves_l2_in_three_dimensions():
    g = make_grid(3, 16, 4.0)
    phi = random_spectral(g, 7)
    for mu in (0.5, 0.25):
        assert dilate_field(phi, mu).l2_norm() == pytest.approx(phi.l2_norm(), rel=1e-12)


def test_dilate_homogeneous_norm_ratio():
    g = make_grid(3, 128, 16.0)
    phi = SobolevSampleSpec(2.0).field(g)
    ratio = sobolev_norm(dilate_field(phi, 0.5), 0.5, homogeneous=True) / sobolev_norm(phi, 0.5, homogeneous=True)
    assert ratio == pytest.approx(2**0.5, rel=0.01)


def test_dilate_matches_analytic_profile():
    g = make_grid(2, 32, 6.0)
    data = SobolevSampleSpec(2.5)
    got = dilate_field(data.field(g), 0.25)
    want = data.field(dilated_grid(g, 0.25), 0.25)
    assert np.allclose(got.data, want.data, rtol=1e-12)


# ------------------------------------------------------------------------ MGF


def test_bernoulli_mgf_at_zero():
    rep = mgf_bound_check(RandomCoefficientModel("bernoulli", 1), [0.0], 1.0, samples=1000)
    assert rep["rows"][0]["empirical"] == 1.0 and rep["ok"]


def test_cosh_bound():
    k = np.linspace(-3, 3, 61)
    assert np.all(np.cosh(k) <= np.exp(k**2))


def test_gaussian_mgf_value():
    rep = mgf_bound_check(RandomCoefficientModel("complex_gaussian", 8), [2.0], 0.5, samples=500_000)
    assert rep["rows"][0]["empirical"] == pytest.approx(np.e**2, rel=0.10)


def test_sobolev_threshold():
    spec = SobolevSampleSpec(2.0)
    assert spec.regularity_threshold(3) == 0.5
    assert spec.in_sobolev(0.3, 3) and not spec.in_sobolev(0.6, 3)
    with pytest.raises(ValueError):
        SobolevSampleSpec(0.0)
