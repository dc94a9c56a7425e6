import itertools
import math

import numpy as np
import pytest

from polygene import hypercube as hc
from polygene.bitset import pack, popcount, prefix_table, unpack
from polygene.recombination import (DegenerateRecombination, RecombinationModel, empirical_pairwise,
                                    harmonic_stats, strong_recombination_ratio)


def masks_bool(model, n, seed=0):
    return unpack(model.sample_masks(np.random.default_rng(seed), n), model.L)


# -- bitset helpers --------------------------------------------------------------

@pytest.mark.parametrize("L", [1, 63, 64, 65, 130])
def test_pack_roundtrip(L):
    bits = np.random.default_rng(L).random((7, L)) < 0.5
    words = pack(bits)
    assert np.array_equal(unpack(words, L), bits)
    assert np.array_equal(popcount(words), bits.sum(axis=1))


def test_prefix_table():
    t = unpack(prefix_table(5), 5)
    assert [row.sum() for row in t] == list(range(6))
    assert t[2].tolist() == [True, True, False, False, False]


# -- pairwise rates --------------------------------------------------------------

@pytest.mark.parametrize("L", [2, 10, 100])
def test_free_rates_are_one_half(L):
    r_star, rss = harmonic_stats(RecombinationModel.free(L))
    assert rss == 0.5
    assert np.all(r_star == 0.5)


def test_single_uniform_pairwise_rates():
    # uniform crossover on [0,1], loci at (i+1)/(L+1): r = |i - j| / (L + 1)
    L = 9
    r = RecombinationModel.single(L).pairwise_matrix()
    i, j = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
    assert np.allclose(r, np.abs(i - j) / (L + 1), atol=1e-14)


def test_single_harmonic_stats_brute_force():
    L = 6
    model = RecombinationModel.single(L)
    r_star, rss = harmonic_stats(model)
    expect = []
    for l in range(L):
        inv = [(L + 1) / abs(l - m) for m in range(L) if m != l]
        expect.append((L - 1) / sum(inv))
    assert np.allclose(r_star, expect)
    assert rss == pytest.approx(L / sum(1 / v for v in expect))


@pytest.mark.parametrize("lam", [0.5, 2.0, 7.0])
def test_poisson_pairwise_is_haldane(lam):
    L = 5
    r = RecombinationModel.poisson(L, lam).pairwise_matrix()
    d = np.abs(np.subtract.outer(np.arange(L), np.arange(L))) / (L + 1)
    expected = 0.5 * (1 - np.exp(-2 * lam * d))
    np.fill_diagonal(expected, 0.0)
    assert np.allclose(r, expected, atol=1e-14)


@pytest.mark.parametrize("model", [
    RecombinationModel.single(8),
    RecombinationModel.poisson(5, 2.0),
    RecombinationModel.single(6, lambda u: 1 + 3 * u**2),
], ids=["single", "poisson", "single-nonuniform"])
def test_empirical_pairwise_matches_exact(model):
    n = 200_000
    emp = empirical_pairwise(masks_bool(model, n, seed=3))
    exact = model.pairwise_matrix()
    se = np.sqrt(exact * (1 - exact) / n)
    off = ~np.eye(model.L, dtype=bool)
    assert np.all(np.abs(emp - exact)[off] <= 4 * se[off] + 1e-12)


def test_single_crossover_r_starstar_two_ways():
    model = RecombinationModel.single(10)
    n = 200_000
    emp = empirical_pairwise(masks_bool(model, n, seed=5))
    off = ~np.eye(10, dtype=bool)
    inv = np.where(off, 1 / np.where(off, emp, 1), 0)
    r_star_mc = 9 / inv.sum(axis=1)
    rss_mc = 10 / np.sum(1 / r_star_mc)
    _, rss = harmonic_stats(model)
    # the smallest pairwise rate is 1/11, so relative errors are about sqrt(10/n)
    assert rss_mc == pytest.approx(rss, rel=0.01)


def test_degenerate_linkage_map_raises():
    # rates underflow to exactly zero, so some pair never recombines
    with pytest.raises(DegenerateRecombination):
        harmonic_stats(RecombinationModel.poisson(3, 1e-300))


def test_density_must_be_positive():
    with pytest.raises(ValueError):
        RecombinationModel.single(4, lambda u: u - 0.5)


def test_density_file(tmp_path):
    path = tmp_path / "map.txt"
    path.write_text("# position density\n0 1\n0.5 1\n1 1\n")
    a = RecombinationModel.single(5, str(path)).pairwise_matrix()
    b = RecombinationModel.single(5).pairwise_matrix()
    assert np.allclose(a, b)


def test_cdf_is_exact_for_linear_density():
    model = RecombinationModel.single(3, lambda u: 1 + u)
    # density (1 + u) / 1.5, so F(u) = (u + u^2 / 2) / 1.5
    u = np.array([0.0, 0.2, 0.5, 0.93, 1.0])
    assert np.allclose(model.cdf(u), (u + u**2 / 2) / 1.5, atol=1e-13)


def test_invalid_models():
    with pytest.raises(ValueError):
        RecombinationModel("uniform", 3)
    with pytest.raises(ValueError):
        RecombinationModel.poisson(3, 0.0)


# -- subset laws and beta ------------------------------------------------------

@pytest.mark.parametrize("model", [
    RecombinationModel.free(5), RecombinationModel.single(5), RecombinationModel.poisson(5, 1.3),
], ids=["free", "single", "poisson"])
def test_subset_law_matches_sampling_and_beta(model):
    nu = model.subset_law()
    assert nu.sum() == pytest.approx(1.0)
    n = 200_000
    words = model.sample_masks(np.random.default_rng(11), n)
    idx = (words[:, 0]).astype(np.int64)
    freq = np.bincount(idx, minlength=32) / n
    se = np.sqrt(nu * (1 - nu) / n)
    assert np.all(np.abs(freq - nu) <= 5 * se + 1e-12)
    for size in (2, 3, 4):
        for I in itertools.combinations(range(5), size):
            assert model.beta_subset(I) == pytest.approx(hc.beta_from_law(nu, I), abs=1e-12)


def test_pair_beta_equals_pairwise_rate():
    model = RecombinationModel.poisson(6, 3.0)
    for a, b in itertools.combinations(range(6), 2):
        assert model.beta_subset((a, b)) == pytest.approx(model.pairwise_r(a, b), abs=1e-14)
    assert RecombinationModel.free(4).beta_subset((1, 3)) == 0.5


def test_beta_order_property():
    # the smallest pairwise rate within A bounds beta_J from below for every J in A with |J| >= 2
    model = RecombinationModel.single(7, lambda u: 0.2 + u)
    r = model.pairwise_matrix()
    A = (0, 2, 3, 6)
    r_A = min(r[a, b] for a, b in itertools.combinations(A, 2))
    for size in (2, 3, 4):
        for J in itertools.combinations(A, size):
            assert r_A - 1e-14 <= model.beta_subset(J) <= 1


def test_single_mask_tuple():
    mask = RecombinationModel.single(6).sample_mask(np.random.default_rng(1))
    k = len(mask)
    assert mask == tuple(range(k))


def test_strong_recombination_ratio():
    model = RecombinationModel.free(10)
    assert strong_recombination_ratio(model, 1000.0) == pytest.approx(1000 * 0.5 / (100 * math.log(1000)))
    assert strong_recombination_ratio(model, 1.0) == 0.0
