import json
import math

import numpy as np
import pytest
import scipy.integrate
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from deci.data import Dataset, VariableSpec
from deci.datagen import (
    CSUITE_NAMES,
    Gaussian,
    HmcConfig,
    MlpTransformed,
    Node,
    ShiftedExp,
    SinhArcsinh,
    SoftplusNormal,
    SyntheticSpec,
    TrueSem,
    Uniform,
    apply_mcar_mask,
    csuite_sem,
    generate_csuite,
    generate_synthetic,
    hmc_conditional_samples,
    mcar_mask,
    read_dataset_dir,
    sample_er_graph,
    sample_sf_graph,
    simulate_anm,
    write_dataset_dir,
)
from deci.datagen.synthetic import RandomSpline, intervention_cases, shortest_path_lengths_to
from deci.graph import is_dag, topological_order
from deci.numerics.autodiff import Tensor
from deci.numerics.rng import RngStream

# -- graph samplers -------------------------------------------------------------------------


@pytest.mark.parametrize("sampler", [sample_er_graph, sample_sf_graph])
@pytest.mark.parametrize("d,e", [(1, 0), (5, 0), (5, 10), (16, 16), (16, 64), (64, 256)])
def test_graph_samplers_give_dags_with_exact_edge_count(sampler, d, e):
    g = sampler(d, e, RngStream(d * 1000 + e))
    assert g.sum() == e
    assert is_dag(g)
    assert set(np.unique(g)) <= {0.0, 1.0}


@pytest.mark.parametrize("sampler", [sample_er_graph, sample_sf_graph])
def test_graph_sampler_rejects_impossible_counts(sampler):
    with pytest.raises(ValueError):
        sampler(4, 7, RngStream(0))
    with pytest.raises(ValueError):
        sampler(0, 0, RngStream(0))


def test_scale_free_degrees_are_heavier_tailed():
    er_max, sf_max = [], []
    for seed in range(100):
        er = sample_er_graph(64, 256, RngStream(seed))
        sf = sample_sf_graph(64, 256, RngStream(seed))
        er_max.append((er + er.T).sum(axis=0).max())
        sf_max.append((sf + sf.T).sum(axis=0).max())
    assert np.mean(sf_max) > 1.5 * np.mean(er_max)


def test_er_pairs_are_uniform():
    counts = np.zeros((4, 4))
    for seed in range(4000):
        g = sample_er_graph(4, 1, RngStream(seed))
        counts += g + g.T
    pair_counts = counts[np.triu_indices(4, 1)]
    assert scipy.stats.chisquare(pair_counts).pvalue > 1e-3


def test_samplers_reproducible():
    for sampler in (sample_er_graph, sample_sf_graph):
        np.testing.assert_array_equal(sampler(20, 40, RngStream(3)), sampler(20, 40, RngStream(3)))


# -- random ANMs ---------------------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_random_spline_is_monotone(seed):
    fn = RandomSpline(RngStream(seed))
    s = np.linspace(-5, 5, 401)
    y = fn(Tensor(s)).data
    diffs = np.diff(y) * fn.sign
    assert np.all(diffs > 0)
    # identity (up to sign) outside the spline interval
    np.testing.assert_allclose(y[s < -3.0], fn.sign * s[s < -3.0])


def test_synthetic_dataset_shape_and_reproducibility():
    spec = SyntheticSpec("ER", 8, 10, "gaussian", 300, seed=4)
    ds1, truth1 = generate_synthetic(spec)
    ds2, truth2 = generate_synthetic(spec)
    np.testing.assert_array_equal(ds1.values, ds2.values)
    assert truth1.cases == truth2.cases
    assert ds1.values.shape == (300, 8)
    assert truth1.graph.sum() == 10 and is_dag(truth1.graph)
    ds3, _ = generate_synthetic(SyntheticSpec("ER", 8, 10, "gaussian", 300, seed=5))
    assert not np.array_equal(ds1.values, ds3.values)


def test_synthetic_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(graph="BA")
    with pytest.raises(ValueError):
        SyntheticSpec(noise="laplace")
    with pytest.raises(ValueError):
        SyntheticSpec(d=3, e=4)
    with pytest.raises(ValueError):
        SyntheticSpec(n=0)


def test_roots_have_standard_normal_marginals():
    g = np.zeros((3, 3))
    g[0, 2] = g[1, 2] = 1
    ds, _ = simulate_anm(g, SyntheticSpec("ER", 3, 2, "gaussian", 4000), RngStream(0))
    for j in (0, 1):
        assert scipy.stats.kstest(ds.values[:, j], "norm").pvalue > 1e-3


def test_mlp_noise_is_standardised_and_non_gaussian():
    fam = MlpTransformed(RngStream(2))
    z = fam.sample(100_000, RngStream(3))
    assert abs(z.mean()) < 0.02 and abs(z.std() - 1) < 0.02
    assert scipy.stats.kstest(z, "norm").pvalue < 1e-6


def test_intervention_cases_respect_hop_limit():
    _, truth = generate_synthetic(SyntheticSpec("ER", 12, 24, "gaussian", 500, seed=1))
    target = truth.sem.order[-1]
    hops = shortest_path_lengths_to(truth.graph, target)
    assert 0 < len(truth.cases) <= 5
    names = truth.sem.names
    for case in truth.cases:
        (tname,) = case["treatment"]
        assert case["targets"] == [names[target]]
        assert hops[names.index(tname)] <= 3
        assert case["treatment"][tname] > case["reference"][tname]


def test_shortest_paths_on_chain():
    g = np.zeros((4, 4))
    g[0, 1] = g[1, 2] = g[2, 3] = g[0, 3] = 1
    assert shortest_path_lengths_to(g, 3) == {0: 1, 1: 2, 2: 1}


def test_injected_linear_chain_ate():
    # x0 -> x1 -> x2 with identity-like means: ATE of x0 on x2 is the product of slopes
    sem = TrueSem(
        [
            Node(VariableSpec("x0"), [], None, Gaussian(1.0)),
            Node(VariableSpec("x1"), [0], lambda x: x[:, 0] * 2.0, Gaussian(1.0)),
            Node(VariableSpec("x2"), [1], lambda x: x[:, 1] * -0.5, Gaussian(1.0)),
        ]
    )
    data = sem.sample(2000, RngStream(0))
    cases = intervention_cases(sem, data, RngStream(1))
    by_treatment = {next(iter(c["treatment"])): c for c in cases}
    c0 = by_treatment["x0"]
    width = c0["treatment"]["x0"] - c0["reference"]["x0"]
    assert c0["effect"][0] == pytest.approx(-1.0 * width, abs=1e-10)
    c1 = by_treatment["x1"]
    assert c1["effect"][0] == pytest.approx(-0.5 * (c1["treatment"]["x1"] - c1["reference"]["x1"]), abs=1e-10)


def test_stored_ate_is_reproducible_with_fresh_noise():
    _, truth = generate_synthetic(SyntheticSpec("SF", 10, 15, "mlp", 500, seed=2))
    names = truth.sem.names
    for k, case in enumerate(truth.cases):
        t = names.index(next(iter(case["treatment"])))
        y = names.index(case["targets"][0])
        est, se = truth.sem.ate(
            {t: case["treatment"][names[t]]}, {t: case["reference"][names[t]]}, [y], 20_000, RngStream(99, (k,))
        )
        tol = 2 * math.hypot(se[0], case["stderr"][0]) * 2 + 1e-12
        assert abs(est[0] - case["effect"][0]) < tol


# -- noise families ---------------------------------------------------------------------


FAMILIES = [
    Gaussian(0.7),
    ShiftedExp(0.8),
    SoftplusNormal(1.6),
    Uniform(-1.5, 2.0),
    SinhArcsinh(0.4, 0.9, 0.6),
]


@pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.name)
def test_noise_density_matches_sampler(fam):
    z = np.sort(fam.sample(20_000, RngStream(0)))
    lo, hi = z[0] - 1.0, z[-1] + 1.0
    grid = np.linspace(lo, hi, 40_001)
    dens = np.exp(fam.log_prob(Tensor(grid)).data)
    cdf = scipy.integrate.cumulative_trapezoid(dens, grid, initial=0.0)
    assert cdf[-1] == pytest.approx(1.0, abs=2e-3)
    p = scipy.stats.kstest(z, lambda v: np.interp(v, grid, cdf)).pvalue
    assert p > 1e-3


def test_shifted_exp_has_zero_mean():
    z = ShiftedExp(2.0).sample(200_000, RngStream(1))
    assert abs(z.mean()) < 0.02
    assert z.min() >= -2.0


# -- CSuite ------------------------------------------------------------------------------


def test_csuite_names_and_unknown_name():
    assert len(CSUITE_NAMES) == 13
    for name in CSUITE_NAMES:
        sem, roles = csuite_sem(name)
        assert is_dag(sem.graph)
        assert roles.target != roles.treatment
    with pytest.raises(KeyError) as info:
        csuite_sem("lin_gauss")
    assert "lingauss" in str(info.value)


@pytest.mark.parametrize("name", ["lingauss", "linexp", "nonlingauss"])
def test_two_node_marginals_have_unit_variance(name):
    sem, _ = csuite_sem(name)
    x = sem.sample(200_000, RngStream(0))
    # the nonlinear mean sqrt(6) exp(-x^2) has expectation sqrt(2); only the variance is fixed
    np.testing.assert_allclose(x.mean(axis=0), [0.0, math.sqrt(2) if name == "nonlingauss" else 0.0], atol=0.01)
    np.testing.assert_allclose(x.var(axis=0), 1.0, atol=0.02)


def test_nonlingauss_parent_and_child_are_uncorrelated():
    sem, _ = csuite_sem("nonlingauss")
    x = sem.sample(200_000, RngStream(1))
    assert abs(np.corrcoef(x.T)[0, 1]) < 0.01


def test_linear_ground_truth_effects():
    for name in ("lingauss", "linexp"):
        _, truth = generate_csuite(name, seed=0, n=100)
        assert truth.cases[0]["effect"][0] == pytest.approx(0.5, abs=1e-10)


def test_cts_to_cat_has_no_effect_on_the_cause():
    _, truth = generate_csuite("cts_to_cat", seed=0, n=100)
    assert truth.cases[0]["effect"] == [0.0]


def test_cat_to_cts_effect():
    _, truth = generate_csuite("cat_to_cts", seed=0, n=100)
    assert truth.cases[0]["effect"][0] == pytest.approx(2.0, abs=1e-10)


def test_csuite_generation_reproducible_and_seeded():
    a, ta = generate_csuite("mixed_simpson", seed=3, n=200)
    b, tb = generate_csuite("mixed_simpson", seed=3, n=200)
    c, _ = generate_csuite("mixed_simpson", seed=4, n=200)
    np.testing.assert_array_equal(a.values, b.values)
    assert ta.cases == tb.cases
    assert not np.array_equal(a.values, c.values)
    assert [case["kind"] for case in ta.cases] == ["ate", "cate"]
    assert a.meta == {"csuite": "mixed_simpson", "seed": 3}


def test_csuite_discrete_columns_are_valid_classes():
    for name in CSUITE_NAMES:
        ds, _ = generate_csuite(name, n=300, conditional=False)
        Dataset(ds.specs, ds.values)  # re-validates class indices


# -- HMC -------------------------------------------------------------------------------


def _linear_descendant_sem():
    return TrueSem(
        [
            Node(VariableSpec("t"), [], None, Gaussian(1.0)),
            Node(VariableSpec("y"), [0], lambda x: x[:, 0], Gaussian(1.0)),
            Node(VariableSpec("c"), [1], lambda x: x[:, 1], Gaussian(1.0)),
        ]
    )


def test_hmc_matches_linear_gaussian_posterior():
    # under do(t = a): y ~ N(a, 1), c | y ~ N(y, 1) so y | c ~ N((a + c) / 2, 1 / 2)
    cfg = HmcConfig(n_samples=4000, burn_in=1000, thin=2)
    res = hmc_conditional_samples(_linear_descendant_sem(), {0: 1.0}, {2: 2.0}, RngStream(0), cfg)
    y = res.samples[:, 1]
    assert np.all(res.samples[:, 0] == 1.0) and np.all(res.samples[:, 2] == 2.0)
    assert y.mean() == pytest.approx(1.5, abs=0.05)
    assert y.var() == pytest.approx(0.5, abs=0.05)
    assert 0.5 < res.acceptance <= 1.0
    assert res.divergence_rate <= cfg.max_divergence_rate


def test_hmc_chains_agree():
    cfg = HmcConfig(n_samples=4000, burn_in=1000, thin=2)
    res = hmc_conditional_samples(_linear_descendant_sem(), {0: -1.0}, {2: 0.0}, RngStream(1), cfg)
    # split-half check on per-chain means: halves of the chain set agree within 3 combined s.e.
    means = res.chains[:, :, 1].mean(axis=1)
    a, b = means[: len(means) // 2], means[len(means) // 2 :]
    se = math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
    assert abs(a.mean() - b.mean()) < 3 * se


def test_hmc_rejects_discrete_conditioning():
    sem, _ = csuite_sem("mixed_simpson")
    with pytest.raises(ValueError):
        hmc_conditional_samples(sem, {0: 1.0}, {2: 2.0}, RngStream(0), HmcConfig(n_samples=10, burn_in=10))


# -- masking and storage ----------------------------------------------------------------


def test_mcar_rate_and_no_empty_rows():
    mask = mcar_mask((20_000, 5), 0.3, RngStream(0))
    assert (mask.sum(axis=1) > 0).all()
    assert abs((1 - mask).mean() - 0.3) < 0.01
    assert np.array_equal(mask, mcar_mask((20_000, 5), 0.3, RngStream(0)))
    with pytest.raises(ValueError):
        mcar_mask((3, 3), 1.0, RngStream(0))


def test_mcar_keeps_existing_holes():
    ds = Dataset([VariableSpec("a"), VariableSpec("b")], np.ones((4, 2)), np.array([[1, 0], [1, 1], [0, 1], [1, 1]]))
    out = apply_mcar_mask(ds, 0.0, RngStream(0))
    np.testing.assert_array_equal(out.mask, ds.mask)
    assert out.meta["mcar_rate"] == 0.0


def test_store_round_trip(tmp_path):
    ds, truth = generate_csuite("cat_to_cts", seed=1, n=50)
    ds = apply_mcar_mask(ds, 0.2, RngStream(5))
    write_dataset_dir(tmp_path / "d", ds, truth)
    back = read_dataset_dir(tmp_path / "d")
    assert back.dataset.specs == ds.specs
    np.testing.assert_array_equal(back.dataset.mask, ds.mask)
    np.testing.assert_allclose(back.dataset.values, ds.values, rtol=1e-15)
    np.testing.assert_array_equal(back.graph, truth.graph)
    assert back.cases == json.loads(json.dumps(truth.cases))
    assert back.dataset.meta == ds.meta


def test_store_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_dataset_dir(tmp_path / "nothing")


def test_topological_order_of_generated_sem_is_valid():
    _, truth = generate_synthetic(SyntheticSpec("SF", 16, 30, "gaussian", 50, seed=7))
    order = topological_order(truth.graph)
    pos = {v: k for k, v in enumerate(order)}
    for i, j in zip(*np.nonzero(truth.graph)):
        assert pos[i] < pos[j]


def test_mcar_column_subset():
    ds, _ = generate_csuite("mixed_simpson", n=4000, conditional=False)
    cont = [j for j, s in enumerate(ds.specs) if not s.is_discrete]
    out = apply_mcar_mask(ds, 0.3, RngStream(1), cont)
    disc = [j for j in range(ds.d) if j not in cont]
    assert np.all(out.mask[:, disc] == 1)
    assert abs((1 - out.mask[:, cont]).mean() - 0.3) < 0.01


def test_hmc_without_conditioning_matches_interventional_sampling():
    sem = _linear_descendant_sem()
    cfg = HmcConfig(n_samples=2000, burn_in=500, thin=5)
    res = hmc_conditional_samples(sem, {0: 0.5}, {}, RngStream(4), cfg)
    direct = sem.sample(2000, RngStream(5), {0: 0.5})
    for j in (1, 2):
        assert scipy.stats.ks_2samp(res.samples[:, j], direct[:, j]).pvalue > 0.01
