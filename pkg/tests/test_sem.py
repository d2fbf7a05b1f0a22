import math

import numpy as np
import pytest
import scipy.integrate
import scipy.stats

from deci.data import VariableSpec
from deci.graph import CyclicGraph
from deci.numerics import Tensor, ad
from deci.numerics.rng import RngStream
from deci.sem import (
    DeciModel,
    intervened_log_density,
    invert_to_noise,
    log_likelihood,
    predict,
    sample_interventional,
    sample_observational,
    simulate_from_noise,
)
from gradcheck import max_relative_error

CHAIN = np.array([[0.0, 1.0], [0.0, 0.0]])


def continuous(d):
    return [VariableSpec(f"x{i}") for i in range(d)]


class HalfChain(DeciModel):
    """Two continuous nodes with f_2(x) = 0.5 x_1 whenever the edge 1->2 is present."""

    def predict(self, x, w):
        x, w = ad.as_tensor(x), ad.as_tensor(w)
        out = np.zeros((x.shape[0], 2, 1))
        out[:, 1, 0] = 0.5 * x.data[:, 0] * w.data[0, 1]
        return Tensor(out)


def randomised(model, seed, scale=0.3):
    rng = np.random.default_rng(seed)
    for _, p in model.named_parameters():
        p.data = p.data + rng.normal(size=p.shape) * scale
    return model


# -- predict -------------------------------------------------------------------------


def test_zero_adjacency_makes_outputs_constant_in_x():
    model = randomised(DeciModel(continuous(3), hidden_dim=8, seed=1), 1)
    rng = np.random.default_rng(0)
    a = predict(model, rng.normal(size=(4, 3)), np.zeros((3, 3))).data
    b = predict(model, rng.normal(size=(4, 3)), np.zeros((3, 3))).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_fresh_model_predicts_zero():
    model = DeciModel(continuous(3), hidden_dim=8, seed=2)
    x = np.random.default_rng(0).normal(size=(5, 3))
    np.testing.assert_array_equal(predict(model, x, np.ones((3, 3)) - np.eye(3)).data, 0.0)


def test_masked_parents_have_no_influence():
    model = randomised(DeciModel(continuous(4), hidden_dim=8, seed=3), 3)
    g = np.array([[0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 0], [1, 0, 1, 0]], dtype=float)
    x = np.random.default_rng(1).normal(size=(6, 4))
    base = predict(model, x, g).data
    for j in range(4):
        moved = x.copy()
        moved[:, j] += 1.7
        diff = np.abs(predict(model, moved, g).data - base).max(axis=(0, 2))
        for i in range(4):
            if g[j, i] == 0:
                assert diff[i] == 0.0
            else:
                assert diff[i] > 0.0


def test_finite_difference_parent_sensitivity_matches_mask():
    model = randomised(DeciModel(continuous(3), hidden_dim=8, seed=4), 4)
    g = np.array([[0, 1, 1], [0, 0, 0], [0, 1, 0]], dtype=float)
    x = np.random.default_rng(2).normal(size=(1, 3))
    h = 1e-6
    for j in range(3):
        up, down = x.copy(), x.copy()
        up[0, j] += h
        down[0, j] -= h
        grad = (predict(model, up, g).data - predict(model, down, g).data)[0, :, 0] / (2 * h)
        for i in range(3):
            if g[j, i] == 0:
                assert grad[i] == 0.0


# -- likelihood --------------------------------------------------------------------------


def test_gaussian_zero_model_log_likelihood():
    model = DeciModel(continuous(2), noise="gaussian", seed=0)
    assert log_likelihood(model, np.zeros((1, 2)), CHAIN).item() == pytest.approx(-math.log(2 * math.pi), abs=1e-6)


def test_identity_spline_matches_gaussian_at_initialisation():
    x = np.random.default_rng(0).normal(size=(10, 3))
    g = np.zeros((3, 3))
    a = DeciModel(continuous(3), noise="gaussian", seed=0).log_likelihood(x, g).data
    b = DeciModel(continuous(3), noise="spline", seed=0).log_likelihood(x, g).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_uniform_categorical_contributes_log_three():
    specs = [VariableSpec("c", "categorical", 3)]
    model = DeciModel(specs, seed=0)
    for cls in range(3):
        value = model.log_likelihood(np.array([[float(cls)]]), np.zeros((1, 1))).item()
        assert value == pytest.approx(-math.log(3), abs=1e-12)


def test_binary_head_at_initialisation_contributes_log_half():
    model = DeciModel([VariableSpec("b", "binary", 2)], seed=0)
    assert model.log_likelihood(np.array([[1.0]]), np.zeros((1, 1))).item() == pytest.approx(-math.log(2))


def test_missing_values_rejected():
    model = DeciModel(continuous(2), seed=0)
    with pytest.raises(ValueError):
        log_likelihood(model, np.array([[0.0, np.nan]]), CHAIN)


@pytest.mark.parametrize("noise", ["gaussian", "spline"])
def test_log_likelihood_parameter_gradients(noise):
    specs = continuous(2) + [VariableSpec("b", "binary", 2), VariableSpec("c", "categorical", 3)]
    model = randomised(DeciModel(specs, noise=noise, hidden_dim=5, seed=5), 5, 0.2)
    rng = np.random.default_rng(5)
    x = np.column_stack([rng.normal(size=(4, 2)), rng.integers(0, 2, 4), rng.integers(0, 3, 4)]).astype(float)
    w = Tensor(rng.uniform(size=(4, 4)) * (1 - np.eye(4)), requires_grad=True)
    f = lambda: ad.tsum(model.log_likelihood(x, w))  # noqa: E731
    assert max_relative_error(f, model.parameters() + [w]) < 1e-4


# -- sampling --------------------------------------------------------------------------


def test_zero_model_samples_are_standard_normal():
    model = DeciModel(continuous(2), noise="gaussian", seed=0)
    x = sample_observational(model, CHAIN, 10_000, RngStream(0))
    for j in range(2):
        assert scipy.stats.kstest(x[:, j], "norm").pvalue > 0.01


def test_injected_chain_substitution():
    model = HalfChain(continuous(2), noise="gaussian", seed=0)
    x = simulate_from_noise(model, np.array([[1.0, 0.0]]), CHAIN)
    np.testing.assert_allclose(x, [[1.0, 0.5]])
    np.testing.assert_allclose(invert_to_noise(model, x, CHAIN), [[1.0, 0.0]])


def test_empty_graph_marginals_equal_noise():
    model = randomised(DeciModel(continuous(2), noise="spline", seed=3), 3)
    ex = model.draw_exogenous(500, RngStream(1))
    x = model.simulate(np.zeros((2, 2)), ex)
    f0 = predict(model, np.zeros((1, 2)), np.zeros((2, 2))).data[0, :, 0]
    np.testing.assert_allclose(x, ex["continuous"] + f0, atol=1e-12)


def test_intervention_on_chain_root():
    model = HalfChain(continuous(2), noise="gaussian", seed=0)
    x = sample_interventional(model, CHAIN, {0: 2.0}, 20_000, RngStream(2))
    np.testing.assert_array_equal(x[:, 0], 2.0)
    assert abs(x[:, 1].mean() - 1.0) < 3 / math.sqrt(20_000)


def test_intervention_on_sink_leaves_others_observational():
    model = HalfChain(continuous(2), noise="gaussian", seed=0)
    obs = sample_observational(model, CHAIN, 300, RngStream(4))
    do = sample_interventional(model, CHAIN, {1: 7.0}, 300, RngStream(4))
    np.testing.assert_array_equal(obs[:, 0], do[:, 0])


def test_intervening_everywhere_is_deterministic():
    model = HalfChain(continuous(2), noise="gaussian", seed=0)
    x = sample_interventional(model, CHAIN, {0: 1.5, 1: -2.0}, 50, RngStream(5))
    np.testing.assert_array_equal(x, np.tile([1.5, -2.0], (50, 1)))


def test_invalid_discrete_intervention_rejected():
    model = DeciModel([VariableSpec("c", "categorical", 3), VariableSpec("y")], seed=0)
    with pytest.raises(ValueError):
        sample_interventional(model, np.zeros((2, 2)), {0: 3.0}, 5, RngStream(0))


def test_cyclic_graph_rejected():
    model = DeciModel(continuous(2), seed=0)
    with pytest.raises(CyclicGraph):
        sample_observational(model, np.array([[0, 1], [1, 0]]), 5, RngStream(0))


@pytest.mark.parametrize("noise", ["gaussian", "spline"])
def test_noise_inversion_round_trip(noise):
    model = randomised(DeciModel(continuous(4), noise=noise, hidden_dim=8, seed=6), 6)
    g = np.array([[0, 1, 1, 0], [0, 0, 1, 1], [0, 0, 0, 1], [0, 0, 0, 0]], dtype=float)
    ex = model.draw_exogenous(200, RngStream(6))
    x = model.simulate(g, ex)
    z = invert_to_noise(model, x, g)
    np.testing.assert_allclose(z, ex["continuous"], atol=1e-10)
    np.testing.assert_allclose(simulate_from_noise(model, z, g), x, atol=1e-10)


# -- intervened density ---------------------------------------------------------------------


def test_intervened_density_of_zero_model():
    model = DeciModel(continuous(3), noise="gaussian", seed=0)
    value = intervened_log_density(model, np.zeros((1, 3)), {1: 0.3}, np.zeros((3, 3)))
    assert value[0] == pytest.approx(-math.log(2 * math.pi), abs=1e-12)


def test_do_on_root_equals_conditional_density():
    model = randomised(DeciModel(continuous(2), noise="spline", hidden_dim=8, seed=7), 7)
    x = np.random.default_rng(7).normal(size=(20, 2))
    x[:, 0] = 0.8
    do = intervened_log_density(model, x, {0: 0.8}, CHAIN)
    out = predict(model, x, CHAIN).data
    cond = model.noise_log_prob(x - out[:, :, 0]).data[:, 1]
    np.testing.assert_allclose(do, cond, atol=1e-12)


@pytest.mark.parametrize("noise", ["gaussian", "spline"])
def test_intervened_density_integrates_to_one(noise):
    model = randomised(DeciModel(continuous(2), noise=noise, hidden_dim=8, seed=8), 8, 0.5)
    grid = np.linspace(-10, 10, 20_001)
    x = np.column_stack([np.full_like(grid, 0.4), grid])
    dens = np.exp(intervened_log_density(model, x, {0: 0.4}, CHAIN))
    assert abs(scipy.integrate.trapezoid(dens, grid) - 1.0) < 1e-3
