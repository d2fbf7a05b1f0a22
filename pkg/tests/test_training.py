import json
import math

import numpy as np
import pytest
import scipy.special
from hypothesis import given, settings
from hypothesis import strategies as st

from deci.data import Dataset, VariableSpec
from deci.graph import GraphPrior, VariationalGraphPosterior, posterior_entropy
from deci.numerics import Tensor, ad
from deci.numerics.rng import RngStream
from deci.sem import DeciModel
from deci.training import (
    AugLagState,
    Diagnostics,
    ImputationNetwork,
    TrainConfig,
    TrainingError,
    _advance_schedule,
    _Inner,
    auglag_update,
    elbo_estimate,
    elbo_missing,
    imputation_entropy,
    train,
)
from gradcheck import max_relative_error

CHAIN = np.array([[0.0, 1.0], [0.0, 0.0]])
NO_PRIOR = GraphPrior(0.0, 0.0, 0.0)
QUICK = dict(hidden_dim=16, batch_size=128, inner_max_steps=60, outer_max_steps=3, penalty_samples=20)


def continuous(d):
    return [VariableSpec(f"x{i}") for i in range(d)]


class HalfChain(DeciModel):
    def predict(self, x, w):
        x, w = ad.as_tensor(x), ad.as_tensor(w)
        rows = x.shape[0]
        pick = np.zeros((1, 2, 1))
        pick[0, 1, 0] = 0.5
        lifted = ad.reshape(ad.matmul(x, w), (rows, 2, 1))
        return lifted * pick


# -- augmented Lagrangian ------------------------------------------------------------


def test_auglag_progress_updates_alpha():
    s = auglag_update(AugLagState(rho=1.0, alpha=0.0, last_penalty=1.0), 0.5)
    assert (s.alpha, s.rho) == (0.5, 1.0)


def test_auglag_stall_multiplies_rho():
    s = auglag_update(AugLagState(rho=1.0, alpha=0.3, last_penalty=1.0), 0.9)
    assert (s.alpha, s.rho) == (0.3, 10.0)


def test_auglag_zero_penalty_leaves_weights():
    s = auglag_update(AugLagState(rho=1.0, alpha=0.0, last_penalty=1.0), 0.0)
    assert (s.alpha, s.rho) == (0.0, 1.0)
    assert s.last_penalty == 0.0


def test_auglag_boundary_is_strict():
    # P2 exactly 0.65 P1 is not progress
    s = auglag_update(AugLagState(rho=2.0, alpha=0.0, last_penalty=1.0), 0.65)
    assert s.rho == 20.0 and s.alpha == 0.0


def test_auglag_chains_previous_penalty():
    s = AugLagState(last_penalty=1.0)
    s = auglag_update(s, 0.5)  # progress
    s = auglag_update(s, 0.4)  # 0.4 >= 0.65 * 0.5: stall
    assert s.rho == 10.0 and s.alpha == 0.5 and s.outer_step == 2


def test_auglag_cap():
    s = AugLagState(rho=1e12, alpha=0.0, last_penalty=1.0)
    s = auglag_update(s, 1.0)
    assert s.capped(1e13)
    assert not AugLagState(rho=1e12).capped(1e13)


@settings(max_examples=100, deadline=None)
@given(
    rho=st.floats(1, 1e6),
    alpha=st.floats(0, 1e6),
    p1=st.floats(0, 10),
    p2=st.floats(0, 10),
)
def test_auglag_is_pure_and_follows_the_rule(rho, alpha, p1, p2):
    state = AugLagState(rho=rho, alpha=alpha, last_penalty=p1)
    a = auglag_update(state, p2)
    b = auglag_update(state, p2)
    assert a == b
    if p2 < 0.65 * p1:
        assert a.rho == rho and a.alpha == alpha + rho * p2
    else:
        assert a.rho == rho * 10 and a.alpha == alpha


def test_auglag_rejects_bad_penalty():
    with pytest.raises(ValueError):
        auglag_update(AugLagState(), -1.0)
    with pytest.raises(ValueError):
        auglag_update(AugLagState(), float("nan"))


# -- inner schedule -------------------------------------------------------------------


def test_inner_schedule_decays_then_stops():
    cfg = TrainConfig(lr_patience=2, inner_patience=100, max_lr_decays=2, lr=1.0)
    sched = _Inner(lr=1.0)
    _advance_schedule(sched, 5.0, 1, cfg)
    lrs = []
    for _ in range(6):
        _advance_schedule(sched, 6.0, 1, cfg)
        lrs.append(sched.lr)
    assert lrs == [1.0, 0.1, 0.1, 0.01, 0.01, 0.01]
    assert sched.done == "lr_schedule"


def test_inner_schedule_patience_and_reset():
    cfg = TrainConfig(lr_patience=50, inner_patience=3)
    sched = _Inner(lr=0.01)
    _advance_schedule(sched, 5.0, 1, cfg)
    _advance_schedule(sched, 6.0, 1, cfg)
    _advance_schedule(sched, 4.0, 1, cfg)  # improvement resets the counter
    assert sched.since_best == 0 and sched.done is None
    for _ in range(3):
        _advance_schedule(sched, 4.5, 1, cfg)
    assert sched.done == "patience"


def test_config_validation_and_batch_rule():
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(progress_ratio=1.5)
    assert TrainConfig().resolved_batch_size(2000) == 512
    assert TrainConfig().resolved_batch_size(800) == 800
    assert TrainConfig(batch_size=64).resolved_batch_size(30) == 30


# -- ELBO ------------------------------------------------------------------------------


def test_elbo_saturated_zero_model():
    d = 3
    model = DeciModel(continuous(d), noise="gaussian", seed=0)
    g = np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]], dtype=float)
    q = VariationalGraphPosterior.from_graph(g)
    value = elbo_estimate(model, q, NO_PRIOR, np.zeros((1, d)), 1, RngStream(0)).item()
    assert value == pytest.approx(-(d / 2) * math.log(2 * math.pi), abs=1e-9)


def test_elbo_entropy_term_is_exact():
    model = DeciModel(continuous(3), noise="gaussian", seed=0)
    q = VariationalGraphPosterior(3)
    q.existence.data = np.array([0.3, -1.2, 2.0])
    q.orientation.data = np.array([-0.4, 0.9, 0.1])
    x = np.random.default_rng(0).normal(size=(8, 3))
    loglik = model.log_likelihood(x, np.zeros((3, 3))).data.sum()
    for seed in range(5):
        value = elbo_estimate(model, q, NO_PRIOR, x, 8, RngStream(seed)).item()
        assert value - loglik == pytest.approx(posterior_entropy(q).item(), abs=1e-10)


def test_elbo_reduces_to_likelihood_for_saturated_posterior():
    model = DeciModel(continuous(2), noise="spline", seed=1)
    for _, p in model.named_parameters():
        p.data = p.data + np.random.default_rng(1).normal(size=p.shape) * 0.3
    x = np.random.default_rng(2).normal(size=(16, 2))
    q = VariationalGraphPosterior.from_graph(CHAIN)
    value = elbo_estimate(model, q, NO_PRIOR, x[:4], 16, RngStream(0)).item()
    avg = model.log_likelihood(x[:4], CHAIN).data.mean()
    assert value == pytest.approx(avg * 16, rel=1e-12)


def _pair_posterior(e, o):
    q = VariationalGraphPosterior(2)
    q.existence.data = np.array([e])
    q.orientation.data = np.array([o])
    return q


def test_elbo_is_a_lower_bound_on_enumerated_evidence():
    # The entropy is over the (existence, orientation) variables, so the bound is
    # against the evidence of that parametrisation: the empty graph arises from
    # both orientation values.
    model = HalfChain(continuous(2), noise="gaussian", seed=0)
    x = np.random.default_rng(3).normal(size=(5, 2))
    x[:, 1] += 0.5 * x[:, 0]
    prior = GraphPrior(1.0, 1.0, 0.0)
    graphs = {"empty": np.zeros((2, 2)), "fwd": CHAIN, "bwd": CHAIN.T}
    log_joint = {
        k: model.log_likelihood(x, g).data.sum() - prior.lambda_sparse * g.sum() for k, g in graphs.items()
    }
    evidence = scipy.special.logsumexp([log_joint["empty"], log_joint["empty"], log_joint["fwd"], log_joint["bwd"]])
    q = _pair_posterior(0.4, 0.8)
    rng = RngStream(4)
    draws = np.array([elbo_estimate(model, q, prior, x, len(x), rng).item() for _ in range(10_000)])
    mean, se = draws.mean(), draws.std(ddof=1) / math.sqrt(len(draws))
    assert mean <= evidence + 5 * se
    # exact expectation under q for comparison
    pe, po = scipy.special.expit(0.4), scipy.special.expit(0.8)
    exact = (
        (1 - pe) * log_joint["empty"]
        + pe * po * log_joint["fwd"]
        + pe * (1 - po) * log_joint["bwd"]
        + posterior_entropy(q).item()
    )
    assert abs(mean - exact) < 5 * se
    assert exact <= evidence


def test_elbo_missing_reduces_when_fully_observed():
    model = DeciModel(continuous(3), noise="spline", seed=2)
    imputer = ImputationNetwork(3, np.random.default_rng(0), 8)
    q = VariationalGraphPosterior(3)
    x = np.random.default_rng(5).normal(size=(6, 3))
    a = elbo_estimate(model, q, GraphPrior(), x, 60, RngStream(9)).item()
    b = elbo_missing(model, q, imputer, GraphPrior(), x, np.ones_like(x), 60, RngStream(9)).item()
    assert a == b


def test_imputation_entropy_closed_form():
    log_var = Tensor(np.array([[0.3, -1.0, 2.0]]))
    missing = np.array([[1.0, 0.0, 1.0]])
    expected = sum(0.5 * (1 + math.log(2 * math.pi) + lv) for lv in (0.3, 2.0))
    assert imputation_entropy(log_var, missing).item() == pytest.approx(expected)


def test_imputer_gradient_matches_finite_differences():
    model = DeciModel(continuous(3), noise="gaussian", hidden_dim=6, seed=3)
    imputer = ImputationNetwork(3, np.random.default_rng(1), 6)
    for _, p in imputer.named_parameters():
        p.data = p.data + np.random.default_rng(2).normal(size=p.shape) * 0.3
    q = VariationalGraphPosterior.from_graph(np.zeros((3, 3)))
    x = np.random.default_rng(6).normal(size=(4, 3))
    mask = np.array([[1, 0, 1], [1, 1, 1], [0, 1, 1], [1, 1, 0]], dtype=float)

    def f():
        return elbo_missing(model, q, imputer, NO_PRIOR, x, mask, 4, RngStream(3))

    assert max_relative_error(f, imputer.parameters()) < 1e-4


def test_missing_discrete_values_rejected():
    model = DeciModel([VariableSpec("b", "binary", 2), VariableSpec("y")], seed=0)
    imputer = ImputationNetwork(2, np.random.default_rng(0), 4)
    with pytest.raises(ValueError):
        elbo_missing(model, VariationalGraphPosterior(2), imputer, GraphPrior(), np.zeros((2, 2)), np.array([[0, 1], [1, 1]]), 2, RngStream(0))


# -- training loop ------------------------------------------------------------------------


def _chain_data(n=400, seed=0):
    rng = np.random.default_rng(seed)
    x1 = rng.normal(size=n)
    x2 = 0.8 * x1 + 0.6 * rng.exponential(size=n)
    return Dataset(continuous(2), np.column_stack([x1, x2]))


def test_training_is_deterministic():
    ds = _chain_data()
    cfg = TrainConfig(seed=3, **QUICK)
    _, q1, d1 = train(ds, cfg)
    _, q2, d2 = train(ds, cfg)
    assert d1.final_elbo() == d2.final_elbo()
    np.testing.assert_array_equal(q1.existence.data, q2.existence.data)
    assert d1.to_jsonl() == d2.to_jsonl()


def test_training_logs_required_fields():
    _, _, diag = train(_chain_data(), TrainConfig(seed=1, **QUICK))
    epochs = [r for r in diag.records if "elbo" in r]
    assert epochs
    for r in epochs:
        assert {"step", "elbo", "penalty", "rho", "alpha", "lr"} <= set(r)
    for line in diag.to_jsonl().splitlines():
        json.loads(line)
    assert set(diag.summary()) >= {"converged", "final_penalty", "final_elbo"}


def test_training_with_fixed_graph_only_fits_sem():
    _, q, diag = train(_chain_data(), TrainConfig(seed=2, **QUICK), graph=CHAIN)
    np.testing.assert_array_equal(q.existence.data, VariationalGraphPosterior.from_graph(CHAIN).existence.data)
    assert diag.converged and diag.final_penalty == 0.0


def test_training_with_missing_values_runs():
    ds = _chain_data(seed=4)
    mask = (np.random.default_rng(0).uniform(size=ds.values.shape) > 0.3).astype(float)
    mask[mask.sum(axis=1) == 0, 0] = 1.0
    masked = Dataset(ds.specs, ds.values, mask)
    model, q, diag = train(masked, TrainConfig(seed=0, **QUICK))
    assert math.isfinite(diag.final_elbo())


def test_non_finite_loss_aborts_with_diagnostics():
    ds = _chain_data()
    ds.values[0, 0] = 1e200
    with pytest.raises(TrainingError) as info:
        train(ds, TrainConfig(seed=0, **QUICK))
    assert isinstance(info.value.diagnostics, Diagnostics)
    assert any(r.get("event") == "abort" for r in info.value.diagnostics.records)


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train(Dataset(continuous(2), np.zeros((0, 2))), TrainConfig(**QUICK))
