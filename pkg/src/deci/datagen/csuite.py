"""The CSuite benchmark: small hand-built SEMs with known causal effects.

Datasets with equations given in closed form (lingauss, linexp, nonlingauss,
cat_to_cts, cts_to_cat) follow them exactly. The rest only fix the graph,
variable types and qualitative behaviour, so their equations are our own
choice of nonlinear functions with non-Gaussian additive noise.

Variables are named ``X1``..``Xd``; column ``j`` holds ``X{j+1}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..data import Dataset, VariableSpec
from ..numerics import ad
from ..numerics.autodiff import Tensor
from ..numerics.rng import RngStream
from .hmc import HmcConfig, hmc_conditional_samples
from .noise import Gaussian, ShiftedExp, SinhArcsinh, SoftplusNormal, Uniform
from .synthetic import ATE_SAMPLES, GroundTruthPackage, _case
from .truth import Node, TrueSem

N_TRAIN = 2000
CATE_SAMPLES = 2000


@dataclass(frozen=True)
class Roles:
    treatment: int
    treated_value: float
    reference_value: float
    target: int
    condition: int | None = None
    condition_value: float | None = None


def _cont(name: str) -> VariableSpec:
    return VariableSpec(name)


def _binary(name: str) -> VariableSpec:
    return VariableSpec(name, "binary", 2)


def _cat(name: str, k: int = 3) -> VariableSpec:
    return VariableSpec(name, "categorical", k)


def _constant_logits(probs) -> Callable:
    logits = np.log(np.asarray(probs, dtype=np.float64))

    def mean(x):
        return Tensor(np.tile(logits, (x.shape[0], 1)))

    return mean


def _skewed(scale: float) -> SinhArcsinh:
    return SinhArcsinh(skew=0.4, tail=0.9, scale=scale)


# -- two-node datasets ----------------------------------------------------------------


def _lingauss():
    nodes = [
        Node(_cont("X1"), [], None, Gaussian(1.0)),
        Node(_cont("X2"), [0], lambda x: x[:, 0] * 0.5, Gaussian(math.sqrt(3) / 2)),
    ]
    return nodes, Roles(0, 1.0, 0.0, 1)


def _linexp():
    nodes = [
        Node(_cont("X1"), [], None, Gaussian(1.0)),
        Node(_cont("X2"), [0], lambda x: x[:, 0] * 0.5, ShiftedExp(math.sqrt(3) / 2)),
    ]
    return nodes, Roles(0, 1.0, 0.0, 1)


NONLINGAUSS_NOISE = math.sqrt(1.0 - 6.0 * (1.0 / math.sqrt(5.0) - 1.0 / 3.0))


def _nonlingauss():
    nodes = [
        Node(_cont("X1"), [], None, Gaussian(1.0)),
        Node(_cont("X2"), [0], lambda x: ad.exp(-ad.square(x[:, 0])) * math.sqrt(6), Gaussian(NONLINGAUSS_NOISE)),
    ]
    return nodes, Roles(0, 1.0, 0.0, 1)


def _cat_to_cts():
    nodes = [
        Node(_cat("X1"), [], _constant_logits([0.25, 0.25, 0.5])),
        Node(_cont("X2"), [0], lambda x: x[:, 0], SoftplusNormal(1.6)),
    ]
    return nodes, Roles(0, 2.0, 0.0, 1)


CTS_TO_CAT_TABLE = np.array([[6 / 13, 6 / 13, 1 / 13], [1 / 8, 3 / 4, 1 / 8], [1 / 3, 1 / 3, 1 / 3]])


def _cts_to_cat_logits(x):
    v = np.asarray(x[:, 0].data)
    cut = math.sqrt(3) / 3
    band = np.where(v < -cut, 0, np.where(v < cut, 1, 2))
    return Tensor(np.log(CTS_TO_CAT_TABLE[band]))


def _cts_to_cat():
    r3 = math.sqrt(3)
    nodes = [
        Node(_cont("X1"), [], None, Uniform(-r3, r3)),
        Node(_cat("X2"), [0], _cts_to_cat_logits),
    ]
    return nodes, Roles(1, 1.0, 0.0, 0)


# -- Simpson's paradox datasets -----------------------------------------------------------
# X1 treatment, X2 outcome, X3 confounder of both, X4 a further observed variable.


def _nonlin_simpson():
    nodes = [
        Node(_cont("X1"), [2], lambda x: ad.tanh(x[:, 2] * 1.5) * 1.5, SoftplusNormal(0.6)),
        Node(_cont("X2"), [0, 2], lambda x: ad.tanh(x[:, 2] * 1.5) * 3.0 - ad.softplus(x[:, 0]) * 1.5, _skewed(0.4)),
        Node(_cont("X3"), [], None, _skewed(1.0)),
        Node(_cont("X4"), [1], lambda x: ad.tanh(x[:, 1]) * 1.5, SoftplusNormal(0.3)),
    ]
    return nodes, Roles(0, 1.0, 0.0, 1, 2, 0.5)


SYMPROD_CHILD_NOISE = 0.5


def _symprod_simpson():
    # X4 = X3 + noise with X3 standard normal, so E[X3 | X4 = c] = c / 1.25 and the
    # conditional effect of X1: 2 vs 0 on X2 = X1 * X3 + ... is 1.6 c.
    nodes = [
        Node(_cont("X1"), [2], lambda x: ad.tanh(x[:, 2] * 1.5) * 1.2, SoftplusNormal(0.5)),
        Node(_cont("X2"), [0, 2], lambda x: x[:, 0] * x[:, 2] + ad.tanh(x[:, 2]) * 0.5, _skewed(0.3)),
        Node(_cont("X3"), [], None, Gaussian(1.0)),
        Node(_cont("X4"), [2], lambda x: x[:, 2], Gaussian(SYMPROD_CHILD_NOISE)),
    ]
    return nodes, Roles(0, 2.0, 0.0, 1, 3, 1.25)


def _mixed_simpson():
    nodes = [
        Node(_binary("X1"), [2], lambda x: (x[:, 2] - 1.0) * 1.5),
        Node(_cont("X2"), [0, 2], lambda x: x[:, 2] * 1.5 - ad.softplus(x[:, 0] * 2.0 - 1.0), _skewed(0.4)),
        Node(_cat("X3"), [], _constant_logits([0.3, 0.3, 0.4])),
        Node(_cont("X4"), [1], lambda x: ad.tanh(x[:, 1]) * 1.5, SoftplusNormal(0.3)),
    ]
    return nodes, Roles(0, 1.0, 0.0, 1, 2, 2.0)


# -- nine-node backdoor datasets ---------------------------------------------------------
# Two chains from the root X1 (through X2, X4, X6, X8 and X3, X5, X7) meet at X9.

WEAK_ARROW = 0.3


def _backdoor_nodes(weak: bool, binary_treatment: bool) -> list[Node]:
    def chain(p, fn):
        return lambda x: fn(x[:, p])

    nodes = [
        Node(_cont("X1"), [], None, _skewed(1.0)),
        Node(_cont("X2"), [0], chain(0, lambda v: ad.tanh(v * 1.2) * 1.5), SoftplusNormal(0.5)),
        Node(_cont("X3"), [0], chain(0, lambda v: ad.softplus(v * 1.5) - 1.0), _skewed(0.5)),
        Node(_cont("X4"), [1], chain(1, lambda v: ad.tanh(v * 1.2) * 1.5), SoftplusNormal(0.5)),
        Node(_cont("X5"), [2], chain(2, lambda v: ad.softplus(v * 1.5) - 1.0), _skewed(0.5)),
        Node(_cont("X6"), [3], chain(3, lambda v: ad.tanh(v * 1.2) * 1.5), SoftplusNormal(0.5)),
        Node(_cont("X7"), [4], chain(4, lambda v: ad.tanh(v) * 1.5), _skewed(0.5)),
    ]
    if binary_treatment:
        nodes.append(Node(_binary("X8"), [5], chain(5, lambda v: ad.tanh(v) * 2.5)))
    else:
        nodes.append(Node(_cont("X8"), [5], chain(5, lambda v: ad.softplus(v * 1.5) - 1.0), SoftplusNormal(0.5)))
    parents = [6, 7] + (list(range(6)) if weak else [])

    def outcome(x):
        y = ad.tanh(x[:, 7] * 1.2) * 1.5 + ad.tanh(x[:, 6]) * 1.5
        if weak:
            for p in range(6):
                y = y + ad.tanh(x[:, p]) * WEAK_ARROW
        return y

    nodes.append(Node(_cont("X9"), parents, outcome, _skewed(0.4)))
    return nodes


def _backdoor_family(weak: bool, binary_treatment: bool):
    def make():
        return _backdoor_nodes(weak, binary_treatment), Roles(7, 1.0, 0.0, 8, 6, 0.5)

    return make


def _mixed_confounding():
    def x2_mean(x):
        return (
            x[:, 0] * 1.2
            + (x[:, 2] - 1.0) * 0.5
            + ad.tanh(x[:, 3])
            + x[:, 4] * 0.8
            + (x[:, 7] - 1.0) * 0.4
            + ad.tanh(x[:, 8] * 1.5) * 0.5
        )

    def x1_logit(x):
        return (
            (x[:, 2] - 1.0) * 0.8
            + ad.tanh(x[:, 3])
            + (x[:, 4] - 0.5) * 1.6
            + (x[:, 5] - 1.0) * 0.5
            + ad.tanh(x[:, 6]) * 0.7
        )

    nodes = [
        Node(_binary("X1"), [2, 3, 4, 5, 6], x1_logit),
        Node(_cont("X2"), [0, 2, 3, 4, 7, 8], x2_mean, _skewed(0.5)),
        Node(_cat("X3"), [], _constant_logits([0.3, 0.4, 0.3])),
        Node(_cont("X4"), [], None, _skewed(1.0)),
        Node(_binary("X5"), [], lambda x: Tensor(np.full(x.shape[0], 0.4))),
        Node(_cat("X6"), [], _constant_logits([0.5, 0.25, 0.25])),
        Node(_cont("X7"), [], None, SoftplusNormal(1.0)),
        Node(_cat("X8"), [], _constant_logits([0.2, 0.3, 0.5])),
        Node(_cont("X9"), [], None, _skewed(1.0)),
        Node(_cont("X10"), [0], lambda x: x[:, 0], SoftplusNormal(0.5)),
        Node(_cont("X11"), [1], lambda x: ad.tanh(x[:, 1]) * 1.5, _skewed(0.5)),
        Node(_cont("X12"), [0, 1], lambda x: x[:, 0] * 0.5 + ad.tanh(x[:, 1]), SoftplusNormal(0.5)),
    ]
    return nodes, Roles(0, 1.0, 0.0, 1, 2, 2.0)


DESIGNS: dict[str, Callable] = {
    "lingauss": _lingauss,
    "linexp": _linexp,
    "nonlingauss": _nonlingauss,
    "nonlin_simpson": _nonlin_simpson,
    "symprod_simpson": _symprod_simpson,
    "large_backdoor": _backdoor_family(weak=False, binary_treatment=False),
    "weak_arrows": _backdoor_family(weak=True, binary_treatment=False),
    "cat_to_cts": _cat_to_cts,
    "cts_to_cat": _cts_to_cat,
    "mixed_simpson": _mixed_simpson,
    "large_backdoor_binary_t": _backdoor_family(weak=False, binary_treatment=True),
    "weak_arrows_binary_t": _backdoor_family(weak=True, binary_treatment=True),
    "mixed_confounding": _mixed_confounding,
}
CSUITE_NAMES = tuple(DESIGNS)


def csuite_sem(name: str) -> tuple[TrueSem, Roles]:
    if name not in DESIGNS:
        raise KeyError(f"unknown CSuite dataset {name!r}; valid names: {', '.join(CSUITE_NAMES)}")
    nodes, roles = DESIGNS[name]()
    return TrueSem(nodes, {"name": name}), roles


def conditional_effect(
    sem: TrueSem,
    roles: Roles,
    rng: RngStream,
    n: int = CATE_SAMPLES,
    hmc: HmcConfig | None = None,
) -> tuple[float, float]:
    """Ground-truth conditional effect: HMC for a continuous conditioning
    variable, rejection on the conditioning event for a discrete one."""
    c = {roles.condition: roles.condition_value}
    means, variances, sizes = [], [], []
    for arm, value in (("treated", roles.treated_value), ("reference", roles.reference_value)):
        do = {roles.treatment: value}
        if sem.nodes[roles.condition].spec.is_discrete:
            x = sem.stratified_samples(do, c, n, rng.child(arm))
        else:
            cfg = hmc or HmcConfig(n_samples=n)
            x = hmc_conditional_samples(sem, do, c, rng.child(arm), cfg).samples
        y = x[:, roles.target]
        means.append(float(y.mean()))
        variances.append(float(y.var(ddof=1)))
        sizes.append(len(y))
    se = math.sqrt(variances[0] / sizes[0] + variances[1] / sizes[1])
    return means[0] - means[1], se


def generate_csuite(
    name: str,
    seed: int = 0,
    n: int = N_TRAIN,
    conditional: bool = True,
    hmc: HmcConfig | None = None,
) -> tuple[Dataset, GroundTruthPackage]:
    """Training data plus ground-truth test cases for one CSuite dataset.

    ``conditional=False`` skips the (slow) conditional ground truth.
    """
    sem, roles = csuite_sem(name)
    root = RngStream(seed, (11,))
    data = sem.sample(n, root.child("train"))
    names = sem.names
    t, y = roles.treatment, roles.target
    est, se = sem.ate({t: roles.treated_value}, {t: roles.reference_value}, [y], ATE_SAMPLES, root.child("ate"))
    cases = [_case("ate", names, {t: roles.treated_value}, {t: roles.reference_value}, [y], {}, est, se, ATE_SAMPLES)]
    if conditional and roles.condition is not None:
        effect, cse = conditional_effect(sem, roles, root.child("cate"), hmc=hmc)
        cond = {roles.condition: roles.condition_value}
        cases.append(
            _case("cate", names, {t: roles.treated_value}, {t: roles.reference_value}, [y], cond, [effect], [cse], CATE_SAMPLES)
        )
    return Dataset(sem.specs, data, meta={"csuite": name, "seed": seed}), GroundTruthPackage(sem, cases, name)
