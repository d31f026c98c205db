"""Regularised training objective: error loss plus expected-L0, gate-aware L2
and an optional KL penalty on the gate distributions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import expit, log_expit, logit

from . import autodiff as ad
from .gates import GateParams, RngStream, prob_active_node


class ConfigError(ValueError):
    pass


class DivergenceError(ArithmeticError):
    """KL is infinite: the prior puts zero mass where the posterior does not."""


@dataclass
class GateGroup:
    """A block of gates sharing one distribution family.

    Each of the ``log_alpha`` entries gates ``size`` parameters.
    """

    name: str
    log_alpha: ad.Node
    size: int = 1
    beta: float = 2.0 / 3.0
    gamma: float = -0.1
    zeta: float = 1.1

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"group {self.name!r}: size must be >= 1")

    @property
    def params(self) -> GateParams:
        return GateParams(self.log_alpha.value, self.beta, self.gamma, self.zeta)

    def prob_active(self) -> ad.Node:
        return prob_active_node(self.log_alpha, self.beta, self.gamma, self.zeta)


@dataclass
class GateKL:
    prior: GateParams
    weight: float = 1.0
    mc_samples: int = 64


@dataclass
class PenaltyConfig:
    lambda_per_group: Mapping[str, float] = field(default_factory=dict)
    l2_coeff: float = 0.0
    gate_kl: Optional[GateKL] = None

    def __post_init__(self):
        for name, lam in self.lambda_per_group.items():
            if lam < 0:
                raise ConfigError(f"lambda for {name!r} must be >= 0, got {lam}")
        if self.l2_coeff < 0:
            raise ConfigError(f"l2_coeff must be >= 0, got {self.l2_coeff}")

    @classmethod
    def uniform(cls, groups: Sequence[GateGroup], lam: float, **kw) -> "PenaltyConfig":
        return cls({g.name: lam for g in groups}, **kw)

    def lam(self, name: str) -> float:
        try:
            return self.lambda_per_group[name]
        except KeyError:
            raise ConfigError(f"no lambda configured for gate group {name!r}") from None


def l0_complexity(groups: Sequence[GateGroup]) -> ad.Node:
    """Expected number of non-zero parameters, sum_g |g| * P(gate g active)."""
    if not groups:
        raise ValueError("l0_complexity needs at least one group")
    terms = [ad.scale(ad.sum(g.prob_active()), g.size) for g in groups]
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total


def _row_sq(w: ad.Node, gates_shape: tuple[int, ...]) -> ad.Node:
    sq = ad.mul(w, w)
    if gates_shape == ():
        return ad.sum(sq)
    if w.shape[0] != gates_shape[0]:
        raise ad.ShapeError("l2_reparam_penalty", w.shape, gates_shape, detail="weight rows must match gates")
    while sq.value.ndim > 1:
        sq = ad.sum(sq, axis=sq.value.ndim - 1)
    return sq


def l2_reparam_penalty(groups: Sequence[GateGroup], weights: Sequence[ad.Node]) -> ad.Node:
    """sum_g P(gate g active) * sum_{j in g} theta_j^2.

    ``weights[i]`` holds the parameters of ``groups[i]`` with leading axis
    indexing the gate (a scalar-gate group may pass any shape).
    """
    if len(groups) != len(weights):
        raise ValueError("one weight node per gate group is required")
    total = None
    for g, w in zip(groups, weights):
        term = ad.sum(ad.mul(g.prob_active(), _row_sq(w, g.log_alpha.shape)))
        total = term if total is None else ad.add(total, term)
    return total


# ---------------------------------------------------------------------------
# KL between hard concrete gates


def _check_prior(q_beta, q_gamma, q_zeta, prior: GateParams):
    if q_gamma != prior.gamma or q_zeta != prior.zeta:
        raise ValueError("prior must share the stretch interval (gamma, zeta) of the posterior")


def _edge_logits(gamma: float, zeta: float) -> tuple[float, float]:
    w = zeta - gamma
    return float(logit(-gamma / w)), float(logit((1.0 - gamma) / w))


def _prior_atoms(prior: GateParams, gamma: float, zeta: float) -> tuple[np.ndarray, np.ndarray]:
    a, b = _edge_logits(gamma, zeta)
    return (
        log_expit(prior.beta * a - prior.log_alpha),
        log_expit(prior.log_alpha - prior.beta * b),
    )


def _log_sig(v: ad.Node) -> ad.Node:
    return ad.log(ad.sigmoid(v))


def gate_kl_node(
    log_alpha: ad.Node,
    prior: GateParams,
    u: np.ndarray,
    beta: float,
    gamma: float,
    zeta: float,
) -> ad.Node:
    """Per-gate KL(q(z) || p(z)) for hard concrete q and p as a graph node.

    Point-mass part is exact; the (0, 1) part uses the inverse-transform
    draws ``u`` (shape ``(mc,) + log_alpha.shape``).
    """
    _check_prior(beta, gamma, zeta, prior)
    a, b = _edge_logits(gamma, zeta)
    lp0, lp1 = _prior_atoms(prior, gamma, zeta)
    if np.any(np.isneginf(lp0)) or np.any(np.isneginf(lp1)):
        raise DivergenceError("prior assigns zero mass to an atom of the posterior")

    q0_logit = ad.add(ad.scale(log_alpha, -1.0), ad.constant(beta * a))
    q1_logit = ad.add(log_alpha, ad.constant(-beta * b))  # logit of P(z = 1)
    q0, q1 = ad.sigmoid(q0_logit), ad.sigmoid(q1_logit)
    discrete = ad.add(
        ad.mul(q0, ad.sub(_log_sig(q0_logit), ad.constant(lp0))),
        ad.mul(q1, ad.sub(_log_sig(q1_logit), ad.constant(lp1))),
    )

    mass = ad.sub(ad.sub(ad.constant(1.0), q1), q0)  # Q(1) - Q(0)
    w = ad.add(q0, ad.mul(ad.constant(u), mass))
    v = ad.sub(ad.log(w), ad.log(ad.sub(ad.constant(1.0), w)))
    logit_s = ad.scale(ad.add(v, log_alpha), 1.0 / beta)
    vp = ad.add(ad.scale(logit_s, prior.beta), ad.constant(-prior.log_alpha))
    log_ratio = ad.sub(
        ad.add(_log_sig(v), _log_sig(ad.neg(v))),
        ad.add(_log_sig(vp), _log_sig(ad.neg(vp))),
    )
    if beta != prior.beta:
        log_ratio = ad.add(log_ratio, ad.constant(math.log(beta / prior.beta)))
    cont = ad.mul(mass, ad.scale(ad.sum(log_ratio, axis=0), 1.0 / u.shape[0]))
    return ad.add(discrete, cont)


def gate_kl_penalty(groups: Sequence[GateGroup], prior: GateParams, mc_samples: int, rng: RngStream) -> ad.Node:
    """Sum over every gate of KL(q(z_j) || p(z_j))."""
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    total = None
    for g in groups:
        u = rng.uniform((mc_samples,) + g.log_alpha.shape)
        term = ad.sum(gate_kl_node(g.log_alpha, prior, u, g.beta, g.gamma, g.zeta))
        total = term if total is None else ad.add(total, term)
    return total


@dataclass(frozen=True)
class KLEstimate:
    discrete: np.ndarray
    continuous: np.ndarray
    stderr: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.discrete + self.continuous


def rectified_kl(q: GateParams, p: GateParams, mc_samples: int, rng: RngStream) -> KLEstimate:
    """KL(q(z) || p(z)) between hard concrete gates with a Monte Carlo standard error.

    Same estimator as :func:`gate_kl_node` evaluated without a graph.
    """
    _check_prior(q.beta, q.gamma, q.zeta, p)
    a, b = _edge_logits(q.gamma, q.zeta)
    lq0, lq1 = log_expit(q.beta * a - q.log_alpha), log_expit(q.log_alpha - q.beta * b)
    lp0, lp1 = _prior_atoms(p, q.gamma, q.zeta)
    if np.any(np.isneginf(lp0) & ~np.isneginf(lq0)) or np.any(np.isneginf(lp1) & ~np.isneginf(lq1)):
        raise DivergenceError("prior assigns zero mass to an atom of the posterior")
    q0, q1 = np.exp(lq0), np.exp(lq1)
    discrete = q0 * (lq0 - lp0) + q1 * (lq1 - lp1)

    mass = 1.0 - q1 - q0
    u = rng.uniform((mc_samples,) + q.log_alpha.shape)
    w = q0 + u * mass
    v = np.log(w) - np.log1p(-w)
    vp = p.beta * (v + q.log_alpha) / q.beta - p.log_alpha
    lr = log_expit(v) + log_expit(-v) - log_expit(vp) - log_expit(-vp) + math.log(q.beta / p.beta)
    sd = lr.std(axis=0, ddof=1) if mc_samples > 1 else np.zeros_like(mass)
    return KLEstimate(discrete, mass * lr.mean(axis=0), mass * sd / math.sqrt(mc_samples))


# ---------------------------------------------------------------------------
# assembled objective


def objective_terms(
    error_loss: ad.Node,
    groups: Sequence[GateGroup],
    weights: Sequence[ad.Node],
    cfg: PenaltyConfig,
    rng: Optional[RngStream] = None,
) -> dict[str, ad.Node]:
    """Named scalar pieces whose sum is the regularised loss.

    Keys: ``error``, ``l0`` (lambda-weighted expected L0), ``l2`` and ``kl``
    (each present only when active).
    """
    if error_loss.value.size != 1:
        raise ad.ShapeError("regularized_loss", error_loss.shape, detail="error loss must be scalar")
    terms = {"error": error_loss}
    l0 = None
    for g in groups:
        lam = cfg.lam(g.name)
        if lam == 0.0:
            continue
        t = ad.scale(ad.sum(g.prob_active()), lam * g.size)
        l0 = t if l0 is None else ad.add(l0, t)
    if l0 is not None:
        terms["l0"] = l0
    if cfg.l2_coeff > 0.0:
        terms["l2"] = ad.scale(l2_reparam_penalty(groups, weights), cfg.l2_coeff)
    if cfg.gate_kl is not None and cfg.gate_kl.weight > 0.0:
        if rng is None:
            raise ConfigError("gate KL penalty needs an RngStream")
        kl = gate_kl_penalty(groups, cfg.gate_kl.prior, cfg.gate_kl.mc_samples, rng)
        terms["kl"] = ad.scale(kl, cfg.gate_kl.weight)
    return terms


def regularized_loss(
    error_loss: ad.Node,
    groups: Sequence[GateGroup],
    weights: Sequence[ad.Node],
    cfg: PenaltyConfig,
    rng: Optional[RngStream] = None,
) -> ad.Node:
    terms = objective_terms(error_loss, groups, weights, cfg, rng)
    total = terms["error"]
    for key in ("l0", "l2", "kl"):
        if key in terms:
            total = ad.add(total, terms[key])
    return total


@dataclass(frozen=True)
class SpikeSlabReport:
    expected_l0_penalty: float
    bound_penalty: float

    @property
    def difference(self) -> float:
        return self.expected_l0_penalty - self.bound_penalty


def spike_slab_equivalence_check(pi, lam: float) -> SpikeSlabReport:
    """Compare lambda * sum(pi) with the bound's per-gate code cost sum_j lambda * q(z_j = 1).

    Diagnostic only; the two sides are the same quantity computed two ways.
    """
    pi = np.asarray(pi, dtype=np.float64).ravel()
    if np.any((pi < 0) | (pi > 1)):
        raise ValueError("pi must lie in [0, 1]")
    eq3 = lam * math.fsum(pi)
    bound = math.fsum(lam * q_on for q_on in pi)
    return SpikeSlabReport(eq3, bound)
