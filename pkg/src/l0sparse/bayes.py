"""Spike-and-slab view of the L0 penalty and KL tooling for rectified gates.

The training path never needs this module; it collects the diagnostics that
relate expected-L0 training to a variational bound with Bernoulli gates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_expit, logit

from .gates import GateParams, RngStream
from .objective import (
    DivergenceError,
    KLEstimate,
    SpikeSlabReport,
    gate_kl_node,
    gate_kl_penalty,
    rectified_kl,
    spike_slab_equivalence_check,
)

__all__ = [
    "DivergenceError",
    "KLEstimate",
    "SpikeSlabConfig",
    "SpikeSlabReport",
    "gate_kl_node",
    "gate_kl_penalty",
    "rectified_kl",
    "spike_slab_equivalence_check",
    "stretched_kl",
]


@dataclass(frozen=True)
class SpikeSlabConfig:
    prior_pi: float = 0.5
    lambda_code_cost: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.prior_pi <= 1.0:
            raise ValueError("prior_pi must lie in [0, 1]")
        if self.lambda_code_cost < 0:
            raise ValueError("lambda_code_cost must be >= 0")

    def check(self, q_on) -> SpikeSlabReport:
        return spike_slab_equivalence_check(q_on, self.lambda_code_cost)


def stretched_kl(q: GateParams, p: GateParams, mc_samples: int, rng: RngStream) -> KLEstimate:
    """KL between the stretched (not yet rectified) variables, by Monte Carlo.

    Returned with ``discrete = 0``; compare against :func:`rectified_kl` to
    see that rectification changes the divergence.
    """
    if (q.gamma, q.zeta) != (p.gamma, p.zeta):
        raise ValueError("q and p must share (gamma, zeta)")
    u = np.clip(rng.uniform((mc_samples,) + q.log_alpha.shape), 1e-300, 1.0 - 1e-16)
    v = logit(u)
    vp = p.beta * (v + q.log_alpha) / q.beta - p.log_alpha
    lr = log_expit(v) + log_expit(-v) - log_expit(vp) - log_expit(-vp) + math.log(q.beta / p.beta)
    zero = np.zeros(np.broadcast(q.log_alpha, p.log_alpha).shape)
    return KLEstimate(zero, lr.mean(axis=0), lr.std(axis=0, ddof=1) / math.sqrt(mc_samples))
