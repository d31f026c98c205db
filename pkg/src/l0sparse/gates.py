"""Binary concrete, stretched concrete and hard concrete gate distributions.

A hard concrete gate is built in three steps from a uniform draw ``u``::

    s     = sigmoid((logit(u) + log_alpha) / beta)      # binary concrete on (0, 1)
    s_bar = s * (zeta - gamma) + gamma                   # stretched to (gamma, zeta)
    z     = min(1, max(0, s_bar))                         # hard concrete on [0, 1]

Everything here is vectorised over ``log_alpha``; the shared ``beta``,
``gamma`` and ``zeta`` are scalars.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, logit

from . import autodiff as ad

# protocol defaults
BETA = 2.0 / 3.0
GAMMA = -0.1
ZETA = 1.1
U_EPS = 1e-12


class ParameterError(ValueError):
    """Invalid gate distribution parameters."""


class DomainError(ValueError):
    """Argument outside the support of the requested function."""


@dataclass(frozen=True)
class GateParams:
    log_alpha: np.ndarray
    beta: float = BETA
    gamma: float = GAMMA
    zeta: float = ZETA

    def __post_init__(self):
        la = np.asarray(self.log_alpha, dtype=np.float64)
        object.__setattr__(self, "log_alpha", la)
        if not 0.0 < self.beta <= 1.0:
            raise ParameterError(f"beta must lie in (0, 1], got {self.beta}")
        if not self.gamma < 0.0:
            raise ParameterError(f"gamma must be negative, got {self.gamma}")
        if not self.zeta > 1.0:
            raise ParameterError(f"zeta must exceed 1, got {self.zeta}")
        if not np.all(np.isfinite(la)):
            raise ParameterError("log_alpha must be finite")

    @property
    def width(self) -> float:
        return self.zeta - self.gamma

    def with_log_alpha(self, log_alpha) -> "GateParams":
        return GateParams(log_alpha, self.beta, self.gamma, self.zeta)


class RngStream:
    """Seeded counter-based uniform stream (Philox), reproducible across platforms."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def uniform(self, shape) -> np.ndarray:
        return self._gen.random(shape)

    def gate_uniform(self, shape) -> np.ndarray:
        """Uniforms clamped into ``[U_EPS, 1 - U_EPS]`` so their logit stays finite."""
        return np.clip(self._gen.random(shape), U_EPS, 1.0 - U_EPS)

    def normal(self, shape, loc=0.0, scale=1.0) -> np.ndarray:
        return self._gen.normal(loc, scale, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low, high, shape) -> np.ndarray:
        return self._gen.integers(low, high, shape)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen


# ---------------------------------------------------------------------------
# sampling


def hard_concrete_from_uniform(params: GateParams, u) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic map from uniforms to ``(s, s_bar, z)``; broadcasts ``u`` against log_alpha."""
    u = np.clip(np.asarray(u, dtype=np.float64), U_EPS, 1.0 - U_EPS)
    s = expit((logit(u) + params.log_alpha) / params.beta)
    s_bar = s * params.width + params.gamma
    return s, s_bar, np.clip(s_bar, 0.0, 1.0)


def sample_hard_concrete(params: GateParams, rng: RngStream, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` gate samples; result shape is ``(n,) + log_alpha.shape``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    u = rng.gate_uniform((n,) + params.log_alpha.shape)
    _, s_bar, z = hard_concrete_from_uniform(params, u)
    return z, s_bar


def hard_concrete_node(log_alpha: ad.Node, u, beta: float, gamma: float, zeta: float) -> tuple[ad.Node, ad.Node]:
    """Reparameterised sample as graph nodes: ``(z, s_bar)``, differentiable in log_alpha."""
    noise = ad.constant(logit(np.clip(np.asarray(u, dtype=np.float64), U_EPS, 1.0 - U_EPS)))
    s = ad.sigmoid(ad.scale(ad.add(noise, log_alpha), 1.0 / beta))
    s_bar = ad.add(ad.scale(s, zeta - gamma), ad.constant(gamma))
    return ad.hard_sigmoid(s_bar), s_bar


def pathwise_grad(params: GateParams, u) -> np.ndarray:
    """dz/dlog_alpha at fixed noise: zero wherever the hard-sigmoid clips."""
    s, s_bar, _ = hard_concrete_from_uniform(params, u)
    inside = (s_bar > 0.0) & (s_bar < 1.0)
    return np.where(inside, params.width * s * (1.0 - s) / params.beta, 0.0)


# ---------------------------------------------------------------------------
# binary concrete on (0, 1)


def cdf_binary(params: GateParams, s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if np.any((s < 0) | (s > 1)):
        raise DomainError("binary concrete CDF defined on [0, 1]")
    with np.errstate(divide="ignore"):
        return expit(logit(s) * params.beta - params.log_alpha)


def pdf_binary(params: GateParams, s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if np.any((s <= 0) | (s >= 1)):
        raise DomainError("binary concrete pdf defined on the open interval (0, 1)")
    # d/ds sigmoid(beta*logit(s) - log_alpha), written in a form that stays finite
    v = params.beta * logit(s) - params.log_alpha
    return params.beta * expit(v) * expit(-v) / (s * (1.0 - s))


# ---------------------------------------------------------------------------
# stretched concrete on (gamma, zeta)


def _to_unit(params: GateParams, x) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - params.gamma) / params.width


def cdf_stretched(params: GateParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if np.any((x < params.gamma) | (x > params.zeta)):
        raise DomainError(f"x must lie in [{params.gamma}, {params.zeta}]")
    return cdf_binary(params, np.clip(_to_unit(params, x), 0.0, 1.0))


def pdf_stretched(params: GateParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if np.any((x <= params.gamma) | (x >= params.zeta)):
        raise DomainError(f"x must lie in the open interval ({params.gamma}, {params.zeta})")
    return pdf_binary(params, _to_unit(params, x)) / params.width


def quantile_stretched(params: GateParams, u) -> np.ndarray:
    """Inverse of :func:`cdf_stretched`, in closed form."""
    u = np.asarray(u, dtype=np.float64)
    if np.any((u <= 0) | (u >= 1)):
        raise DomainError("quantile requires 0 < u < 1")
    s = expit((logit(u) + params.log_alpha) / params.beta)
    return s * params.width + params.gamma


def sample_truncated(params: GateParams, lo: float, hi: float, rng: RngStream, n: Optional[int] = None):
    """Inverse-transform draw(s) from the stretched concrete restricted to ``(lo, hi)``."""
    if not params.gamma <= lo < hi <= params.zeta:
        raise DomainError(f"need gamma <= lo < hi <= zeta, got lo={lo}, hi={hi}")
    c_lo, c_hi = cdf_stretched(params, lo), cdf_stretched(params, hi)
    if np.any(c_hi - c_lo <= 1e-12):
        raise DomainError(f"interval ({lo}, {hi}) carries no probability mass")
    shape = params.log_alpha.shape if n is None else (n,) + params.log_alpha.shape
    w = c_lo + rng.uniform(shape) * (c_hi - c_lo)
    w = np.clip(w, np.nextafter(c_lo, 1.0), np.nextafter(c_hi, 0.0))
    x = quantile_stretched(params, w)
    return np.clip(x, np.nextafter(lo, hi), np.nextafter(hi, lo))


# ---------------------------------------------------------------------------
# hard concrete summaries


def _log_ratio(params: GateParams) -> float:
    return params.beta * np.log(-params.gamma / params.zeta)


def prob_active(params: GateParams) -> np.ndarray:
    """P(z > 0) = 1 - Q(s_bar <= 0), in closed form."""
    return expit(params.log_alpha - _log_ratio(params))


def prob_active_node(log_alpha: ad.Node, beta: float, gamma: float, zeta: float) -> ad.Node:
    return ad.sigmoid(ad.add(log_alpha, ad.constant(-beta * np.log(-gamma / zeta))))


def point_masses(params: GateParams) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities of the atoms at exactly 0 and exactly 1."""
    p_zero = 1.0 - prob_active(params)
    p_one = 1.0 - cdf_stretched(params, 1.0)
    return p_zero, p_one


def deterministic_gate(params: GateParams) -> np.ndarray:
    """Noise-free test-time gate ``clip(sigmoid(log_alpha) * (zeta - gamma) + gamma, 0, 1)``."""
    return np.clip(expit(params.log_alpha) * params.width + params.gamma, 0.0, 1.0)


def mc_mean_gate(params: GateParams, u) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo mean of z and its pathwise derivative, averaged over axis 0 of ``u``."""
    _, _, z = hard_concrete_from_uniform(params, u)
    return z.mean(axis=0), pathwise_grad(params, u).mean(axis=0)
