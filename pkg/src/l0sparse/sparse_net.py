"""Dense layers with one hard concrete gate per input neuron, stacked into an MLP."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .gates import BETA, GAMMA, ZETA, GateParams, RngStream, deterministic_gate, hard_concrete_node, prob_active
from .objective import GateGroup

ACTIVATIONS = ("relu", "identity")
LOSSES = ("softmax_cross_entropy", "squared_error")


class ModelFormatError(ValueError):
    pass


@dataclass
class GatedDenseLayer:
    """``activation((x * z) @ W + b)`` with ``z`` gating each input neuron.

    The gate of input ``i`` is shared by the whole row ``W[i, :]``, so its
    group size is ``out_dim``. The bias is never gated.
    """

    weight: ad.Node
    bias: ad.Node
    log_alpha: ad.Node
    activation: str = "relu"
    name: str = "layer"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        in_dim, out_dim = self.weight.shape
        if self.bias.shape != (out_dim,) or self.log_alpha.shape != (in_dim,):
            raise ad.ShapeError(
                "GatedDenseLayer", self.weight.shape, self.bias.shape, self.log_alpha.shape,
                detail="need weight [in,out], bias [out], log_alpha [in]",
            )

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> list[ad.Node]:
        return [self.weight, self.bias, self.log_alpha]

    def _affine(self, x: ad.Node, z) -> ad.Node:
        h = ad.add(ad.matmul(ad.mul(x, z), self.weight), self.bias)
        return ad.relu(h) if self.activation == "relu" else h


@dataclass(frozen=True)
class FlopsReport:
    per_layer: tuple[float, ...]
    baseline_per_layer: tuple[float, ...]

    @property
    def total(self) -> float:
        return math.fsum(self.per_layer)

    @property
    def baseline(self) -> float:
        return math.fsum(self.baseline_per_layer)

    @property
    def ratio(self) -> float:
        return self.total / self.baseline


@dataclass
class SparseMLP:
    layers: list[GatedDenseLayer]
    loss: str = "softmax_cross_entropy"
    beta: float = BETA
    gamma: float = GAMMA
    zeta: float = ZETA
    init_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("SparseMLP needs at least one layer")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ad.ShapeError("SparseMLP", prev.weight.shape, nxt.weight.shape, detail="layer dims must chain")
        GateParams(np.zeros(1), self.beta, self.gamma, self.zeta)  # validates the shared hyperparameters

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].in_dim] + [l.out_dim for l in self.layers]

    def parameters(self) -> list[ad.Node]:
        return [p for l in self.layers for p in l.parameters()]

    def weights(self) -> list[ad.Node]:
        return [l.weight for l in self.layers]

    def gate_params(self, layer: GatedDenseLayer) -> GateParams:
        return GateParams(layer.log_alpha.value, self.beta, self.gamma, self.zeta)

    def groups(self) -> list[GateGroup]:
        return [
            GateGroup(l.name, l.log_alpha, l.out_dim, self.beta, self.gamma, self.zeta)
            for l in self.layers
        ]

    def copy(self) -> "SparseMLP":
        layers = [
            GatedDenseLayer(
                ad.parameter(l.weight.value.copy(), l.weight.name),
                ad.parameter(l.bias.value.copy(), l.bias.name),
                ad.parameter(l.log_alpha.value.copy(), l.log_alpha.name),
                l.activation,
                l.name,
            )
            for l in self.layers
        ]
        return SparseMLP(layers, self.loss, self.beta, self.gamma, self.zeta, dict(self.init_meta))

    def error_loss(self, out: ad.Node, y) -> ad.Node:
        if self.loss == "softmax_cross_entropy":
            return ad.softmax_cross_entropy(out, y)
        y = np.asarray(y, dtype=np.float64)
        return ad.squared_error(out, y.reshape(out.shape) if y.ndim == 1 else y)


def init_mlp(
    sizes: Sequence[int],
    rng: RngStream,
    init_rate: float = 0.5,
    activation: str = "relu",
    loss: str = "softmax_cross_entropy",
    beta: float = BETA,
    gamma: float = GAMMA,
    zeta: float = ZETA,
    log_alpha_std: float = 0.01,
) -> SparseMLP:
    """Build a gated MLP; the last layer uses the identity activation.

    Weights are He-uniform over fan-in, biases zero. ``log_alpha`` is drawn
    from N(log(r / (1 - r)), log_alpha_std**2) with ``r = init_rate``, i.e.
    ``sigmoid(log_alpha)`` starts near ``r``.
    """
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    if not 0.0 < init_rate < 1.0:
        raise ValueError("init_rate must lie in (0, 1)")
    mu = math.log(init_rate / (1.0 - init_rate))
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        act = activation if i < len(sizes) - 2 else "identity"
        bound = math.sqrt(6.0 / n_in)
        w = (2.0 * rng.uniform((n_in, n_out)) - 1.0) * bound
        la = rng.normal((n_in,), mu, log_alpha_std)
        layers.append(
            GatedDenseLayer(
                ad.parameter(w, f"fc{i}.weight"),
                ad.parameter(np.zeros(n_out), f"fc{i}.bias"),
                ad.parameter(la, f"fc{i}.log_alpha"),
                act,
                f"fc{i}",
            )
        )
    meta = {"weight_init": "he_uniform_fan_in", "init_rate": init_rate, "log_alpha_std": log_alpha_std}
    return SparseMLP(layers, loss, beta, gamma, zeta, meta)


def _check_input(net: SparseMLP, x) -> ad.Node:
    x = ad.as_node(x)
    if x.value.ndim != 2 or x.shape[0] < 1 or x.shape[1] != net.layers[0].in_dim:
        raise ad.ShapeError("forward", x.shape, (None, net.layers[0].in_dim), detail="expected [B, in_dim]")
    return x


def forward_train(net: SparseMLP, x, rng: RngStream) -> ad.Node:
    """One stochastic forward pass; a single gate sample per layer is shared by the batch."""
    h = _check_input(net, x)
    for layer in net.layers:
        u = rng.gate_uniform((layer.in_dim,))
        z, _ = hard_concrete_node(layer.log_alpha, u, net.beta, net.gamma, net.zeta)
        h = layer._affine(h, z)
    return h


def sampled_error_loss(net: SparseMLP, x, y, rng: RngStream, num_samples: int = 1) -> ad.Node:
    """Error loss averaged over ``num_samples`` independent gate draws."""
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    total = None
    for _ in range(num_samples):
        loss = net.error_loss(forward_train(net, x, rng), y)
        total = loss if total is None else ad.add(total, loss)
    return total if num_samples == 1 else ad.scale(total, 1.0 / num_samples)


def eval_gates(net: SparseMLP) -> list[np.ndarray]:
    return [deterministic_gate(net.gate_params(l)) for l in net.layers]


def forward_eval(net: SparseMLP, x) -> np.ndarray:
    """Deterministic forward with the test-time gate estimate; consumes no randomness."""
    h = _check_input(net, x).value
    for layer, z in zip(net.layers, eval_gates(net)):
        h = (h * z) @ layer.weight.value + layer.bias.value
        if layer.activation == "relu":
            h = np.maximum(h, 0.0)
    return h


def pruned_architecture(net: SparseMLP, threshold: float = 0.0) -> list[int]:
    """Per layer, the number of input neurons whose test-time gate exceeds ``threshold``."""
    return [int(np.count_nonzero(z > threshold)) for z in eval_gates(net)]


def arch_string(counts: Sequence[int]) -> str:
    return "-".join(str(c) for c in counts)


def expected_flops(net: SparseMLP) -> FlopsReport:
    """Expected FLOPs of one forward pass per example.

    One multiply plus one add per weight of an active input, plus one add
    per output for the bias; inputs are weighted by P(gate active).
    """
    per, base = [], []
    for layer in net.layers:
        pa = prob_active(net.gate_params(layer))
        per.append(math.fsum(pa) * 2.0 * layer.out_dim + layer.out_dim)
        base.append(2.0 * layer.in_dim * layer.out_dim + layer.out_dim)
    return FlopsReport(tuple(per), tuple(base))


# ---------------------------------------------------------------------------
# model.json


def _fmt(x: float) -> str:
    return format(float(x), ".16e")


def _array(a: np.ndarray) -> str:
    return "[" + ", ".join(_fmt(v) for v in np.asarray(a, dtype=np.float64).ravel()) + "]"


def model_to_json(net: SparseMLP) -> str:
    """Serialise to JSON text; every float carries 17 significant digits."""
    layers = []
    for l in net.layers:
        layers.append(
            "    {"
            f'"in": {l.in_dim}, "out": {l.out_dim}, "activation": {json.dumps(l.activation)}, '
            f'"weights": {_array(l.weight.value)}, "bias": {_array(l.bias.value)}, '
            f'"log_alpha": {_array(l.log_alpha.value)}'
            "}"
        )
    return (
        "{\n"
        '  "layers": [\n' + ",\n".join(layers) + "\n  ],\n"
        f'  "beta": {_fmt(net.beta)},\n'
        f'  "gamma": {_fmt(net.gamma)},\n'
        f'  "zeta": {_fmt(net.zeta)},\n'
        f'  "loss": {json.dumps(net.loss)}\n'
        "}\n"
    )


def save_model(net: SparseMLP, path) -> None:
    Path(path).write_text(model_to_json(net))


def model_from_dict(doc: dict) -> SparseMLP:
    try:
        layers = []
        for i, spec in enumerate(doc["layers"]):
            n_in, n_out = int(spec["in"]), int(spec["out"])
            w = np.asarray(spec["weights"], dtype=np.float64)
            b = np.asarray(spec["bias"], dtype=np.float64)
            la = np.asarray(spec["log_alpha"], dtype=np.float64)
            if w.size != n_in * n_out or b.size != n_out or la.size != n_in:
                raise ModelFormatError(f"layer {i}: array lengths do not match in={n_in}, out={n_out}")
            layers.append(
                GatedDenseLayer(
                    ad.parameter(w.reshape(n_in, n_out), f"fc{i}.weight"),
                    ad.parameter(b, f"fc{i}.bias"),
                    ad.parameter(la, f"fc{i}.log_alpha"),
                    spec["activation"],
                    f"fc{i}",
                )
            )
        return SparseMLP(layers, doc["loss"], float(doc["beta"]), float(doc["gamma"]), float(doc["zeta"]))
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"invalid model document: {exc}") from exc


def load_model(path) -> SparseMLP:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError(f"{path}: top level must be an object")
    return model_from_dict(doc)
