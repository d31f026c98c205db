"""Training loop: minibatch Adam on weights and gate locations, exponential
moving averages of the parameters, periodic evaluation and metrics rows."""

from __future__ import annotations

import csv
import logging
import math
import queue
import threading
import time
from dataclasses import dataclass, field, fields
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .gates import RngStream
from .objective import GateKL, PenaltyConfig, l0_complexity, objective_terms
from .sparse_net import SparseMLP, arch_string, expected_flops, forward_eval, pruned_architecture, sampled_error_loss

log = logging.getLogger(__name__)


class TrainingDiverged(ArithmeticError):
    def __init__(self, step: int, layer: str, max_abs_grad: float, cause: str):
        self.step, self.layer, self.max_abs_grad = step, layer, max_abs_grad
        super().__init__(f"non-finite objective at step {step} ({cause}); largest |grad| {max_abs_grad:.3g} in {layer}")


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 1
    batch_size: int = 100
    adam: AdamConfig = field(default_factory=AdamConfig)
    lr_log_alpha: Optional[float] = None
    ema_decay: Optional[float] = 0.999
    seed: int = 0
    num_gate_samples: int = 1
    eval_every: int = 100
    grad_clip: Optional[float] = None
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.adam.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.ema_decay is not None and not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")
        if self.num_gate_samples < 1 or self.eval_every < 1 or self.epochs < 1:
            raise ValueError("epochs, num_gate_samples and eval_every must be >= 1")


@dataclass
class MetricsRow:
    step: int
    epoch: int
    train_loss: float
    error_loss: float
    penalty: float
    l0_term: float
    test_error_pct: Optional[float]
    eval_loss: float
    expected_flops: float
    pruned_arch: str
    wall_ms: Optional[float] = None


METRICS_HEADER = [f.name for f in fields(MetricsRow)]


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


class CsvMetricsSink:
    """Append-only CSV writer drained by a background thread."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(METRICS_HEADER)
        self._q: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._drain, daemon=True)
        self._thread.start()

    def _drain(self):
        while True:
            row = self._q.get()
            if row is None:
                break
            self._writer.writerow([_cell(getattr(row, k)) for k in METRICS_HEADER])
        self._fh.flush()

    def __call__(self, row: MetricsRow) -> None:
        self._q.put(row)

    def close(self) -> None:
        self._q.put(None)
        self._thread.join()
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[ad.Node]) -> "AdamState":
        return cls([np.zeros_like(p.value) for p in params], [np.zeros_like(p.value) for p in params])


def adam_step(
    params: Sequence[ad.Node],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamState,
    hyper: AdamConfig,
    lrs: Optional[Sequence[float]] = None,
) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.t += 1
    t = state.t
    c1 = 1.0 - hyper.beta1**t
    c2 = 1.0 - hyper.beta2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.value)
        if g.shape != p.value.shape:
            raise ad.ShapeError("adam_step", p.value.shape, g.shape)
        m = state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g
        v = state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g
        lr = hyper.lr if lrs is None else lrs[i]
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)


class ParamAverager:
    """Exponential moving average of parameter values, debiased for the zero start."""

    def __init__(self, params: Sequence[ad.Node], decay: float):
        self.decay = decay
        self.shadow = [np.zeros_like(p.value) for p in params]
        self.t = 0

    def update(self, params: Sequence[ad.Node]) -> None:
        self.t += 1
        d = self.decay
        for i, p in enumerate(params):
            self.shadow[i] = d * self.shadow[i] + (1.0 - d) * p.value

    def averaged(self) -> list[np.ndarray]:
        corr = 1.0 - self.decay**self.t
        return [s / corr for s in self.shadow]


def _snapshot(net: SparseMLP, averager: Optional[ParamAverager]) -> SparseMLP:
    snap = net.copy()
    if averager is not None and averager.t > 0:
        for p, val in zip(snap.parameters(), averager.averaged()):
            p.value = val
    return snap


# ---------------------------------------------------------------------------
# evaluation


def evaluate(net: SparseMLP, ds: Dataset, batch_size: int = 2000) -> tuple[Optional[float], float]:
    """Deterministic ``(error_pct, mean_loss)``; error is None for regression targets."""
    wrong = 0
    loss_sum = 0.0
    for start in range(0, len(ds), batch_size):
        x = ds.inputs[start : start + batch_size]
        y = ds.targets[start : start + batch_size]
        out = forward_eval(net, x)
        loss_sum += net.error_loss(ad.constant(out), y).item() * len(x)
        if ds.is_classification:
            wrong += int(np.count_nonzero(out.argmax(axis=1) != y))
    err = 100.0 * wrong / len(ds) if ds.is_classification else None
    return err, loss_sum / len(ds)


def scaled_penalty(
    net: SparseMLP,
    lambda_times_n: Union[float, Sequence[float]],
    n: int,
    l2_coeff: float = 0.0,
    gate_kl: Optional[GateKL] = None,
) -> PenaltyConfig:
    """Penalty with per-layer lambda given in units of 1/N (``0.1`` means 0.1/N)."""
    names = [l.name for l in net.layers]
    if isinstance(lambda_times_n, (int, float)):
        lams = [float(lambda_times_n)] * len(names)
    else:
        lams = [float(v) for v in lambda_times_n]
        if len(lams) != len(names):
            raise ValueError(f"need {len(names)} per-layer lambdas, got {len(lams)}")
    return PenaltyConfig({k: lam / n for k, lam in zip(names, lams)}, l2_coeff, gate_kl)


# ---------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    net: SparseMLP
    eval_net: SparseMLP
    metrics: list[MetricsRow]


def _diagnose(net: SparseMLP) -> tuple[str, float]:
    worst, where = 0.0, "n/a"
    for p in net.parameters():
        if p.grad is not None:
            g = np.abs(p.grad)
            m = float(np.nanmax(np.where(np.isfinite(g), g, np.inf)))
            if m > worst or where == "n/a":
                worst, where = m, p.name or "?"
    return where, worst


def train(
    net: SparseMLP,
    dataset: Dataset,
    penalty: PenaltyConfig,
    cfg: TrainConfig,
    eval_set: Optional[Dataset] = None,
    sink: Optional[Callable[[MetricsRow], None]] = None,
    record_wall_time: bool = False,
) -> TrainResult:
    """Optimise the regularised objective in place on ``net``.

    Per step: draw gates, forward, regularised loss, backward, Adam on every
    parameter. Evaluation uses the averaged parameters and deterministic gates.
    """
    if dataset.dim != net.layers[0].in_dim:
        raise ad.ShapeError("train", dataset.inputs.shape, (None, net.layers[0].in_dim))
    eval_set = eval_set if eval_set is not None else dataset
    rng = RngStream(cfg.seed)
    params = net.parameters()
    lrs = [
        cfg.lr_log_alpha if (cfg.lr_log_alpha is not None and p.name and p.name.endswith("log_alpha")) else cfg.adam.lr
        for p in params
    ]
    state = AdamState.zeros_like(params)
    averager = ParamAverager(params, cfg.ema_decay) if cfg.ema_decay is not None else None
    groups = net.groups()
    weights = net.weights()
    rows: list[MetricsRow] = []
    n = len(dataset)
    t0 = time.perf_counter()
    step = 0
    last = None

    def record(epoch: int, terms: dict[str, float]):
        snap = _snapshot(net, averager)
        err, eval_loss = evaluate(snap, eval_set)
        row = MetricsRow(
            step=step,
            epoch=epoch,
            train_loss=terms["total"],
            error_loss=terms["error"],
            penalty=terms["penalty"],
            l0_term=l0_complexity(snap.groups()).item(),
            test_error_pct=err,
            eval_loss=eval_loss,
            expected_flops=expected_flops(snap).total,
            pruned_arch=arch_string(pruned_architecture(snap)),
            wall_ms=round(1000.0 * (time.perf_counter() - t0), 3) if record_wall_time else None,
        )
        rows.append(row)
        if sink is not None:
            sink(row)
        log.info(
            "step %d epoch %d loss %.5f err %s arch %s flops %.0f",
            step, epoch, row.train_loss, "-" if err is None else f"{err:.2f}%", row.pruned_arch, row.expected_flops,
        )
        return snap

    snap = None
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            x, y = dataset.inputs[idx], dataset.targets[idx]
            try:
                err_loss = sampled_error_loss(net, x, y, rng, cfg.num_gate_samples)
                terms = objective_terms(err_loss, groups, weights, penalty, rng)
                total = terms["error"]
                for key in ("l0", "l2", "kl"):
                    if key in terms:
                        total = ad.add(total, terms[key])
                for p in params:
                    p.grad = None
                ad.backward(total)
            except ad.NumericError as exc:
                where, worst = _diagnose(net)
                raise TrainingDiverged(step + 1, where, worst, str(exc)) from exc
            grads = [p.grad for p in params]
            if cfg.grad_clip is not None:
                norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads if g is not None))
                if norm > cfg.grad_clip:
                    grads = [None if g is None else g * (cfg.grad_clip / norm) for g in grads]
            adam_step(params, grads, state, cfg.adam, lrs)
            if averager is not None:
                averager.update(params)
            step += 1
            pen = math.fsum(terms[k].item() for k in ("l0", "l2", "kl") if k in terms)
            last = {"total": total.item(), "error": err_loss.item(), "penalty": pen}
            if step % cfg.eval_every == 0:
                snap = record(epoch, last)
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
    if step % cfg.eval_every != 0:
        snap = record(epoch, last)
    return TrainResult(net, snap, rows)
