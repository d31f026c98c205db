"""Command-line entry point: ``l0sparse {train,eval,report}``.

Exit codes: 0 success, 2 configuration / input errors, 3 numeric abort.
Log verbosity comes from the ``L0SPARSE_LOG_LEVEL`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigLoadError, RunConfig, load_config
from .data import IdxFormatError
from .gates import RngStream
from .objective import l0_complexity
from .sparse_net import (
    ModelFormatError,
    arch_string,
    eval_gates,
    expected_flops,
    init_mlp,
    load_model,
    pruned_architecture,
    save_model,
)
from .train import CsvMetricsSink, TrainingDiverged, evaluate, scaled_penalty, train

log = logging.getLogger("l0sparse")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
HIST_BINS = 10


def _setup_logging():
    level = os.environ.get("L0SPARSE_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def prune_report(net) -> dict:
    """Per-layer active counts, test-time gate histogram, expected L0 and FLOPs."""
    counts = pruned_architecture(net)
    z = np.concatenate(eval_gates(net))
    hist, edges = np.histogram(z, bins=HIST_BINS, range=(0.0, 1.0))
    flops = expected_flops(net)
    return {
        "architecture": arch_string(counts),
        "active_per_layer": counts,
        "gates_per_layer": [l.in_dim for l in net.layers],
        "gate_histogram": {
            "edges": [float(e) for e in edges],
            "counts": [int(c) for c in hist],
            "exact_zero": int(np.count_nonzero(z == 0.0)),
            "exact_one": int(np.count_nonzero(z == 1.0)),
        },
        "l0_complexity": l0_complexity(net.groups()).item(),
        "expected_flops": flops.total,
        "baseline_flops": flops.baseline,
        "flops_ratio": flops.ratio,
        "expected_flops_per_layer": list(flops.per_layer),
    }


def cmd_train(args) -> int:
    cfg, base = load_config(args.config)
    if args.seed_override is not None:
        cfg = cfg.model_copy(update={"seed": args.seed_override})
    out_dir = Path(args.out_dir) if args.out_dir else base / cfg.out_dir
    train_ds, test_ds = cfg.datasets(base)
    rng = RngStream(cfg.seed)
    net = init_mlp(
        cfg.sizes(train_ds), rng, cfg.init_rate, cfg.activation, cfg.loss,
        cfg.beta, cfg.gamma, cfg.zeta, cfg.log_alpha_init_std,
    )
    penalty = scaled_penalty(net, cfg.lambda_times_N, len(train_ds), cfg.l2_coeff, cfg.gate_kl())
    out_dir.mkdir(parents=True, exist_ok=True)
    with CsvMetricsSink(out_dir / "metrics.csv") as sink:
        # the harness draws from its own stream seeded like the init stream; offset keeps them distinct
        tcfg = cfg.train_config()
        tcfg.seed = cfg.seed + 1
        result = train(net, train_ds, penalty, tcfg, test_ds, sink, cfg.record_wall_time)
    save_model(result.eval_net, out_dir / "model.json")
    report = prune_report(result.eval_net)
    (out_dir / "prune_report.json").write_text(json.dumps(report, indent=2) + "\n")
    last = result.metrics[-1]
    err = "n/a" if last.test_error_pct is None else f"{last.test_error_pct:.2f}%"
    print(f"steps {last.step}  error {err}  architecture {report['architecture']}  "
          f"flops {report['expected_flops']:.0f}/{report['baseline_flops']:.0f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    net = load_model(args.model)
    cfg, base = load_config(args.config)
    train_ds, test_ds = cfg.datasets(base)
    ds = test_ds if test_ds is not None else train_ds
    if ds.dim != net.layers[0].in_dim:
        raise ModelFormatError(f"model expects {net.layers[0].in_dim} inputs, dataset has {ds.dim}")
    err, loss = evaluate(net, ds)
    flops = expected_flops(net)
    print(f"error_pct: {'n/a' if err is None else repr(err)}")
    print(f"mean_loss: {loss!r}")
    print(f"architecture: {arch_string(pruned_architecture(net))}")
    print(f"expected_flops: {flops.total!r}")
    print(f"baseline_flops: {flops.baseline!r}")
    return EXIT_OK


def cmd_report(args) -> int:
    net = load_model(args.model)
    print(json.dumps(prune_report(net), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="l0sparse", description="L0-regularised sparse MLPs with hard concrete gates")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a gated MLP from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir", default=None, help="overrides out_dir from the config")
    t.add_argument("--seed-override", type=int, default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate an exported model with deterministic gates")
    e.add_argument("--model", required=True)
    e.add_argument("--config", required=True, help="config whose dataset keys select the evaluation data")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="print a JSON pruning / FLOPs summary of a model")
    r.add_argument("--model", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigLoadError, ModelFormatError, IdxFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
