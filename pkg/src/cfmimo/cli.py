"""Command-line entry point.

Subcommands:
  generate   build and cache the scenario's drops under <out-dir>/drops
  baseline   evaluate a heuristic association strategy on the test drops
  train      train the policy (centralized or --distributed)
  eval       evaluate a trained checkpoint on the test drops
  validate   run the numerical oracles (gradients, Monte-Carlo SINR, shadowing)

Example:
  cfmimo generate --config scenario.cfg --out-dir results
  cfmimo baseline --config scenario.cfg --out-dir results --strategy top --m 4
  cfmimo train --config scenario.cfg --out-dir results --objective balance --lambda 0.04
"""

from __future__ import annotations

import argparse
import sys

from .config import ExperimentConfig, load_scenario
from .errors import CheckpointError, ConfigError
from . import harness


def _build_parser():
    p = argparse.ArgumentParser(prog="cfmimo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="scenario file (key = value); defaults used if omitted")
        sp.add_argument("--seed", type=int, help="override the scenario seed")
        sp.add_argument("--out-dir", default="results", help="artifact directory")

    sp = sub.add_parser("generate", help="generate and cache network drops")
    common(sp)

    sp = sub.add_parser("baseline", help="evaluate a heuristic strategy")
    common(sp)
    sp.add_argument("--strategy", default="top", help="top | pilot | masters")
    sp.add_argument("--m", type=int, help="cluster size for the top strategy")
    sp.add_argument("--tau-p", type=int, help="override the pilot count")

    sp = sub.add_parser("train", help="train the association policy")
    common(sp)
    sp.add_argument("--objective", default="sum", choices=("sum", "balance", "min"))
    sp.add_argument("--lambda", dest="lam", type=float, help="connection penalty (balance)")
    sp.add_argument("--tau-p", type=int, help="override the pilot count")
    sp.add_argument("--epochs", type=int, default=200)
    sp.add_argument("--batch-size", type=int, default=64)
    sp.add_argument("--lr", type=float, default=1e-5)
    sp.add_argument("--hidden-size", type=int, default=512)
    sp.add_argument("--fc-hidden", default="256,128", help="hidden head widths, comma separated")
    sp.add_argument("--train-drops", type=int, help="restrict the number of training drops")
    sp.add_argument("--pilot-inputs", action="store_true", help="append the pilot one-hot input")
    sp.add_argument("--distributed", action="store_true")
    sp.add_argument("--template", default="3x3", choices=("3x3", "5x5", "full"))

    sp = sub.add_parser("eval", help="evaluate a trained checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--label", default="policy")
    sp.add_argument("--tau-p", type=int, help="override the pilot count")
    sp.add_argument("--distributed", action="store_true")
    sp.add_argument("--template", default="3x3", choices=("3x3", "5x5", "full"))

    sp = sub.add_parser("validate", help="run numerical validation oracles")
    common(sp)
    return p


def _load_config(args) -> ExperimentConfig:
    cfg = load_scenario(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "tau_p", None) is not None:
        cfg = cfg.replace(pilot_symbols=args.tau_p)
    return cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        if args.command == "generate":
            path = harness.run_generate(cfg, args.out_dir)
            print(f"drops cached under {path}")
        elif args.command == "baseline":
            summary = harness.run_baseline(cfg, args.out_dir, args.strategy, m=args.m)
            print(harness.render_summary_table(summary))
        elif args.command == "train":
            fc_hidden = tuple(int(w) for w in args.fc_hidden.split(",") if w)
            path = harness.run_train(
                cfg, args.out_dir, args.objective, lam=args.lam,
                epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                hidden_size=args.hidden_size, fc_hidden=fc_hidden,
                pilot_inputs=args.pilot_inputs, distributed=args.distributed,
                template=args.template, train_drops=args.train_drops,
            )
            print(f"checkpoint written to {path}")
        elif args.command == "eval":
            summary = harness.run_eval(
                cfg, args.out_dir, args.checkpoint, label=args.label,
                distributed=args.distributed, template=args.template,
            )
            print(harness.render_summary_table(summary))
        elif args.command == "validate":
            ok = harness.run_validate(cfg, args.out_dir)
            return 0 if ok else 1
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
