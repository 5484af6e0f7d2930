"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

import argparse
import sys

from .harness import (
    ConfigError,
    DataError,
    ExperimentConfig,
    cmd_evaluate,
    cmd_pretrain_spec,
    cmd_report,
    cmd_sample,
    cmd_train,
)


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "dataset", None):
        cfg.dataset = args.dataset
    if getattr(args, "out_dir", None):
        cfg.out_dir = args.out_dir
    if getattr(args, "seed", None) is not None:
        cfg.optim.seed = args.seed
        cfg.pretrain.seed = args.seed
    if getattr(args, "modalities", None):
        mods = tuple(args.modalities.split(","))
        bad = [m for m in mods if m not in ("uv", "ir", "raman")]
        if bad:
            raise ConfigError(f"unknown modalities: {bad}")
        cfg.modalities = mods
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diffspectra")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int)

    pre = sub.add_parser("pretrain-spec", parents=[common], help="pretrain the spectra encoder")
    pre.add_argument("--dataset")
    pre.add_argument("--out-dir")
    pre.add_argument("--stage", type=int, choices=(1, 2))
    pre.add_argument("--resume", help="checkpoint to continue from")
    pre.add_argument("--modalities", help="comma-separated subset of uv,ir,raman")

    tr = sub.add_parser("train", parents=[common], help="train the conditional denoiser")
    tr.add_argument("--dataset")
    tr.add_argument("--out-dir")
    tr.add_argument("--spec-checkpoint", help="pretrained spectra encoder")
    tr.add_argument("--no-pretrain", action="store_true", help="use a freshly initialized spectra encoder")
    tr.add_argument("--modalities")

    sa = sub.add_parser("sample", parents=[common], help="generate candidates for spectra records")
    sa.add_argument("--checkpoint", required=True)
    sa.add_argument("--spectra", required=True, help="JSONL file of spectra records")
    sa.add_argument("--out", required=True, help="output JSONL of candidate molecules")
    sa.add_argument("--k", type=int, default=1, help="candidates per record")
    sa.add_argument("--tau", type=float, default=1.0, help="sampling temperature")
    sa.add_argument("--steps", type=int)

    ev = sub.add_parser("evaluate", parents=[common], help="score samples against references")
    ev.add_argument("--samples", required=True)
    ev.add_argument("--reference", required=True)
    ev.add_argument("--train-reference", help="training set for novelty/Frag metrics")
    ev.add_argument("--metrics", help="comma-separated metric selection")
    ev.add_argument("--mces-timeout-ms", type=int, default=2000)
    ev.add_argument("--out", help="report JSON path")
    ev.add_argument("--plots", action="store_true")

    rp = sub.add_parser("report", parents=[common], help="print a saved metric report")
    rp.add_argument("--report", required=True, help="report JSON from evaluate")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "pretrain-spec":
            cfg = _load_config(args)
            if not cfg.dataset:
                raise ConfigError("no dataset given (--dataset or config)")
            path = cmd_pretrain_spec(cfg, stage=args.stage, resume=args.resume)
            print(path)
        elif args.command == "train":
            cfg = _load_config(args)
            if not cfg.dataset:
                raise ConfigError("no dataset given (--dataset or config)")
            path = cmd_train(cfg, spec_checkpoint=args.spec_checkpoint, no_pretrain=args.no_pretrain)
            print(path)
        elif args.command == "sample":
            if args.k < 1:
                raise ConfigError("--k must be >= 1")
            if args.tau < 0:
                raise ConfigError("--tau must be >= 0")
            path = cmd_sample(
                args.checkpoint, args.spectra, args.out,
                k=args.k, tau=args.tau, seed=args.seed or 0, steps=args.steps,
            )
            print(path)
        elif args.command == "evaluate":
            selection = tuple(args.metrics.split(",")) if args.metrics else None
            report = cmd_evaluate(
                args.samples, args.reference, selection=selection,
                mces_timeout_ms=args.mces_timeout_ms, out_json=args.out,
                plots=args.plots, train_file=args.train_reference,
            )
            for key in sorted(report):
                if key != "detail":
                    print(f"{key:24s} {report[key]}")
        elif args.command == "report":
            print(cmd_report(args.report))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
