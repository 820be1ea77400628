"""Command-line interface: gen-data, train, verify, diagnose, probe."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config, parse_config, validate_config
from .data import gen_data
from .run import diagnose_checkpoint, probe_checkpoint, resolve_out_dir, run_train
from .trainer import DataError, TrainingDiverged
from .verify import SUITES, run_suite


def _collect_overrides(pairs: list[str]) -> dict[str, str]:
    """Turn leftover ``--key value`` tokens into an override map."""
    overrides: dict[str, str] = {}
    i = 0
    while i < len(pairs):
        token = pairs[i]
        if not token.startswith("--"):
            raise ConfigError([f"unexpected argument {token!r}; overrides look like --key value"])
        key = token[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(pairs):
                raise ConfigError([f"override --{key} is missing a value"])
            i += 1
            value = pairs[i]
        overrides[key] = value
        i += 1
    return overrides


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cplearn",
        description="Collapse-proof representation learning: train, verify, diagnose.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a Gaussian-cluster CSV dataset")
    gen.add_argument("--clusters", type=int, default=4)
    gen.add_argument("--dim", type=int, default=16)
    gen.add_argument("--per-cluster", type=int, default=250)
    gen.add_argument("--spread", type=float, default=0.15)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    train = sub.add_parser("train", help="train a model and emit run artifacts",
                           epilog="any config key can be overridden with --key value")
    train.add_argument("--config", help="flat key = value config file")
    train.add_argument("--out-dir", dest="out_dir", default=None)

    verify = sub.add_parser("verify", help="run a verification suite")
    verify.add_argument("suite", choices=SUITES)
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--out-dir", dest="out_dir", default=None)

    diagnose = sub.add_parser("diagnose", help="re-run diagnostics on a checkpoint")
    diagnose.add_argument("--checkpoint", required=True)
    diagnose.add_argument("--data", default=None, help="labeled CSV (default: config dataset)")
    diagnose.add_argument("--out-dir", dest="out_dir", default=None)

    probe = sub.add_parser("probe", help="linear probe of a checkpoint on a labeled CSV")
    probe.add_argument("--checkpoint", required=True)
    probe.add_argument("--data", required=True)
    probe.add_argument("--epochs", type=int, default=None)
    probe.add_argument("--lr", type=float, default=None)
    probe.add_argument("--seed", type=int, default=None)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    args, leftover = parser.parse_known_args(argv)

    try:
        if args.command == "gen-data":
            if leftover:
                parser.error(f"unrecognized arguments: {' '.join(leftover)}")
            data = gen_data(args.clusters, args.dim, args.per_cluster, args.spread,
                            args.seed, args.out)
            print(f"wrote {data.m} rows x {data.dim} features to {args.out}")
            return 0

        if args.command == "train":
            overrides = _collect_overrides(leftover)
            if args.config:
                cfg = load_config(args.config, overrides)
            else:
                cfg = parse_config("", overrides)
                validate_config(cfg)
            report = run_train(cfg, out_dir=args.out_dir)
            out = resolve_out_dir(args.out_dir, cfg.out_dir)
            print(f"run complete: final loss {report.final_loss:.6f}, "
                  f"artifacts in {out}")
            if report.nmi_codes_vs_labels is not None:
                print(f"NMI(codes, labels) = {report.nmi_codes_vs_labels:.4f}")
            if report.probe_accuracy is not None:
                print(f"linear probe accuracy = {report.probe_accuracy:.4f}")
            return 0

        if args.command == "verify":
            if leftover:
                parser.error(f"unrecognized arguments: {' '.join(leftover)}")
            result = run_suite(args.suite, args.seed)
            print(result.format_table())
            out = resolve_out_dir(args.out_dir, "")
            out.mkdir(parents=True, exist_ok=True)
            report_path = Path(out) / f"verify_{args.suite}.json"
            report_path.write_text(json.dumps(result.to_json_dict(), indent=2),
                                   encoding="utf-8")
            print(f"report written to {report_path}")
            return 0 if result.passed else 1

        if args.command == "diagnose":
            if leftover:
                parser.error(f"unrecognized arguments: {' '.join(leftover)}")
            doc = diagnose_checkpoint(args.checkpoint, args.data, args.out_dir)
            histogram = doc["collapse"]["code_histogram"]
            print(f"rank={doc['collapse']['representation_rank']} "
                  f"active_codes={sum(1 for v in histogram if v > 0)}/{len(histogram)} "
                  f"covariance_residual={doc['collapse']['covariance_residual']:.4g}")
            return 0

        if args.command == "probe":
            if leftover:
                parser.error(f"unrecognized arguments: {' '.join(leftover)}")
            accuracy = probe_checkpoint(args.checkpoint, args.data, args.epochs, args.lr,
                                        args.seed)
            print(f"linear probe accuracy = {accuracy:.4f}")
            return 0
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 3

    parser.error(f"unknown command {args.command!r}")
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
