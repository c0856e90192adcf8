"""Command-line entry point: ``dalebp {train,experiment,verify-traces,inspect-checkpoint}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import DalebpError

EXIT_INTERNAL = 10


def _cmd_train(args):
    from .config import load_config
    from .train import train

    cfg = load_config(args.config)
    history = train(cfg)
    print(json.dumps(history[-1], default=float))


def _cmd_experiment(args):
    from .config import RunConfig, ensure_output_dir, load_config
    from .experiments import EXPERIMENTS

    if args.id not in EXPERIMENTS:
        from .errors import ConfigurationError

        raise ConfigurationError(f"unknown experiment {args.id!r}; choose from {', '.join(EXPERIMENTS)}")
    cfg = load_config(args.config) if args.config else RunConfig(output_dir=f"runs/{args.id}")
    out = ensure_output_dir(cfg)
    result = EXPERIMENTS[args.id](cfg, out)
    summary = result[1] if isinstance(result, tuple) else None
    if args.id == "microcircuit-traces":
        summary = {"mc2_correlation": result["mc2_correlation"]}
    if args.id == "assembly":
        summary = {"permutation_rate": sum(v[0] for v in summary) / len(summary),
                   "max_sum_error": max(v[1] for v in summary)}
    if summary is not None:
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=str))
        print(json.dumps(summary, default=str))
    print(f"wrote {out}")


def _cmd_verify(args):
    from .experiments import verify_traces

    checked = verify_traces(args.golden_dir)
    print("traces match: " + ", ".join(checked))


def _cmd_inspect(args):
    from . import checkpoint

    ck = checkpoint.load(args.path)
    meta = ck["meta"]
    print(f"epoch {meta['epoch']}, optimizer step {meta['optimizer_step']}")
    for name, m in ck["params"].items():
        v = m.values
        print(f"  {name:<24} {v.shape[0]}x{v.shape[1]}  sign {m.pre_sign:+d}  min {v.min():.4g}  max {v.max():.4g}")
    if args.config:
        print(json.dumps(meta["config"], indent=2, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dalebp", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a network on MNIST")
    t.add_argument("--config", required=True)
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("experiment", help="run a reproduction experiment")
    e.add_argument("id", help="apical-slope | anti-hebbian | assembly | angle | microcircuit-traces")
    e.add_argument("--config")
    e.set_defaults(func=_cmd_experiment)

    v = sub.add_parser("verify-traces", help="compare microcircuit waveforms with the golden traces")
    v.add_argument("--golden-dir")
    v.set_defaults(func=_cmd_verify)

    i = sub.add_parser("inspect-checkpoint", help="summarize a checkpoint file")
    i.add_argument("path")
    i.add_argument("--config", action="store_true", help="also print the stored config")
    i.set_defaults(func=_cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except DalebpError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error [OSError]: {exc}", file=sys.stderr)
        return 7
    return 0


if __name__ == "__main__":
    sys.exit(main())
