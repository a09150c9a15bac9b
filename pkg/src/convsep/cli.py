"""Command-line interface.

Subcommands: synth-data, train, separate, evaluate, exp-length, exp-noise,
exp-shift, grad-check, info.  Configuration comes from an optional key=value
file plus --set overrides.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .attractor import separation_loss
from .autodiff import Tensor
from .embednet import Network, NetworkConfig, receptive_field
from .harness import (
    NumericalAbort,
    RunConfig,
    RunExistsError,
    cmd_evaluate,
    cmd_experiment_length,
    cmd_experiment_noise,
    cmd_experiment_shift,
    cmd_separate,
    cmd_synth_data,
    cmd_train,
    load_network,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = RunConfig.from_text(Path(args.config).read_text())
    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    return cfg.with_overrides(overrides)


def build_parser() -> _Parser:
    parser = _Parser(prog="convsep", description=__doc__)
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument(
        "--set", action="append", metavar="KEY=VALUE",
        help="override a config entry (repeatable)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="synthesize the speaker corpus")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--n-test", type=int, default=32)
    p.add_argument("--duration", type=float, default=60.0)

    p = sub.add_parser("train", help="train a separator")
    p.add_argument("run_dir")
    p.add_argument("--resume-from", default=None)

    p = sub.add_parser("separate", help="separate one mixture WAV")
    p.add_argument("run_dir")
    p.add_argument("mixture")
    p.add_argument("out_dir")
    p.add_argument("--mode", choices=("batch", "streaming"), default="batch")

    p = sub.add_parser("evaluate", help="score a test manifest")
    p.add_argument("run_dir")
    p.add_argument("manifest")
    p.add_argument("--out-csv", default=None)

    for name in ("exp-length", "exp-noise", "exp-shift"):
        p = sub.add_parser(name, help=f"run the {name[4:]} experiment")
        p.add_argument("run_dir")
        p.add_argument("--out-csv", default=None)
        p.add_argument("--n-examples", type=int, default=None)

    sub.add_parser("grad-check", help="finite-difference check on a small net")
    sub.add_parser("info", help="print architecture facts")
    return parser


def _cmd_info():
    cfg = NetworkConfig.default()
    net = Network(cfg, seed=0)
    rf = receptive_field(cfg)
    print(f"default network parameters: {net.parameter_count()}")
    print(f"receptive field (time):     {rf.rf_time}")
    print(f"fixed lag (frames):         {rf.lag}")
    print(f"receptive field (freq):     {rf.rf_freq}")
    toy = receptive_field(NetworkConfig.fixed_lag_toy())
    print(f"toy config lag:             {toy.lag}")


def _cmd_grad_check():
    rng = np.random.default_rng(0)
    net = Network(NetworkConfig.small(embedding_dim=4, channels=4, dilations=(1, 2)))
    feats = rng.normal(size=(1, 1, 9, 12))
    labels_raw = rng.integers(0, 2, size=(9, 12))
    labels = np.stack([labels_raw, 1 - labels_raw], axis=2).astype(float)
    from .attractor import LabelTensor

    mix_mag = np.abs(rng.normal(size=(9, 12)))
    src = np.abs(rng.normal(size=(9, 12, 2)))

    def loss_fn():
        out = net.forward(Tensor(feats), mode="train")
        return separation_loss(out[0], LabelTensor(labels), mix_mag, src)

    worst, report = ad.grad_check(loss_fn, net.params, h=1e-5, n_samples=10)
    for name, err in sorted(report.items()):
        print(f"{name:24s} max rel err {err:.3e}")
    print(f"worst: {worst:.3e}")
    if worst > 1e-4:
        raise NumericalAbort(f"gradient check failed: {worst:.3e}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE

    try:
        cfg = _load_config(args)
        if args.command == "synth-data":
            result = cmd_synth_data(
                cfg, n_test=args.n_test, duration=args.duration,
                out_dir=args.out_dir,
            )
            print(f"wrote test manifest: {result['test_manifest']}")
        elif args.command == "train":
            _, ckpt = cmd_train(cfg, args.run_dir, resume_from=args.resume_from)
            print(f"final checkpoint: {ckpt}")
        elif args.command == "separate":
            paths = cmd_separate(
                args.run_dir, args.mixture, args.out_dir, mode=args.mode,
                alpha=cfg.alpha, seed=cfg.seed,
            )
            for p in paths:
                print(p)
        elif args.command == "evaluate":
            net = load_network(args.run_dir)
            _, aggregate = cmd_evaluate(net, args.manifest, cfg, args.out_csv)
            for key, value in aggregate.items():
                print(f"{key}: {value:.2f} dB")
        elif args.command in ("exp-length", "exp-noise", "exp-shift"):
            net = load_network(args.run_dir)
            kwargs = {"out_csv": args.out_csv}
            if args.n_examples is not None:
                kwargs["n_examples"] = args.n_examples
            if args.command == "exp-length":
                rows = cmd_experiment_length(net, cfg, **kwargs)
                for row in rows:
                    print(row)
            elif args.command == "exp-noise":
                rows = cmd_experiment_noise(net, cfg, **kwargs)
                for row in rows:
                    print(row)
            else:
                conditions = cmd_experiment_shift(net, cfg, **kwargs)
                for tag, scores in conditions.items():
                    print(
                        f"{tag}: model {scores['model_sdr']:.2f} dB, "
                        f"oracle {scores['oracle_sdr']:.2f} dB"
                    )
        elif args.command == "grad-check":
            _cmd_grad_check()
        elif args.command == "info":
            _cmd_info()
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, RunExistsError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
