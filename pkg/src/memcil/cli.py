"""Command-line driver.

Run options mirror :class:`memcil.experiment.RunConfig`; a JSON config file
(``--config``) supplies a base that explicit flags override, and the
``CIL_SEED`` environment variable overrides the seed of both.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import typing
from pathlib import Path

import numpy as np

from memcil import experiment
from memcil.datastream import save_dataset
from memcil.errors import ConfigError, MemcilError
from memcil.evaluation import export_projection, projection_csv
from memcil.experiment import RunConfig, resolve_seed, summary_csv, sweep
from memcil.gradcheck import check_all

DEFAULT_SWEEPS = {
    "lambda": "0,0.5,1,2",
    "budget": "10,20,40",
    "fidelity": "1/8,1/4,1/3,1/2",
}


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _optional_int(text):
    return None if text.lower() in ("none", "") else int(text)


def _optional_shape(text):
    return None if text.lower() in ("none", "") else _ints(text)


def _schedule(text):
    # "18:5,24:5" -> ((18, 5), (24, 5))
    pairs = []
    for item in text.split(","):
        if item.strip():
            epoch, div = item.split(":")
            pairs.append((int(epoch), float(div)))
    return tuple(pairs)


def _bool(text):
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


_PARSERS = {"hidden": _ints, "image_shape": _optional_shape, "schedule": _schedule,
            "mean_rank": _optional_int, "data_seed": _optional_int, "stream_seed": _optional_int}


def _field_parser(f):
    if f.name in _PARSERS:
        return _PARSERS[f.name]
    hint = typing.get_type_hints(RunConfig)[f.name]
    if hint is bool:
        return _bool
    if hint in (int, float):
        return hint
    return str


def add_run_options(parser):
    group = parser.add_argument_group("run options")
    group.add_argument("--config", help="JSON file with RunConfig fields")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        group.add_argument(flag, dest=f.name, type=_field_parser(f), default=None,
                           help=f"default: {f.default!r}")
    group.add_argument("--lambda", dest="lam", type=float, default=None, help=argparse.SUPPRESS)


def config_from_args(args) -> RunConfig:
    base = {}
    if args.config:
        with open(args.config) as fh:
            base = json.load(fh)
        if not isinstance(base, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
    for f in dataclasses.fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            base[f.name] = value
    return resolve_seed(RunConfig.from_dict(base))


def _cmd_run(args):
    config = config_from_args(args)
    metrics = experiment.run_experiment(config)
    sys.stdout.write(metrics.to_csv())
    if len(metrics.per_session_accuracy) > 1:
        print(f"# average incremental accuracy {metrics.average_incremental_accuracy:.6f}",
              file=sys.stderr)
    return 0


def _make_sweep(param):
    def cmd(args):
        config = config_from_args(args)
        values = [v for v in args.values.split(",") if v.strip()]
        if param != "fidelity":
            values = [float(v) for v in values]
        seeds = _ints(args.seeds) if args.seeds else None
        rows = sweep(config, param, values, seeds, out_dir=config.out_dir)
        sys.stdout.write(summary_csv(rows))
        return 0
    return cmd


def _cmd_gradcheck(args):
    results = check_all(seeds=range(args.seeds), eps=args.eps)
    worst = max(r.error for r in results)
    for r in results:
        print(f"{r.loss:18s} {r.activation:9s} seed={r.seed} max_rel_err={r.error:.3e}")
    ok = worst < args.tol
    print(f"worst {worst:.3e} tolerance {args.tol:g}: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def _cmd_synth(args):
    config = config_from_args(args)
    if config.train_path:
        raise ConfigError("synth generates data; do not pass --train-path")
    data = config.load_data()
    prefix = Path(args.output)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    train = prefix.with_name(prefix.name + ".train.cild")
    test = prefix.with_name(prefix.name + ".test.cild")
    save_dataset(data, train, test)
    print(train)
    print(test)
    return 0


def _cmd_project(args):
    config = config_from_args(args)
    result = experiment.execute(config)
    state, session = result.state, result.last_session
    if state.codec is None:
        raise ConfigError(f"mode {config.mode} keeps no codec; nothing to compare against")
    x = session.train_x
    x_hat = state.codec.roundtrip(x)
    feats = np.vstack([state.model.extract_features(x), state.model.extract_features(x_hat)])
    tags = ["real"] * len(x) + ["aux"] * len(x_hat)
    text = projection_csv(export_projection(feats, tags), tags)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="memcil", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configuration and print its metrics CSV")
    add_run_options(p)
    p.set_defaults(func=_cmd_run)

    for param in ("lambda", "budget", "fidelity"):
        p = sub.add_parser(f"sweep-{param}", help=f"sweep {param} and print a summary CSV")
        add_run_options(p)
        p.add_argument("--values", default=DEFAULT_SWEEPS[param],
                       help=f"comma separated (default {DEFAULT_SWEEPS[param]})")
        p.add_argument("--seeds", default=None, help="comma separated seeds (default: the run seed)")
        p.set_defaults(func=_make_sweep(param))

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss and layer type")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic dataset as a pair of CILD files")
    add_run_options(p)
    p.add_argument("-o", "--output", required=True,
                   help="path prefix; writes PREFIX.train.cild and PREFIX.test.cild")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("project", help="2-D projection of real vs auxiliary features after a run")
    add_run_options(p)
    p.add_argument("-o", "--output", help="CSV path (default stdout)")
    p.set_defaults(func=_cmd_project)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MemcilError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"memcil: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
