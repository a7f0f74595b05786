"""Command line front end: one subcommand per experiment kind.

Exit codes: 0 on success (including certificate reports whose conditions
fail), 1 on bad usage or config validation, 2 on runtime or numerical
failure.  A JSON config file supplies defaults; explicit flags win.
"""

import argparse
import dataclasses
import json
import sys

from .harness import (
    WORKERS_ENV_VAR,
    ExperimentConfig,
    default_workers,
    emit_csv,
    render_csv,
    run_experiment,
)

_KIND_BY_COMMAND = {
    "flip-sweep": "flip-sweep",
    "decompose": "decompose",
    "layer-stats": "layer-stats",
    "theorem3-check": "theorem3",
    "stein-check": "stein",
    "ep-sup": "ep-sup",
    "bounds": "bounds",
    "calibrate-constants": "calibrate-constants",
}

_CONFIG_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage problems are exit code 1; argparse defaults to 2, which
        # is reserved for runtime failures here
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _int_tuple(text):
    return tuple(int(v) for v in text.split(","))


def _float_tuple(text):
    return tuple(float(v) for v in text.split(","))


def _add_common_flags(sub):
    sub.add_argument("--activation", help="name or name:param, e.g. "
                     "relu, tanh, shifted_relu:0.5")
    sub.add_argument("--d", type=int, help="input width")
    sub.add_argument("--m", type=int, help="hidden width")
    sub.add_argument("--dims", type=_int_tuple,
                     help="comma list of layer widths ending in 1, "
                     "e.g. 1500,1500,1500,1500,1")
    sub.add_argument("--s0", type=_float_tuple, dest="s0",
                     help="comma list of step scales")
    sub.add_argument("--xi", type=float,
                     help="certificate target; also switches the step "
                     "rule to the certified one")
    sub.add_argument("--trials", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--workers", type=int,
                     help=f"default from ${WORKERS_ENV_VAR}, else 1")
    sub.add_argument("--out", help="CSV output path (default: stdout)")
    sub.add_argument("--config", help="JSON file of config fields")
    sub.add_argument("--delta", type=_float_tuple, dest="delta",
                     help="ep-sup box radii / bounds failure probability")
    sub.add_argument("--grid", type=int, dest="grid",
                     help="grid points per theta axis (odd)")
    sub.add_argument("--x1", type=float, help="stein mean")
    sub.add_argument("--x2", type=float, help="stein variance")
    sub.add_argument("--tail-c", type=float, dest="tail_c")
    sub.add_argument("--tail-c0", type=float, dest="tail_c0")
    sub.add_argument("--dudley-c", type=float, dest="dudley_c")
    sub.add_argument("--ratio-c", type=float, dest="ratio_c")


def build_parser():
    parser = _Parser(prog="fliplab",
                     description="Monte Carlo lab for one-step gradient "
                     "attacks on random networks")
    subs = parser.add_subparsers(dest="command", required=True,
                                 parser_class=_Parser)
    for command in _KIND_BY_COMMAND:
        _add_common_flags(subs.add_parser(command))
    return parser


_FLAG_TO_FIELD = {
    "activation": "activation", "d": "d", "m": "m", "dims": "dims",
    "s0": "s0_values", "xi": "xi", "trials": "trials", "seed": "seed",
    "workers": "workers", "out": "out", "delta": "delta_values",
    "grid": "grid_per_axis", "x1": "x1", "x2": "x2", "tail_c": "tail_c",
    "tail_c0": "tail_c0", "dudley_c": "dudley_c", "ratio_c": "ratio_c",
}

_TUPLE_FIELDS = ("dims", "s0_values", "delta_values")


def _load_config_file(path):
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    unknown = set(data) - _CONFIG_FIELDS - {"kind"}
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    data.pop("kind", None)  # the subcommand decides the kind
    for key in _TUPLE_FIELDS:
        if data.get(key) is not None:
            data[key] = tuple(data[key])
    return data


def build_config(args):
    overrides = {}
    if args.config:
        overrides.update(_load_config_file(args.config))
    for flag, field in _FLAG_TO_FIELD.items():
        value = getattr(args, flag)
        if value is not None:
            overrides[field] = value
    overrides.setdefault("workers", default_workers())
    return ExperimentConfig(kind=_KIND_BY_COMMAND[args.command], **overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = build_config(args)
        result = run_experiment(config)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except Exception as exc:  # noqa: BLE001 - numerical/runtime bucket
        sys.stderr.write(f"failure: {type(exc).__name__}: {exc}\n")
        return 2
    try:
        if config.out:
            emit_csv(result, config.out)
            print(f"{len(result.rows)} rows -> {config.out}")
        else:
            sys.stdout.write(render_csv(result))
    except OSError as exc:
        sys.stderr.write(f"failure: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
