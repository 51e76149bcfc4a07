"""Command-line entry point.

Subcommands: analyze (phase portrait as JSON + CSVs), simulate (spike-train
CSV), train, eval, featuremap, gradcheck, sweep.  Every artifact starts
with a provenance header carrying the library version, a config hash, and
the seed, so a run can be reproduced from its outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import re
import sys

import numpy as np

from . import __version__
from .data import firing_rate_featuremap, repeat_frames
from .neurons import NeuronParams, simulate_constant_input, write_spike_train_csv
from .phaseplane import rheobase, vector_field
from .training import (TrainConfig, gradient_check, load_checkpoint,
                       load_config, sit_location_sweep, train)

NEURON_CHOICES = {
    "lif": NeuronParams.lif,
    "qif": NeuronParams.qif,
    "sit": NeuronParams.sit,
    "sitb": NeuronParams.sit_bursting,
    "izh": NeuronParams.izhikevich_tonic,
}


def args_hash(values: dict) -> str:
    payload = json.dumps(values, sort_keys=True, default=str).encode()
    return hashlib.sha256(payload).hexdigest()[:12]


def provenance_line(config_hash: str, seed: int) -> str:
    return f"provenance version={__version__} config={config_hash} seed={seed}"


_PROVENANCE_RE = re.compile(
    r"#?\s*provenance version=(\S+) config=(\S+) seed=(-?\d+)")


def parse_provenance(line: str) -> dict:
    """Parse a provenance header line back into its fields."""
    m = _PROVENANCE_RE.search(line)
    if m is None:
        raise ValueError(f"no provenance header in {line!r}")
    return {"version": m.group(1), "config": m.group(2), "seed": int(m.group(3))}


def _provenance_dict(config_hash: str, seed: int) -> dict:
    return {"version": __version__, "config": config_hash, "seed": seed}


def _build_neuron(args) -> NeuronParams:
    factory = NEURON_CHOICES[args.neuron]
    return factory(tau=args.tau)


def _parse_grid(tokens: list[str]):
    spec = {"u": (-0.5, 1.5), "v": (-0.1, 0.1), "res": 32}
    for token in tokens or []:
        key, _, value = token.partition("=")
        if key == "res":
            spec["res"] = int(value)
        elif key in ("u", "v"):
            lo, _, hi = value.partition(":")
            spec[key] = (float(lo), float(hi))
        else:
            raise ValueError(f"bad grid token {token!r}; "
                             "expected u=lo:hi v=lo:hi res=n")
    return spec


def cmd_analyze(args) -> int:
    params = _build_neuron(args)
    grid = _parse_grid(args.grid)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    config_hash = args_hash({"cmd": "analyze", "neuron": args.neuron,
                             "input": args.input, "tau": args.tau,
                             "grid": grid})
    portrait = vector_field(params, args.input, grid["u"], grid["v"],
                            (grid["res"], grid["res"]))
    try:
        base = rheobase(params)
        rheo, coincide = base.current, base.coincide_voltage
    except ValueError:
        rheo, coincide = None, None

    doc = {
        "provenance": _provenance_dict(config_hash, args.seed),
        "model": args.neuron if args.neuron != "sitb" else "sit_bursting",
        "params": dataclasses.asdict(params),
        "input": args.input,
        "fixed_points": [
            {"u": fp.u, "v": fp.v,
             "eigen_re": [fp.eigenvalues[0].real, fp.eigenvalues[1].real],
             "eigen_im": [fp.eigenvalues[0].imag, fp.eigenvalues[1].imag],
             "class": fp.classification}
            for fp in portrait.fixed_points
        ],
        "rheobase": rheo,
        "coincide_voltage": coincide,
    }
    with open(os.path.join(out_dir, "analysis.json"), "w") as fh:
        json.dump(doc, fh, indent=2)

    header = provenance_line(config_hash, args.seed)
    with open(os.path.join(out_dir, "vector_field.csv"), "w") as fh:
        fh.write(f"# {header}\n")
        fh.write("u,v,du,dv\n")
        for i, u in enumerate(portrait.u_grid):
            for j, v in enumerate(portrait.v_grid):
                fh.write(f"{u!r},{v!r},{portrait.du[i, j]!r},{portrait.dv[i, j]!r}\n")
    for name, curve in (("nullcline_u.csv", portrait.u_nullcline),
                        ("nullcline_v.csv", portrait.v_nullcline)):
        with open(os.path.join(out_dir, name), "w") as fh:
            fh.write(f"# {header}\n")
            fh.write("u,v\n")
            for u, v in curve:
                fh.write(f"{u!r},{v!r}\n")
    print(json.dumps({"fixed_points": doc["fixed_points"],
                      "rheobase": rheo, "out": out_dir}))
    return 0


def cmd_simulate(args) -> int:
    params = _build_neuron(args)
    config_hash = args_hash({"cmd": "simulate", "neuron": args.neuron,
                             "input": args.input, "steps": args.steps,
                             "tau": args.tau})
    result = simulate_constant_input(params, args.input, args.steps)
    header = [provenance_line(config_hash, args.seed)]
    if args.out:
        write_spike_train_csv(result, args.out, header)
        print(json.dumps({"spikes": int(result.spike_count),
                          "isis": result.isis.tolist(), "out": args.out}))
    else:
        write_spike_train_csv(result, sys.stdout, header)
    return 0


def _config_from_args(args) -> TrainConfig:
    config = load_config(args.config)
    overrides = {}
    for key in ("epochs", "seed", "timesteps", "batch_size", "learning_rate"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return dataclasses.replace(config, **overrides) if overrides else config


def cmd_train(args) -> int:
    config = _config_from_args(args)
    os.makedirs(args.out, exist_ok=True)
    checkpoint = os.path.join(args.out, "model.ckpt")
    report = train(config, checkpoint_path=checkpoint)
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        fh.write(report.to_json())
    report.write_curves_csv(os.path.join(args.out, "curves.csv"))
    print(json.dumps({"test_accuracy": report.test_accuracy[-1],
                      "checkpoint": checkpoint}))
    return 0


def cmd_eval(args) -> int:
    from .training import _load_dataset, evaluate

    net, _, header = load_checkpoint(args.checkpoint)
    config = load_config(args.config)
    _, test_set = _load_dataset(config, seed_from_header(header))
    accuracy = evaluate(net, test_set.images, test_set.labels, config.timesteps)
    print(json.dumps({"accuracy": accuracy,
                      "provenance": {"version": __version__,
                                     "config": header["config_hash"],
                                     "seed": header["seed"]}}))
    return 0


def seed_from_header(header: dict) -> int:
    seq = np.random.SeedSequence(header["seed"]).spawn(4)
    return int(np.random.default_rng(seq[0]).integers(2 ** 31))


def cmd_featuremap(args) -> int:
    from .network import ForwardContext, SpikingLayer
    from .training import _load_dataset

    net, _, header = load_checkpoint(args.checkpoint)
    config = load_config(args.config)
    _, test_set = _load_dataset(config, seed_from_header(header))
    images = test_set.images[:args.samples]
    frames = repeat_frames(images, config.timesteps).astype(np.float32)

    ctx = ForwardContext(training=False)
    x = frames
    spiking_seen = 0
    for _, layer in net.layers:
        x = layer.forward(x, ctx)
        if isinstance(layer, SpikingLayer):
            if spiking_seen == args.layer:
                break
            spiking_seen += 1
    else:
        raise SystemExit(f"no spiking layer with index {args.layer}")
    if x.ndim != 5:
        raise SystemExit("featuremap needs a convolutional spiking layer")
    rates = firing_rate_featuremap(x)
    config_hash = header["config_hash"]
    with open(args.out, "w") as fh:
        fh.write(f"# {provenance_line(config_hash, header['seed'])}\n")
        fh.write("sample,row,col,rate\n")
        for n in range(rates.shape[0]):
            for r in range(rates.shape[1]):
                for c in range(rates.shape[2]):
                    fh.write(f"{n},{r},{c},{rates[n, r, c]!r}\n")
    print(json.dumps({"samples": int(rates.shape[0]), "out": args.out}))
    return 0


def cmd_gradcheck(args) -> int:
    shape = tuple(int(v) for v in args.input_shape.split(","))
    error = gradient_check(args.arch, shape, samples=args.samples,
                           timesteps=args.timesteps, coords=args.coords,
                           seed=args.seed, use_dropout_mask=args.dropout)
    print(json.dumps({"max_relative_error": error, "passed": error < 1e-4}))
    return 0 if error < 1e-4 else 1


def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    results = sit_location_sweep(config, args.positions)
    print(json.dumps({str(k): v for k, v in results.items()}, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sitnn",
        description="Phase-plane analysis and hybrid spiking-network training")
    parser.add_argument("--version", action="version",
                        version=f"sitnn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_neuron_flags(p):
        p.add_argument("--neuron", choices=sorted(NEURON_CHOICES), required=True)
        p.add_argument("--input", type=float, default=0.0)
        p.add_argument("--tau", type=float, default=None)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("analyze", help="phase portrait, fixed points, rheobase")
    add_neuron_flags(p)
    p.add_argument("--grid", nargs="*", metavar="SPEC",
                   help="u=lo:hi v=lo:hi res=n")
    p.add_argument("--out", default="analysis_out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="constant-input spike train as CSV")
    add_neuron_flags(p)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="train_out")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--timesteps", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float,
                   default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("featuremap", help="firing-rate featuremap CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--layer", type=int, default=0,
                   help="spiking layer index (0-based)")
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--out", default="featuremap.csv")
    p.set_defaults(func=cmd_featuremap)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--arch", default="FC16-SIT-FC10")
    p.add_argument("--input-shape", dest="input_shape", default="8")
    p.add_argument("--samples", type=int, default=4)
    p.add_argument("--timesteps", type=int, default=4)
    p.add_argument("--coords", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dropout", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="accuracy vs standardized-layer position")
    p.add_argument("--config", required=True)
    p.add_argument("--positions", type=int, nargs="*", default=[])
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
        if getattr(args, "tau", None) is None and hasattr(args, "tau"):
            args.tau = 1.0 if getattr(args, "neuron", "") == "izh" else 2.0
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
