"""Command line front end.

One subcommand per harness capability. Every run that writes files also
writes a `manifest.json` beside them carrying the resolved config text, the
seed, and artifact versions, so any CSV can be re-derived from its manifest
alone. All randomness funnels through --seed.

Exit codes: 0 success (and, for `check`, fully strict), 1 a check or
measurement flagged a violation, 2 usage or config errors.
"""

from __future__ import annotations

import argparse
import os
import shlex
import sys

import numpy as np

from . import __version__, tensor
from .model import (
    ConfigError,
    apply_overrides,
    build,
    config_to_text,
    default_config,
    load_checkpoint,
    load_config,
    set_all_downsample,
)
from .harness import (
    Dataset,
    DatasetSpec,
    TrainHyper,
    check_strictness,
    gen_dataset,
    robustness_sweep,
    sampling_mismatch_demo,
    stagewise_error,
    train,
)
from .harness import gradchecks, reports

# rng stream tags (model init and probe inputs must not share draws)
_STREAM_MODEL = 7
_STREAM_PROBE = 8

_DEFAULT_SWEEP = "0,30,60,90,120,150,180,210,240,270,300,330"


def _add_config_flags(p, allow_checkpoint=False):
    p.add_argument("--config", metavar="PATH",
                   help="network config file; omitted = built-in default")
    p.add_argument("--mode", choices=("strict", "approx"),
                   help="force every stage's downsample mode")
    p.add_argument("--set", action="append", default=[], dest="overrides",
                   metavar="SECTION.KEY=VALUE",
                   help="config override, repeatable (applied after --mode)")
    if allow_checkpoint:
        p.add_argument("--checkpoint", metavar="PATH",
                       help="measure this checkpoint instead of a fresh model")


def _resolve_config(args):
    cfg = load_config(args.config) if args.config else default_config()
    if args.mode:
        cfg = set_all_downsample(cfg, args.mode)
    if args.overrides:
        cfg = apply_overrides(cfg, args.overrides)
    return cfg.validate()


def _parse_angles(text: str):
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            out.append(float(part))
        except ValueError:
            raise ConfigError(f"--angles: {part!r} is not a number") from None
    if not out:
        raise ConfigError("--angles: empty list")
    return out


def _out_dir(args):
    if args.out is None:
        return None
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _command_line(argv):
    return shlex.join(["rotequiv"] + list(argv))


# ---------------------------------------------------------------------------
# check


def cmd_check(args, argv):
    cfg = _resolve_config(args)
    report = check_strictness(cfg, input_size=args.input_size)

    print(f"{'layer':>5}  {'name':<24} {'padded_in':>9} {'k':>2} {'s':>2} "
          f"{'residue':>7}  verdict")
    for r in report.rows:
        print(f"{r.index:>5}  {r.name:<24} {r.padded_in:>9} {r.k:>2} {r.s:>2} "
              f"{r.residue:>7}  {r.verdict}")
    if report.strict:
        print("verdict: strict (every strided layer has residue 0)")
    else:
        first = report.first_broken()
        print(f"verdict: NOT strict; first broken layer is #{first.index} "
              f"{first.name} (padded extent {first.padded_in}, k={first.k}, "
              f"s={first.s}, residue {first.residue})")

    out = _out_dir(args)
    if out:
        reports.write_strictness_csv(os.path.join(out, "strictness.csv"), report)
        reports.write_manifest(out, _command_line(argv), seed=None,
                               config_text=config_to_text(cfg),
                               extra={"input_size": args.input_size})
    return 0 if report.strict else 1


# ---------------------------------------------------------------------------
# equiv-error


def cmd_equiv_error(args, argv):
    angles = _parse_angles(args.angles)
    for a in angles:
        if a % 90.0 != 0.0:
            raise ConfigError(
                f"--angles: {a:g} is not a multiple of 90; the error metric "
                "is defined only on grid rotations")

    if args.checkpoint:
        if args.config or args.mode or args.overrides:
            raise ConfigError(
                "--checkpoint carries its own config; drop --config/--mode/--set")
        model, _, _ = load_checkpoint(args.checkpoint)
    else:
        cfg = _resolve_config(args)
        model = build(cfg, tensor.make_rng(args.seed, _STREAM_MODEL))

    size = model.config.input_size
    rng = tensor.make_rng(args.seed, _STREAM_PROBE)
    inputs = tensor.randn(rng, (args.inputs, 1, size, size))
    report = stagewise_error(model, inputs, angles=angles)

    print(f"{'stage':<6} {'angle':>6}  {'epsilon':>12}  {'normalized':>12}")
    for stage, angle, eps, eps_norm in report.rows:
        print(f"{stage:<6} {angle:>6g}  {eps:>12.4e}  {eps_norm:>12.4e}")
    print(f"worst normalized epsilon: {report.worst_normalized():.4e}")

    out = _out_dir(args)
    if out:
        reports.write_equiv_csv(os.path.join(out, "equivariance.csv"), report)
        reports.write_manifest(
            out, _command_line(argv), seed=args.seed,
            config_text=config_to_text(model.config),
            extra={"angles": angles, "inputs": args.inputs,
                   "checkpoint": args.checkpoint,
                   "model_fingerprint": report.model_fingerprint})
    return 0


# ---------------------------------------------------------------------------
# train


def _dataset_spec(args, image_size):
    return DatasetSpec(
        n_train=args.n_train, n_test=args.n_test, image_size=image_size,
        seed=args.seed, noise_std=args.noise_std,
        orient_bias=args.orient_bias).validate()


def _load_split(data_dir):
    train_path = os.path.join(data_dir, "train.npz")
    test_path = os.path.join(data_dir, "test.npz")
    return Dataset.load(train_path), Dataset.load(test_path)


def cmd_train(args, argv):
    if args.resume:
        if args.config or args.mode or args.overrides:
            raise ConfigError(
                "--resume carries its own config; drop --config/--mode/--set")
        model, opt_state, start_epoch = load_checkpoint(args.resume)
        cfg = model.config
    else:
        cfg = _resolve_config(args)
        model = build(cfg, tensor.make_rng(args.seed, _STREAM_MODEL))
        opt_state, start_epoch = None, 0

    if args.data:
        train_set, test_set = _load_split(args.data)
        data_desc = {"data_dir": args.data}
    else:
        spec = _dataset_spec(args, cfg.input_size)
        train_set, test_set = gen_dataset(spec)
        data_desc = {"n_train": spec.n_train, "n_test": spec.n_test,
                     "noise_std": spec.noise_std,
                     "orient_bias": spec.orient_bias}

    hyper = TrainHyper(epochs=args.epochs, batch_size=args.batch_size,
                       lr=args.lr, weight_decay=args.weight_decay,
                       seed=args.seed,
                       augment_rot90=args.augment).validate()

    out = _out_dir(args)
    history = train(model, train_set, test_set, hyper, out_dir=out,
                    optimizer_state=opt_state, start_epoch=start_epoch,
                    log=print)

    if out:
        reports.write_training_csv(os.path.join(out, "training.csv"), history)
        reports.write_manifest(
            out, _command_line(argv), seed=args.seed,
            config_text=config_to_text(cfg),
            extra={"epochs": args.epochs, "batch_size": args.batch_size,
                   "lr": args.lr, "weight_decay": args.weight_decay,
                   "augment_rot90": args.augment,
                   "resume": args.resume, **data_desc})
    final = history.final()
    if final is not None:
        print(f"done: accuracy {final.accuracy:.3f}, "
              f"angular error {final.angular_error_deg:.2f} deg")
    return 0


# ---------------------------------------------------------------------------
# robustness


def cmd_robustness(args, argv):
    model, _, _ = load_checkpoint(args.checkpoint)
    angles = _parse_angles(args.angles)

    if args.data:
        _, test_set = _load_split(args.data)
        data_desc = {"data_dir": args.data}
    else:
        spec = DatasetSpec(n_train=0, n_test=args.n_test,
                           image_size=model.config.input_size,
                           seed=args.seed, noise_std=args.noise_std,
                           orient_bias=args.orient_bias).validate()
        _, test_set = gen_dataset(spec)
        data_desc = {"n_test": spec.n_test, "noise_std": spec.noise_std,
                     "orient_bias": spec.orient_bias}

    curve = robustness_sweep(model, test_set, angles,
                             batch_size=args.batch_size)

    print(f"{'angle':>7}  {'accuracy':>8}  {'mean angular error':>18}")
    for angle, acc, err in curve.rows:
        print(f"{angle:>7g}  {acc:>8.4f}  {err:>15.2f} deg")

    out = _out_dir(args)
    if out:
        reports.write_robustness_csv(os.path.join(out, "robustness.csv"), curve)
        reports.write_manifest(
            out, _command_line(argv), seed=args.seed,
            config_text=config_to_text(model.config),
            extra={"angles": angles, "checkpoint": args.checkpoint,
                   **data_desc})
    return 0


# ---------------------------------------------------------------------------
# mismatch-demo


def cmd_mismatch_demo(args, argv):
    demo = sampling_mismatch_demo(args.n)
    print(demo.summary())
    out = _out_dir(args)
    if out:
        reports.write_mismatch_csv(os.path.join(out, "mismatch.csv"), demo)
        reports.write_manifest(out, _command_line(argv), seed=None,
                               extra={"n": args.n, "disjoint": demo.disjoint})
    return 0 if demo.disjoint else 1


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args, argv):
    if args.op == "all":
        names = gradchecks.available()
    else:
        names = [s.strip() for s in args.op.split(",") if s.strip()]
        for name in names:
            if name not in gradchecks.CASES:
                raise ConfigError(
                    f"unknown gradcheck case {name!r}; known: "
                    + ", ".join(gradchecks.available()))

    results = gradchecks.run_many(names)
    ok = True
    rows = []
    for name in names:
        err = results[name]
        good = err <= gradchecks.TOLERANCE
        ok = ok and good
        print(f"{name:<28} {err:.3e}  {'ok' if good else 'FAIL'}")
        rows.append((name, err, "ok" if good else "fail"))
    print(f"{len(names)} case(s), tolerance {gradchecks.TOLERANCE:g}: "
          + ("all ok" if ok else "FAILURES above"))

    out = _out_dir(args)
    if out:
        reports.write_gradcheck_csv(os.path.join(out, "gradcheck.csv"), rows)
        reports.write_manifest(out, _command_line(argv), seed=None,
                               extra={"ops": names,
                                      "tolerance": gradchecks.TOLERANCE})
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# gen-data


def cmd_gen_data(args, argv):
    spec = DatasetSpec(n_train=args.n_train, n_test=args.n_test,
                       image_size=args.image_size, seed=args.seed,
                       noise_std=args.noise_std,
                       orient_bias=args.orient_bias).validate()
    train_set, test_set = gen_dataset(spec)

    out = _out_dir(args)
    train_set.save(os.path.join(out, "train.npz"))
    test_set.save(os.path.join(out, "test.npz"))
    from .harness.dataset import CLASSES
    for i in range(min(4, len(test_set))):
        label = int(test_set.labels[i])
        theta = float(test_set.thetas_deg[i])
        name = f"sample_{i}_{CLASSES[label]}_{theta:.0f}deg.pgm"
        tensor.dump_pgm(test_set.images[i, 0], os.path.join(out, name))
    reports.write_manifest(
        out, _command_line(argv), seed=args.seed,
        extra={"n_train": spec.n_train, "n_test": spec.n_test,
               "image_size": spec.image_size, "noise_std": spec.noise_std,
               "orient_bias": spec.orient_bias})
    print(f"wrote {len(train_set)} train / {len(test_set)} test samples to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_data_flags(p, with_train_count=True):
    p.add_argument("--data", metavar="DIR",
                   help="directory with train.npz/test.npz; omitted = generate")
    if with_train_count:
        p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--noise-std", type=float, default=0.02)
    p.add_argument("--orient-bias", type=float, default=0.97,
                   help="probability of the class-preferred quadrant")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rotequiv",
        description="Rotation-equivariant network toolkit: strictness "
                    "checking, equivariance measurement, training, and "
                    "robustness sweeps.")
    parser.add_argument("--version", action="version",
                        version=f"rotequiv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="static downsampling strictness check")
    _add_config_flags(p)
    p.add_argument("--input-size", type=int, default=None,
                   help="override the configured input extent")
    p.add_argument("--out", metavar="DIR", help="write strictness.csv here")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("equiv-error",
                       help="measure stagewise equivariance error")
    _add_config_flags(p, allow_checkpoint=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--angles", default="90,180,270",
                   help="comma-separated grid angles (multiples of 90)")
    p.add_argument("--inputs", type=int, default=10,
                   help="number of random probe inputs")
    p.add_argument("--out", metavar="DIR", help="write equivariance.csv here")
    p.set_defaults(func=cmd_equiv_error)

    p = sub.add_parser("train", help="train on the synthetic shape dataset")
    _add_config_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=2.5e-4)
    p.add_argument("--weight-decay", type=float, default=0.05)
    p.add_argument("--no-augment", dest="augment", action="store_false",
                   help="disable random quarter-turn rotation of training "
                        "images (on by default)")
    p.add_argument("--resume", metavar="CKPT",
                   help="continue from a checkpoint (same seed resumes bitwise)")
    _add_data_flags(p)
    p.add_argument("--out", metavar="DIR", required=True,
                   help="checkpoints + training.csv go here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("robustness",
                       help="accuracy and angle error across input rotations")
    p.add_argument("--checkpoint", metavar="CKPT", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--angles", default=_DEFAULT_SWEEP)
    p.add_argument("--batch-size", type=int, default=64)
    _add_data_flags(p, with_train_count=False)
    p.add_argument("--out", metavar="DIR", help="write robustness.csv here")
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("mismatch-demo",
                       help="show the pre/post downsampling grid mismatch")
    p.add_argument("--n", type=int, default=2,
                   help="downsampled extent (input extent is 2n)")
    p.add_argument("--out", metavar="DIR", help="write mismatch.csv here")
    p.set_defaults(func=cmd_mismatch_demo)

    p = sub.add_parser("gradcheck",
                       help="finite-difference checks for the autodiff ops")
    p.add_argument("--op", default="all",
                   help="'all' or comma-separated case names")
    p.add_argument("--out", metavar="DIR", help="write gradcheck.csv here")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen-data", help="generate and save the shape dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--noise-std", type=float, default=0.02)
    p.add_argument("--orient-bias", type=float, default=0.97)
    p.add_argument("--out", metavar="DIR", required=True)
    p.set_defaults(func=cmd_gen_data)

    return parser


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, argv)
    except ConfigError as exc:
        print(f"rotequiv: config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"rotequiv: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"rotequiv: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"rotequiv: numeric failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
