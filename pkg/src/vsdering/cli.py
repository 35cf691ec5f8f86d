"""``vsdering`` command line: synth, bandpass, train, dering, fk, pick, eval, gradcheck.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import dsp, io, picking
from .gather import Gather
from .gradcheck import run_gradcheck_suite
from .model import ModelSpec, build_model, predict_gather
from .synthetics import SynthConfig, make_ringing, synth_gather
from .training import TrainConfig, TrainingDiverged, build_dataset, train

log = logging.getLogger("vsdering")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


def _positive(kind):
    def parse(text: str):
        value = kind(text)
        if not value > 0 or (isinstance(value, float) and not math.isfinite(value)):
            raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
        return value

    return parse


def _nonneg_float(text: str) -> float:
    value = float(text)
    if not value >= 0 or not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text!r}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    common.add_argument("--out-dir", default=argparse.SUPPRESS)
    common.add_argument("--threads", type=_positive(int), default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="vsdering", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--quiet", action="store_true", help="suppress progress messages")
    p.add_argument("--out-dir", default=None, help="directory for relative output paths")
    p.add_argument("--threads", type=_positive(int), default=1, help="BLAS threads")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="synthesize a clean gather")
    s.add_argument("--nt", type=_positive(int), default=1000)
    s.add_argument("--nx", type=_positive(int), default=1200)
    s.add_argument("--dt", type=_positive(float), default=0.002)
    s.add_argument("--dx", type=_positive(float), default=3.125)
    s.add_argument("--vmin", type=_positive(float), default=1300.0)
    s.add_argument("--vmax", type=_positive(float), default=2300.0)
    s.add_argument("--f0", type=_positive(float), default=60.0)
    s.add_argument("--events", type=int, default=12)
    s.add_argument("--noise", type=_nonneg_float, default=0.0)
    s.add_argument("-o", "--output", required=True)

    b = sub.add_parser("bandpass", parents=[common], help="ideal band-pass (ringing) copy")
    b.add_argument("--lo", type=_nonneg_float, default=6.0)
    b.add_argument("--hi", type=_positive(float), default=72.0)
    b.add_argument("-i", "--input", required=True)
    b.add_argument("-o", "--output", required=True)

    t = sub.add_parser("train", parents=[common], help="train on clean gathers")
    t.add_argument("--clean", nargs="+", required=True)
    t.add_argument("--epochs", type=_positive(int), default=20)
    t.add_argument("--patch", type=_positive(int), default=64)
    t.add_argument("--stride", type=_positive(int), default=32)
    t.add_argument("--batch", type=_positive(int), default=32)
    t.add_argument("--lr", type=_nonneg_float, default=1e-3)
    t.add_argument("--lo", type=_nonneg_float, default=6.0)
    t.add_argument("--hi", type=_positive(float), default=72.0)
    t.add_argument("--loss-csv", default=None, help="default: <weights>.loss.csv")
    t.add_argument("--checkpoint-every", type=int, default=0, help="epochs; 0 disables")
    t.add_argument("-o", "--output", required=True)

    d = sub.add_parser("dering", parents=[common], help="apply trained weights")
    d.add_argument("-w", "--weights", required=True)
    d.add_argument("-i", "--input", required=True)
    d.add_argument("-o", "--output", required=True)

    f = sub.add_parser("fk", parents=[common], help="f-k spectrum as CSV and PGM")
    f.add_argument("-i", "--input", required=True)
    f.add_argument("-o", "--output", required=True, help="output prefix")

    k = sub.add_parser("pick", parents=[common], help="STA/LTA first-break picks")
    k.add_argument("-i", "--input", required=True)
    k.add_argument("--sta", type=_positive(float), default=0.02)
    k.add_argument("--lta", type=_positive(float), default=0.2)
    k.add_argument("--mode", choices=("argmax", "threshold"), default="argmax")
    k.add_argument("--thr", type=float, default=4.0)
    k.add_argument("-o", "--output", required=True)

    e = sub.add_parser("eval", parents=[common], help="metrics against a clean gather")
    e.add_argument("--clean", required=True)
    e.add_argument("--candidate", required=True)
    e.add_argument("--lo", type=_nonneg_float, default=6.0)
    e.add_argument("--hi", type=_positive(float), default=72.0)
    e.add_argument("-o", "--output", required=True)

    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    return p


def _out(args, path: str) -> Path:
    p = Path(path)
    if args.out_dir and not p.is_absolute():
        p = Path(args.out_dir) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _check_band(lo: float, hi: float, dt: float) -> None:
    if not lo < hi:
        raise UsageError(f"--lo {lo} must be below --hi {hi}")
    if hi > 0.5 / dt:
        raise UsageError(f"--hi {hi} exceeds the Nyquist frequency {0.5 / dt} of the input")


def cmd_synth(args) -> None:
    config = SynthConfig(
        n_t=args.nt, n_x=args.nx, dt=args.dt, dx=args.dx, v_min=args.vmin,
        v_max=args.vmax, f0=args.f0, num_events=args.events, seed=args.seed,
        noise_std=args.noise,
    )
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    io.write_gather(synth_gather(config), _out(args, args.output))


def cmd_bandpass(args) -> None:
    g = io.read_gather(args.input)
    _check_band(args.lo, args.hi, g.dt)
    io.write_gather(make_ringing(g, args.lo, args.hi), _out(args, args.output))


def cmd_train(args) -> None:
    config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch, patch=args.patch,
        stride=args.stride, lr=args.lr, seed=args.seed,
        checkpoint_every=args.checkpoint_every,
        checkpoint_dir=str(_out(args, args.output + ".ckpt")) if args.checkpoint_every else None,
    )
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    gathers = [io.read_gather(path) for path in args.clean]
    for g in gathers:
        _check_band(args.lo, args.hi, g.dt)
    dataset = build_dataset(gathers, args.lo, args.hi, config.patch, config.stride)
    if not dataset:
        raise ValueError("no training patches: gathers are empty or smaller than --patch")
    log.info("training on %d patches from %d gathers", len(dataset), len(gathers))
    spec, params = build_model(args.seed)
    params, loss_log = train(spec, params, dataset, config, progress=not args.quiet)
    out = _out(args, args.output)
    io.write_weights(params, out)
    loss_path = _out(args, args.loss_csv) if args.loss_csv else out.with_name(out.name + ".loss.csv")
    io.write_loss_csv(loss_log, loss_path)


def cmd_dering(args) -> None:
    params = io.read_weights(args.weights)
    g = io.read_gather(args.input)
    io.write_gather(predict_gather(ModelSpec(), params, g), _out(args, args.output))


def cmd_fk(args) -> None:
    spec = dsp.fk_spectrum(io.read_gather(args.input))
    prefix = str(_out(args, args.output))
    io.write_matrix_csv(spec.magnitude_db, prefix + ".csv")
    io.write_pgm(spec.magnitude_db, prefix + ".pgm", (dsp.DB_FLOOR, 0.0))


def cmd_pick(args) -> None:
    g = io.read_gather(args.input)
    sta, lta = round(args.sta / g.dt), round(args.lta / g.dt)
    if not 1 <= sta < lta <= g.n_t:
        raise UsageError(
            f"windows must satisfy 1 <= sta < lta <= n_t samples, got {sta}, {lta}, {g.n_t}"
        )
    picks = picking.pick_first_breaks(g, args.sta, args.lta, args.mode, args.thr)
    out = _out(args, args.output)
    io.write_picks_csv(picks, out)
    summary = picking.pick_consistency(picks, g.dx)
    summary.update(sta_len=picks.sta_len, lta_len=picks.lta_len, mode=picks.mode)
    if picks.mode == "threshold":
        summary["threshold"] = picks.threshold
    line = json.dumps(summary, sort_keys=True)
    out.with_name(out.name + ".summary.jsonl").write_text(line + "\n")
    print(line)


def cmd_eval(args) -> None:
    clean = io.read_gather(args.clean)
    cand = io.read_gather(args.candidate)
    _check_band(args.lo, args.hi, clean.dt)
    result = dsp.metrics(cand, clean, args.lo, args.hi)
    out = _out(args, args.output)
    out.write_text(json.dumps(result) + "\n")
    diff = Gather(
        np.asarray(cand.data, np.float64) - np.asarray(clean.data, np.float64),
        clean.dt,
        clean.dx,
    )
    io.write_gather(diff, out.with_name(out.name + ".diff.vsg"))
    amp = float(np.max(np.abs(clean.data))) or 1.0
    io.write_pgm(diff.data, out.with_name(out.name + ".diff.pgm"), (-amp, amp))
    print(json.dumps(result))


def cmd_gradcheck(args) -> None:
    reports = run_gradcheck_suite()
    for r in reports:
        if not args.quiet:
            print(r.summary())
    failed = [r.name for r in reports if not r.passed]
    if failed:
        raise NumericalFailure(f"gradient check failed: {', '.join(failed)}")


COMMANDS = {
    "synth": cmd_synth,
    "bandpass": cmd_bandpass,
    "train": cmd_train,
    "dering": cmd_dering,
    "fk": cmd_fk,
    "pick": cmd_pick,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(logging.WARNING if args.quiet else logging.INFO)
    try:
        with threadpool_limits(limits=args.threads):
            COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"vsdering {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, NumericalFailure, FloatingPointError) as exc:
        print(f"vsdering {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"vsdering {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
