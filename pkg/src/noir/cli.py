"""``noir`` command-line driver.

Every subcommand reads a RunConfig (``--config`` plus ``--set`` overrides)
and works inside ``--out-dir``.  Exit codes identify the failure class.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .checkpoint import CheckpointError, VersionMismatch
from .config import config_load
from .diffcore import ShapeError
from .errors import ConfigError, ContractError, DimensionMismatch
from .meta import TrainingDiverged
from .reno import ResolutionSet
from .workflow import SIDES, Run

EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_SHAPE = 4
EXIT_VERSION = 5
EXIT_CHECKPOINT = 6
EXIT_DIVERGED = 7


def parse_size(text: str) -> tuple[int, int]:
    """``"WxH"`` -> array shape ``(H, W)``."""
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("resolution must be positive")
    return h, w


def _resolutions(text: str) -> ResolutionSet:
    try:
        return ResolutionSet.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. meta.inner_steps=7 (repeatable)")
    common.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    common.add_argument("--out-dir", default="runs/default", help="run directory (default: %(default)s)")
    common.add_argument("--data-dir", help="dataset directory (default: OUT_DIR/data)")
    common.add_argument("--inner-steps", type=int, help="latent fitting steps at test time")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="noir", description="Latent operators between implicit neural representations.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate the synthetic dataset")
    for name, helptext in (("train-inr", "meta-train an INR"), ("fit", "fit latents for every sample")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--side", choices=SIDES + ("both",), default="both")
    sub.add_parser("train-op", parents=[common], help="train the latent operator")
    sub.add_parser("eval", parents=[common], help="evaluate the pipeline on the test split")
    s = sub.add_parser("reno", parents=[common], help="resolution-consistency audit")
    s.add_argument("--resolutions", type=_resolutions, help="e.g. 16,24,32,48 or 16x16,32x32")
    s.add_argument("--render-pgm", action="store_true", help="also write the rendered outputs")
    s = sub.add_parser("render", parents=[common], help="render one latent to a PGM")
    s.add_argument("--latents", required=True, help="latents checkpoint")
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--resolution", type=parse_size, required=True, help="WxH")
    s.add_argument("--model", help="INR checkpoint (default: the one recorded in the latents)")
    s.add_argument("--output", help="PGM path")
    sub.add_parser("ablate-op", parents=[common], help="compare MLP and ridge-linear operators")
    sub.add_parser("all", parents=[common], help="gen, train-inr, fit, train-op, eval, reno, ablate-op")
    return p


def _sides(arg: str):
    return SIDES if arg == "both" else (arg,)


def run_command(args) -> None:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    cfg = config_load(args.config, overrides)
    run = Run(cfg, args.out_dir, args.data_dir, args.inner_steps)
    run.out.mkdir(parents=True, exist_ok=True)
    (run.out / "config.json").write_text(cfg.to_json() + "\n")
    cmd = args.command
    if cmd == "gen":
        print(run.gen())
    elif cmd == "train-inr":
        for side in _sides(args.side):
            _, tlog = run.train_inr(side)
            print(f"{side}: best epoch {tlog.best_epoch}, val loss {tlog.val_loss[tlog.best_epoch]:.6g} "
                  f"({tlog.stop_reason})")
    elif cmd == "fit":
        for side in _sides(args.side):
            print(run.fit(side))
    elif cmd == "train-op":
        _, tlog = run.train_op()
        print(f"operator: best epoch {tlog.best_epoch}, val latent mse {tlog.val_loss[tlog.best_epoch]:.6g}")
    elif cmd == "eval":
        for path in run.eval().values():
            print(path)
    elif cmd == "reno":
        report, _ = run.reno(args.resolutions, args.render_pgm or None)
        print(f"eps_in {report.eps_in:.6g}  eps_out {report.eps_out:.6g}  eps_task {report.eps_task:.6g}")
    elif cmd == "render":
        print(run.render(args.latents, args.index, args.resolution, args.model, args.output))
    elif cmd == "ablate-op":
        rows, _ = run.ablate_op()
        for r in rows:
            print(f"{r['operator']:<18} {r['metric']:<5} {r['value']:.4f}")
    elif cmd == "all":
        run.all()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        run_command(args)
    except (DimensionMismatch, ShapeError) as exc:
        code, msg = EXIT_SHAPE, f"dimension mismatch: {exc}"
    except (ConfigError, ContractError) as exc:
        code, msg = EXIT_CONFIG, f"config error: {exc}"
    except FileNotFoundError as exc:
        code, msg = EXIT_MISSING, f"missing file: {exc}"
    except VersionMismatch as exc:
        code, msg = EXIT_VERSION, f"version mismatch: {exc}"
    except CheckpointError as exc:
        code, msg = EXIT_CHECKPOINT, f"bad checkpoint: {exc}"
    except TrainingDiverged as exc:
        code, msg = EXIT_DIVERGED, f"training diverged: {exc}"
    else:
        return 0
    print(f"noir: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
