"""Command-line driver: ``gcreg register | eval | bench | phantom``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .io import (FormatError, file_digest, read_field, read_volume, run_mode,
                 write_bench_csv, write_field, write_manifest, write_ppm,
                 write_volume)
from .metrics import DEFAULT_TILE, checkerboard, vme
from .optimizer import RegistrationConfig, register
from .phantom import KINDS, make_phantom
from .volume import warp

log = logging.getLogger("gcreg")


class CliError(Exception):
    pass


def _dims(text: str) -> tuple[int, int, int]:
    try:
        parts = [int(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad dims {text!r}") from None
    if len(parts) == 1:
        parts *= 3
    if len(parts) != 3 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"dims need 1 or 3 positive integers, got {text!r}")
    return tuple(parts)


def _sizes(text: str) -> list[int]:
    try:
        sizes = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad block-size list {text!r}") from None
    if not sizes:
        raise argparse.ArgumentTypeError("block-size list is empty")
    if min(sizes) < 1:
        raise argparse.ArgumentTypeError("block sizes must be >= 1")
    return sizes


def _add_config_flags(p: argparse.ArgumentParser):
    d = RegistrationConfig()
    p.add_argument("--epsilon", type=float, default=d.epsilon, help="step length in voxels")
    p.add_argument("--levels", type=int, default=d.levels, help="pyramid levels")
    p.add_argument("--alpha", type=float, default=d.alpha, help="regularization weight")
    p.add_argument("--tolerance", type=float, default=d.tolerance,
                   help="minimum energy decrease for accepting a move")
    p.add_argument("--threads", type=int, default=d.worker_count, help="worker threads")
    p.add_argument("--no-early-termination", action="store_true",
                   help="re-evaluate every block on every sweep")
    p.add_argument("--max-sweeps", type=int, default=d.max_sweeps)


def _config(args, block_size: int) -> RegistrationConfig:
    try:
        return RegistrationConfig(
            epsilon=args.epsilon, levels=args.levels, alpha=args.alpha,
            tolerance=args.tolerance, block_size=block_size,
            worker_count=args.threads, early_termination=not args.no_early_termination,
            max_sweeps=args.max_sweeps)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gcreg", description="Deformable volume registration with block-restricted "
                                  "graph-cut expansion moves.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-level progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="register a source volume onto a target")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out-field", required=True)
    p.add_argument("--out-warped")
    p.add_argument("--block-size", type=int, default=RegistrationConfig().block_size)
    p.add_argument("--direct", action="store_true",
                   help="expansion moves over the whole volume instead of blocks")
    p.add_argument("--init-field", help="starting field on the grid of some pyramid level")
    p.add_argument("--manifest")
    p.add_argument("--out-reverse-field",
                   help="also register target onto source and report the VME")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="VME of a field pair or a checkerboard image")
    p.add_argument("--forward-field")
    p.add_argument("--reverse-field")
    p.add_argument("--vme", action="store_true")
    p.add_argument("--volume-a")
    p.add_argument("--volume-b")
    p.add_argument("--checkerboard", metavar="PPM", help="output image path")
    p.add_argument("--tile", type=int, default=DEFAULT_TILE)
    p.add_argument("--axis", choices="xyz", default="z")
    p.add_argument("--slice", type=int)
    p.add_argument("--channel", type=int, default=0)

    p = sub.add_parser("bench", help="block-size sweep on a synthetic phantom")
    p.add_argument("--block-sizes", type=_sizes, default=[1, 8, 16, 32])
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--phantom", choices=KINDS, default="two-channel-blob")
    p.add_argument("--dims", type=_dims, default=(32, 32, 32))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--direct", action="store_true", help="add a direct-expansion row")
    p.add_argument("--no-vme", action="store_true", help="skip the reverse registrations")
    p.add_argument("--out", default="-", help="CSV path (default stdout)")
    _add_config_flags(p)

    p = sub.add_parser("phantom", help="write a synthetic pair and its ground truth")
    p.add_argument("--kind", choices=KINDS, default="two-channel-blob")
    p.add_argument("--dims", type=_dims, default=(32, 32, 32))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    return parser


def _cmd_register(args) -> int:
    S = read_volume(args.source)
    T = read_volume(args.target)
    cfg = _config(args, args.block_size)
    initial = read_field(args.init_field) if args.init_field else None
    u, rep = register(T, S, cfg, initial=initial, direct=args.direct)
    write_field(args.out_field, u)
    if args.out_warped:
        warped = warp(S, u)
        write_volume(args.out_warped, warped.__class__(warped.meta,
                                                       warped.data.astype(S.data.dtype)))
    manifest = {
        "software": {"name": "gcreg", "version": __version__},
        "mode": run_mode(cfg.block_size, args.direct),
        "config": cfg.to_dict(),
        "inputs": {"source": {"path": args.source, "sha256": file_digest(args.source)},
                   "target": {"path": args.target, "sha256": file_digest(args.target)}},
        "levels": [r.to_dict() for r in rep.levels],
        "final_energy": rep.final_energy,
        "wall_time": {"forward": rep.wall_time},
        "vme": None,
    }
    if initial is not None:
        manifest["inputs"]["init_field"] = {"path": args.init_field,
                                            "sha256": file_digest(args.init_field)}
    if args.out_reverse_field:
        if initial is not None:
            raise CliError("--out-reverse-field cannot be combined with --init-field")
        ur, rrep = register(S, T, cfg, direct=args.direct)
        write_field(args.out_reverse_field, ur)
        manifest["reverse"] = {"levels": [r.to_dict() for r in rrep.levels],
                               "final_energy": rrep.final_energy}
        manifest["wall_time"]["reverse"] = rrep.wall_time
        manifest["vme"] = vme(u, ur)
    if args.manifest:
        write_manifest(args.manifest, manifest)
    print(f"final energy {rep.final_energy:.10g}"
          + ("" if manifest["vme"] is None else f"  vme {manifest['vme']:.6g}"))
    return 0


def _cmd_eval(args) -> int:
    if args.vme or args.forward_field or args.reverse_field:
        if not (args.forward_field and args.reverse_field):
            raise CliError("--vme needs --forward-field and --reverse-field")
        forward, reverse = read_field(args.forward_field), read_field(args.reverse_field)
        if not forward.meta.same_grid(reverse.meta):
            raise CliError("forward and reverse fields are on different grids")
        print(repr(vme(forward, reverse)))
        return 0
    if args.checkerboard:
        if not (args.volume_a and args.volume_b):
            raise CliError("--checkerboard needs --volume-a and --volume-b")
        A, B = read_volume(args.volume_a), read_volume(args.volume_b)
        if not A.meta.same_grid(B.meta):
            raise CliError("volumes are on different grids")
        rgb = checkerboard(A, B, tile=args.tile, slice_axis="xyz".index(args.axis),
                           slice_index=args.slice, channel=args.channel)
        write_ppm(args.checkerboard, rgb)
        return 0
    raise CliError("nothing to do: pass --vme or --checkerboard")


def _cmd_bench(args) -> int:
    if args.repeats < 1:
        raise CliError("--repeats must be >= 1")
    S, T, _ = make_phantom(args.phantom, args.dims, args.seed)
    runs = [(n, False) for n in args.block_sizes]
    if args.direct:
        runs.append((args.block_sizes[0], True))
    rows = []
    for n, direct in runs:
        cfg = _config(args, n)
        for _ in range(args.repeats):
            start = time.perf_counter()
            u, rep = register(T, S, cfg, direct=direct)
            seconds = time.perf_counter() - start
            v = None
            if not args.no_vme:
                ur, _ = register(S, T, cfg, direct=direct)
                v = vme(u, ur)
            rows.append(("direct" if direct else n, seconds, rep.final_energy, v))
            log.info("block size %s: %.2fs, energy %.6g", rows[-1][0], seconds,
                     rep.final_energy)
    write_bench_csv(args.out, rows)
    return 0


def _cmd_phantom(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    S, T, truth = make_phantom(args.kind, args.dims, args.seed)
    write_volume(out / "source", S)
    write_volume(out / "target", T)
    write_field(out / "truth", truth)
    print(out)
    return 0


_COMMANDS = {"register": _cmd_register, "eval": _cmd_eval, "bench": _cmd_bench,
             "phantom": _cmd_phantom}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (CliError, FormatError, OSError, ValueError, IndexError) as exc:
        print(f"gcreg {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
