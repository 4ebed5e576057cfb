"""``vrfilter`` command line.

Exit codes: 0 success, 1 usage error, 2 I/O or file-format error,
3 validation error.  Every command that writes ``--out`` also writes
``<out>.meta`` with the fully resolved options.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import filterbank as fb
from . import harness
from . import raster_io as rio
from . import vrrmaps as vm
from .filterbank import BankFormatError, BankMismatchError
from .raster_io import RasterFormatError
from .svfilter import DEFAULT_MAX_ITER, DEFAULT_Q_MIN, apply_fixed, apply_recursive

log = logging.getLogger("vrfilter")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VALIDATION = 0, 1, 2, 3

# denoise caps q lower than `vrr edge` so every pixel finishes within max_iter
DENOISE_Q_CAP = 100.0


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _write_text(path, text: str) -> None:
    rio.atomic_write_bytes(path, text.encode("utf-8"))


def _write_meta(out, args, **extra) -> None:
    items = {"version": f"vrfilter-{__version__}", "command": args.command_name}
    for k, v in sorted(vars(args).items()):
        if k in ("func", "command_name"):
            continue
        items[k] = v
    items.update(extra)
    _write_text(f"{out}.meta", "".join(f"{k}={v}\n" for k, v in items.items()))


def _read_input(path) -> tuple[np.ndarray, str | None]:
    """Raster plus its FRAW value kind (``None`` for PGM)."""
    data = Path(path).read_bytes()
    if data[:4] == rio.FRAW_MAGIC.encode():
        return rio.parse_fraw(data)
    return rio.read_raster(path), None


def _write_output(raster, path, kind: str | None = None) -> None:
    if str(path).lower().endswith(".pgm"):
        rio.write_pgm(raster, path)
    else:
        rio.write_fraw(raster, path, kind or "f64")


# -- commands --------------------------------------------------------------------


def cmd_bank_build(args) -> int:
    if args.mode == "fixed":
        if args.closed_form:
            raise ValueError("--closed-form applies to recursive banks only")
        obj = fb.build_fixed_bank(args.L, args.bins)
    else:
        obj = fb.build_recursive_banks(args.L, args.bins, args.closed_form, args.n_reuse)
    rio.atomic_write_bytes(args.out, fb.dumps_bank(obj))
    _write_meta(args.out, args)
    return EXIT_OK


def cmd_bank_dump(args) -> int:
    text = fb.dump_text(fb.load_bank(args.inp))
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_tables(args) -> int:
    rows = harness.emit_tables(args.L, args.iters)
    text = harness.format_csv(rows, harness.run_metadata(L=",".join(map(str, args.L)), iters=args.iters))
    if args.out:
        _write_text(args.out, text)
        _write_meta(args.out, args)
    else:
        sys.stdout.write(text)
    if args.plot:
        from .plotting import plot_tables

        plot_tables(rows, args.plot)
    return EXIT_OK


def _load_banks(args, mode: str):
    if args.bank:
        return fb.load_bank(args.bank, expect_L=args.L, expect_kind=mode)
    if mode == "fixed":
        return fb.build_fixed_bank(args.L, args.bins)
    return fb.build_recursive_banks(args.L, args.bins, use_closed_form=args.L == 1)


def cmd_filter(args) -> int:
    f, kind = _read_input(args.inp)
    q = rio.read_fraw(args.q)
    if q.shape != f.shape:
        raise ValueError(f"VRR map shape {q.shape} does not match input shape {f.shape}")
    banks = _load_banks(args, args.mode)
    report = None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if args.mode == "fixed":
            out = apply_fixed(f, q, banks)
        else:
            out, report = apply_recursive(f, q, banks, args.q_min, args.max_iter)
    for w in caught:
        log.warning("%s", w.message)
    if args.log_after:
        out = harness.log_counts(out)
    _write_output(out, args.out, kind)
    extra = {}
    if report is not None:
        extra = {
            "iterations_used": report.iterations_used,
            "residual_q_max": report.residual_q_max,
            "max_iter_exhausted": report.max_iter_exhausted,
            "clamped_pixels": report.clamped_pixels,
        }
    _write_meta(args.out, args, **extra)
    if args.report:
        rows = [] if report is None else [
            {"iteration": i, "pixels_active": c}
            for i, c in enumerate(report.pixels_active_per_iteration)
        ]
        meta = harness.run_metadata(mode=args.mode, L=args.L, **extra)
        _write_text(args.report, harness.format_csv(rows, meta, ["iteration", "pixels_active"]))
    return EXIT_OK


def cmd_vrr(args) -> int:
    if args.vrr_kind == "variance":
        q = vm.vrr_from_variance(rio.read_fraw(args.inp), args.target)
    elif args.vrr_kind == "counts":
        q = vm.vrr_from_counts(rio.read_fraw(args.inp), args.target, args.floor)
    else:
        cfg = vm.EdgeVrrConfig(
            v0=args.v0,
            mode="gradient" if args.method == "grad" else "perona_malik",
            q_cap=args.q_cap,
            strength=args.strength,
            epsilon=args.epsilon,
            presmooth=args.presmooth,
        )
        q = vm.vrr_from_edges(rio.read_raster(args.inp), cfg)
    rio.write_fraw(q.q, args.out)
    _write_meta(args.out, args, clamped_pixels=q.n_clamped)
    return EXIT_OK


def _emit_experiment(args, rows, columns, cfg, plot_fn) -> None:
    meta = harness.run_metadata(seed=args.seed, config=cfg)
    text = harness.format_csv(rows, meta, columns)
    if args.out:
        _write_text(args.out, text)
        _write_meta(args.out, args)
    else:
        sys.stdout.write(text)
    if args.plot:
        plot_fn(rows, args.plot, args.filter)


def cmd_test1(args) -> int:
    cfg = harness.Test1Config(
        filter_spec=args.filter,
        n_samples=args.samples,
        repeats=args.repeats,
        seed=args.seed,
        q_source=args.q_source,
        bins=args.bins,
        n_jobs=args.jobs,
    )
    from .plotting import plot_test1

    _emit_experiment(args, harness.run_test1(cfg), harness.TEST1_COLUMNS, cfg, plot_test1)
    return EXIT_OK


def cmd_test2(args) -> int:
    cfg = harness.Test2Config(
        filter_spec=args.filter,
        n_samples=args.samples,
        repeats=args.repeats,
        seed=args.seed,
        q_source=args.q_source,
        bins=args.bins,
        n_jobs=args.jobs,
    )
    from .plotting import plot_test2

    _emit_experiment(args, harness.run_test2(cfg), harness.TEST2_COLUMNS, cfg, plot_test2)
    return EXIT_OK


def cmd_denoise(args) -> int:
    f, kind = _read_input(args.inp)
    cfg = vm.EdgeVrrConfig(
        v0=args.v0,
        mode="gradient" if args.method == "grad" else "perona_malik",
        q_cap=args.q_cap,
        strength=args.strength,
        presmooth=not args.no_presmooth,
    )
    banks = fb.build_recursive_banks(args.L, use_closed_form=args.L == 1)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out, q, report = vm.denoise(f, cfg, args.blend, banks, args.q_min, args.max_iter)
    for w in caught:
        log.warning("%s", w.message)
    _write_output(out, args.out, kind)
    _write_meta(args.out, args, iterations_used=report.iterations_used,
                max_iter_exhausted=report.max_iter_exhausted)
    if args.q_out:
        rio.write_fraw(q.q, args.q_out)
    if args.plot:
        from .plotting import plot_rasters

        plot_rasters({"input": f, "VRR": np.log(q.q), "output": out}, args.plot)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def _add_filter_opts(p, L_default=1):
    p.add_argument("--L", type=int, default=L_default, help="kernel half-width (K = 2L+1)")
    p.add_argument("--q-min", type=float, default=DEFAULT_Q_MIN)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vrfilter", description="Space-variant variance-reduction filtering.")
    p.add_argument("--version", action="version", version=f"vrfilter {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    bank = sub.add_parser("bank", help="build or inspect filter bank files")
    bsub = bank.add_subparsers(dest="bank_command", required=True, parser_class=_Parser)
    b = bsub.add_parser("build")
    b.add_argument("--L", type=int, default=1)
    b.add_argument("--mode", choices=["fixed", "recursive"], default="recursive")
    b.add_argument("--bins", type=int, default=fb.DEFAULT_BINS)
    b.add_argument("--closed-form", action="store_true")
    b.add_argument("--n-reuse", type=int, default=fb.DEFAULT_N_REUSE)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bank_build, command_name="bank build")
    d = bsub.add_parser("dump")
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--out")
    d.set_defaults(func=cmd_bank_dump, command_name="bank dump")

    t = sub.add_parser("tables", help="maximum cumulative and incremental VRP per pass")
    t.add_argument("--L", type=_int_list, default=[1, 2, 3])
    t.add_argument("--iters", type=int, default=8)
    t.add_argument("--out")
    t.add_argument("--plot", help="also render a PNG figure here")
    t.set_defaults(func=cmd_tables, command_name="tables")

    f = sub.add_parser("filter", help="apply a space-variant filter")
    f.add_argument("--in", dest="inp", required=True)
    f.add_argument("--q", required=True, help="VRR map (FRAW)")
    f.add_argument("--mode", choices=["fixed", "recursive"], default="recursive")
    _add_filter_opts(f)
    f.add_argument("--bins", type=int, default=fb.DEFAULT_BINS)
    f.add_argument("--bank", help="prebuilt bank file")
    f.add_argument("--log-after", action="store_true", help="take the log of the filtered counts")
    f.add_argument("--out", required=True)
    f.add_argument("--report", help="per-pass CSV report")
    f.set_defaults(func=cmd_filter, command_name="filter")

    v = sub.add_parser("vrr", help="build VRR maps")
    vsub = v.add_subparsers(dest="vrr_kind", required=True, parser_class=_Parser)
    vv = vsub.add_parser("variance")
    vv.add_argument("--in", dest="inp", required=True)
    vv.add_argument("--target", type=float, required=True)
    vv.add_argument("--out", required=True)
    vc = vsub.add_parser("counts")
    vc.add_argument("--in", dest="inp", required=True)
    vc.add_argument("--target", type=float, required=True)
    vc.add_argument("--floor", type=float)
    vc.add_argument("--out", required=True)
    ve = vsub.add_parser("edge")
    ve.add_argument("--in", dest="inp", required=True)
    ve.add_argument("--v0", type=float, required=True)
    ve.add_argument("--method", choices=["grad", "pm"], default="grad")
    ve.add_argument("--strength", type=float)
    ve.add_argument("--q-cap", type=float, default=vm.DEFAULT_Q_CAP)
    ve.add_argument("--epsilon", type=float, default=vm.DEFAULT_EPSILON)
    ve.add_argument("--presmooth", action="store_true")
    ve.add_argument("--out", required=True)
    for sp in (vv, vc, ve):
        sp.set_defaults(func=cmd_vrr, command_name="vrr")

    for name, func, default_filter in (("test1", cmd_test1, "recursive:5"), ("test2", cmd_test2, "recursive:3")):
        e = sub.add_parser(name, help=f"run synthetic {name}")
        e.add_argument("--filter", default=default_filter, help="e.g. fixed:7 or recursive:3")
        e.add_argument("--samples", type=int, default=200 if name == "test1" else 100)
        e.add_argument("--repeats", type=int, default=20)
        e.add_argument("--seed", type=int, default=0)
        e.add_argument("--q-source", default="measured" if name == "test1" else "expected")
        e.add_argument("--bins", type=int, default=fb.DEFAULT_BINS)
        e.add_argument("--jobs", type=int, default=1)
        e.add_argument("--out")
        e.add_argument("--plot", help="also render a PNG figure here")
        e.set_defaults(func=func, command_name=name)

    dn = sub.add_parser("denoise", help="edge-preserving recursive denoising")
    dn.add_argument("--in", dest="inp", required=True)
    dn.add_argument("--v0", type=float, required=True, help="input noise variance")
    dn.add_argument("--method", choices=["grad", "pm"], default="grad")
    dn.add_argument("--blend", type=float, default=0.0, help="weight of the original image")
    dn.add_argument("--strength", type=float)
    dn.add_argument("--q-cap", type=float, default=DENOISE_Q_CAP)
    dn.add_argument("--no-presmooth", action="store_true", help="gradient of the raw image")
    _add_filter_opts(dn)
    dn.add_argument("--out", required=True)
    dn.add_argument("--q-out", help="also write the VRR map (FRAW)")
    dn.add_argument("--plot", help="also render a PNG comparison here")
    dn.set_defaults(func=cmd_denoise, command_name="denoise")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, RasterFormatError, BankFormatError) as exc:
        print(f"vrfilter: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, BankMismatchError) as exc:
        print(f"vrfilter: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
