"""Command-line front end.

Exit status: 0 on success, 2 for invalid input, 3 when the request is
well-formed but infeasible (no tiling fits, exponents cannot exist, ...).
"""

import argparse
import sys

from . import bounds as B
from . import tiler as T
from . import volume as V
from .exact import fmt6
from .hbl import (HblInfeasible, cnn_homomorphisms, derive_constraints, kernel_of, lattice_closure,
                  lifted_homomorphisms, matmul_homomorphisms, minimize_exponents, parse_matrices)
from .model import (LayerFileError, ParallelMachine, SerialMachine, TwoBufferMachine,
                    derive_sizes, load_layer, validate_layer)
from .presets import UnknownPreset, load_preset, preset_names
from .simulator import (DEFAULT_UPDATE_CAP, CacheModel, FootprintTooLarge, SimulationTooLarge, simulate_parallel_footprints,
                        simulate_serial)

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE = 0, 2, 3


class UsageError(ValueError):
    pass


def render_table(headers, rows):
    """Fixed-width ASCII table; first column left-aligned, the rest right-aligned."""
    rows = [[str(c) for c in r] for r in rows]
    widths = [max(len(str(h)), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]

    def line(cells):
        out = [cells[0].ljust(widths[0])]
        out += [c.rjust(w) for c, w in zip(cells[1:], widths[1:])]
        return "  ".join(out).rstrip()

    sep = "  ".join("-" * w for w in widths)
    return "\n".join([line([str(h) for h in headers]), sep] + [line(r) for r in rows]) + "\n"


def positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _layer_args(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--layer", metavar="FILE", help="layer file (key = value lines)")
    g.add_argument("--preset", metavar="NAME", help="shipped preset, one of: " + ", ".join(preset_names()))


def _machine_args(p, two_buffer=False):
    p.add_argument("--m-words", type=positive_int, metavar="M",
                   help="cache words (serial) or memory words per processor (parallel)")
    p.add_argument("--procs", type=positive_int, metavar="P", help="processor count (parallel mode)")
    if two_buffer:
        p.add_argument("--scratchpad", type=positive_int, metavar="WORDS",
                       help="scratchpad words for input and filter (two-buffer mode)")
        p.add_argument("--accumulator", type=positive_int, metavar="ENTRIES",
                       help="accumulator entries for the output (two-buffer mode)")
        p.add_argument("--double-buffer", action=argparse.BooleanOptionalAction, default=True,
                       help="halve both buffers for double buffering (default: on)")
        p.add_argument("--no-tile-image", action="store_true",
                       help="two-buffer mode: keep the whole output image in one tile")


def build_parser():
    parser = argparse.ArgumentParser(prog="cnncomm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bounds", help="serial or parallel communication lower bounds")
    _layer_args(p)
    _machine_args(p)

    p = sub.add_parser("tile", help="communication-optimal tiling")
    _layer_args(p)
    _machine_args(p, two_buffer=True)
    p.add_argument("--out", metavar="FILE", help="also write the tiling as key = value text")

    p = sub.add_parser("volumes", help="modeled traffic of naive, blocked and im2col schedules")
    _layer_args(p)
    _machine_args(p)

    p = sub.add_parser("simulate", help="count traffic of a tiled schedule by brute force")
    _layer_args(p)
    _machine_args(p)
    p.add_argument("--tiling", metavar="FILE", help="tiling file (default: the LP tiling)")
    p.add_argument("--trace", metavar="FILE", help="serial mode: write one line per miss")

    p = sub.add_parser("sweep", help="bound and model traffic over a range of M or P")
    _layer_args(p)
    p.add_argument("--sweep", choices=("m", "p"), required=True, help="sweep cache size or processors")
    p.add_argument("--from", dest="start", type=positive_int, required=True)
    p.add_argument("--to", dest="stop", type=positive_int, required=True)
    p.add_argument("--factor", type=positive_int, default=2)
    p.add_argument("--m-words", type=positive_int, metavar="M",
                   help="memory words per processor (required for --sweep p)")
    p.add_argument("--csv", metavar="PATH", help="write CSV here instead of printing a table")
    p.add_argument("--workers", type=positive_int, default=1, help="points evaluated concurrently")

    p = sub.add_parser("hbl", help="HBL constraints and optimal exponents")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--builtin", choices=("cnn", "lifted", "matmul"), default="cnn")
    g.add_argument("--matrices", metavar="FILE", help="integer matrices, blank-line separated")
    p.add_argument("--stride", type=positive_int, nargs=2, metavar=("SW", "SH"), default=(1, 1),
                   help="strides for --builtin cnn")
    return parser


def _load(args):
    if args.preset:
        layer, prec = load_preset(args.preset)
    else:
        layer, prec = load_layer(args.layer)
    bad = validate_layer(layer)
    if bad:
        raise UsageError("invalid layer: violates " + ", ".join(bad))
    derive_sizes(layer, prec)
    return layer, prec


def _need_m(args):
    if args.m_words is None:
        raise UsageError("--m-words is required")
    return args.m_words


def cmd_bounds(args, out):
    layer, prec = _load(args)
    M = _need_m(args)
    if args.procs:
        r = B.parallel_lower_bound(layer, prec, ParallelMachine(args.procs, M))
        rows = [("md_large", r.md_large), ("md_small", r.md_small), ("mi_cube", r.mi_cube),
                ("mi_small", r.mi_small), ("bound_md", r.bound_md), ("bound_mi", r.bound_mi),
                ("bound", r.bound)]
        out.write(f"parallel bounds, P = {args.procs}, M = {M} words per processor\n")
        out.write(render_table(("term", "words"), [(k, fmt6(v)) for k, v in rows]))
        if r.md_trivial:
            out.write("memory-dependent terms are not positive at this P and M\n")
        return EXIT_OK
    machine = SerialMachine(M)
    r = B.serial_lower_bound(layer, prec, machine)
    rows = [(k, fmt6(v)) for k, v in r.terms().items()] + [("bound", fmt6(r.bound))]
    out.write(f"serial bounds, M = {M} words\n")
    out.write(render_table(("term", "words"), rows))
    out.write(f"dominating term: {r.dominating_term}\n")
    small = "yes" if B.small_filter_dominates(layer, prec, machine) else "no"
    out.write(f"small-filter term leads asymptotically: {small}\n")
    return EXIT_OK


def _tiling_rows(layer, t):
    if isinstance(t, T.SerialTiling):
        ext = T.serial_extents(layer)
    else:
        ext = dict(zip(T.PARALLEL_FIELDS, layer.extents))
    return [(k, v, ext[k]) for k, v in zip(
        T.SERIAL_FIELDS if isinstance(t, T.SerialTiling) else T.PARALLEL_FIELDS, t.as_tuple())]


def cmd_tile(args, out):
    layer, prec = _load(args)
    two_buffer = args.scratchpad is not None or args.accumulator is not None
    if two_buffer:
        d = TwoBufferMachine()
        machine = TwoBufferMachine(args.scratchpad or d.scratchpad_words,
                                   args.accumulator or d.accumulator_entries, args.double_buffer)
        t = T.two_buffer_tiles(layer, prec, machine, no_tile_image=args.no_tile_image)
        out.write(f"two-buffer tiling, usable scratchpad {machine.usable_scratchpad} words, "
                  f"usable accumulator {machine.usable_accumulator} entries\n")
        out.write(render_table(("block", "size", "extent"), _tiling_rows(layer, t)))
        scratch = prec.p_in * t.input_tile() + prec.p_f * t.filter_tile()
        out.write(f"scratchpad use {fmt6(scratch)} words, accumulator use {t.output_tile()} entries\n")
    elif args.procs:
        res = T.parallel_lp_tiles(layer, prec, ParallelMachine(args.procs, _need_m(args)))
        t = res.tiling
        out.write(f"parallel tiling, P = {args.procs}\n")
        out.write(render_table(("block", "size", "extent"), _tiling_rows(layer, t)))
        out.write(f"processors used {T.processor_count(layer, t)}, "
                  f"updates per processor {fmt6(_prod(t.as_tuple()))}\n")
        if res.note:
            out.write(f"note: {res.note}\n")
    else:
        M = _need_m(args)
        res = T.serial_lp_tiles(layer, prec, SerialMachine(M))
        t = res.tiling
        out.write(f"serial tiling, M = {M} words\n")
        out.write(render_table(("block", "size", "extent"), _tiling_rows(layer, t)))
        out.write(f"LP objective (log base M) {fmt6(res.lp.objective)}, "
                  f"tight rows {list(res.lp.tight_constraints)}\n")
        if res.degenerate:
            out.write("note: rounding failed, returned the all-ones tiling\n")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(T.format_tiling(t))
    return EXIT_OK


def _prod(xs):
    p = 1
    for x in xs:
        p *= x
    return p


def _traffic_rows(reports):
    rows = []
    for name, r in reports:
        rows.append((name, fmt6(r.words_in), fmt6(r.words_f), fmt6(r.words_out), fmt6(r.total),
                     "" if r.ratio is None else fmt6(r.ratio)))
    return rows


def cmd_volumes(args, out):
    layer, prec = _load(args)
    M = _need_m(args)
    if args.procs:
        machine = ParallelMachine(args.procs, M)
        res = T.parallel_lp_tiles(layer, prec, machine)
        reports = [("naive", V.naive_volume_parallel(layer, prec, machine)),
                   ("blocking", V.blocking_volume_parallel(layer, prec, res.tiling, machine)),
                   ("im2col", V.im2col_volume_parallel(layer, prec, machine))]
        head = f"per-processor traffic, P = {args.procs}, M = {M} words per processor\n"
    else:
        machine = SerialMachine(M)
        res = T.serial_lp_tiles(layer, prec, machine)
        reports = [("naive", V.naive_volume_serial(layer, prec, machine)),
                   ("blocking", V.blocking_volume_serial(layer, prec, res.tiling, machine)),
                   ("im2col", V.im2col_volume_serial(layer, prec, machine))]
        head = f"serial traffic, M = {M} words\n"
    out.write(head)
    out.write(render_table(("schedule", "input", "filter", "output", "total", "ratio"),
                           _traffic_rows(reports)))
    out.write(f"lower bound {fmt6(reports[0][1].bound)} words\n")
    return EXIT_OK


def _read_tiling(path):
    with open(path, encoding="utf-8") as fh:
        return T.parse_tiling(fh.read())


def cmd_simulate(args, out):
    layer, prec = _load(args)
    M = _need_m(args)
    if args.procs:
        machine = ParallelMachine(args.procs, M)
        t = _read_tiling(args.tiling) if args.tiling else T.parallel_lp_tiles(layer, prec, machine).tiling
        if not isinstance(t, T.ParallelTiling):
            raise UsageError("parallel simulation needs a parallel tiling (a_* keys)")
        bad = T.validate_parallel_tiling(layer, machine, t)
        if bad:
            raise UsageError("invalid tiling: " + "; ".join(bad))
        r = simulate_parallel_footprints(layer, prec, t, machine)
        b = B.parallel_lower_bound(layer, prec, machine)
        rows = [("max received", fmt6(r.max_received)), ("min received", fmt6(r.min_received)),
                ("mean received", fmt6(r.mean_received)), ("processors used", r.processors_used),
                ("max updates", r.max_updates), ("bound_mi", fmt6(b.bound_mi))]
        out.write(f"parallel footprints, P = {args.procs}, M = {M} words per processor\n")
        out.write(render_table(("quantity", "value"), rows))
        return EXIT_OK
    G = derive_sizes(layer, prec).g_total
    if G > DEFAULT_UPDATE_CAP:
        raise SimulationTooLarge(f"G = {G} exceeds the simulator cap of {DEFAULT_UPDATE_CAP}")
    machine = SerialMachine(M)
    t = _read_tiling(args.tiling) if args.tiling else T.serial_lp_tiles(layer, prec, machine).tiling
    if not isinstance(t, T.SerialTiling):
        raise UsageError("serial simulation needs a serial tiling (b_* keys)")
    bad = T.validate_serial_tiling(layer, prec, machine, t)
    if bad:
        raise UsageError("invalid tiling: " + "; ".join(bad))
    trace = open(args.trace, "w", encoding="utf-8") if args.trace else None
    try:
        r = simulate_serial(layer, prec, t, CacheModel(M), trace=trace)
    finally:
        if trace is not None:
            trace.close()
    model = V.blocking_volume_serial(layer, prec, t, machine)
    rows = [("loads", fmt6(r.loads_words)), ("stores", fmt6(r.stores_words)),
            ("total", fmt6(r.total_words)), ("peak resident", fmt6(r.peak_resident_words)),
            ("updates", r.updates_executed), ("model total", fmt6(model.total)),
            ("lower bound", fmt6(model.bound))]
    out.write(f"LRU simulation, M = {M} words\n")
    out.write(render_table(("quantity", "words"), rows))
    return EXIT_OK


def cmd_sweep(args, out):
    layer, prec = _load(args)
    if args.factor < 2:
        raise UsageError("--factor must be > 1")
    if args.stop < args.start:
        raise UsageError("empty range: --to is below --from")
    if args.sweep == "p" and args.m_words is None:
        raise UsageError("--sweep p needs --m-words (memory per processor)")
    values = V.geometric_range(args.start, args.stop, args.factor)
    rows = V.sweep(layer, prec, values, args.sweep, args.m_words, args.workers)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(V.rows_to_csv(rows))
        out.write(f"wrote {len(rows)} rows to {args.csv}\n")
    else:
        out.write(render_table(V.CSV_HEADER, [r.cells() for r in rows]))
    return EXIT_OK


def cmd_hbl(args, out):
    if args.matrices:
        with open(args.matrices, encoding="utf-8") as fh:
            homs = parse_matrices(fh.read())
    elif args.builtin == "cnn":
        homs = cnn_homomorphisms(*args.stride)
    elif args.builtin == "lifted":
        homs = lifted_homomorphisms()
    else:
        homs = matmul_homomorphisms()
    names = [f"s_{h.label}" for h in homs]
    lattice = lattice_closure([kernel_of(h) for h in homs])
    cons = derive_constraints(lattice, homs)
    ev = minimize_exponents(cons, len(homs))
    out.write(f"lattice members: {len(lattice)}{' (capped)' if lattice.capped else ''}\n")
    out.write("constraints:\n")
    for c in cons:
        out.write(f"  {c.format(names)}\n")
    out.write(render_table(("exponent", "value"), [(n, str(v)) for n, v in zip(names, ev.s)]))
    out.write(f"total {ev.total}\n")
    return EXIT_OK


COMMANDS = {"bounds": cmd_bounds, "tile": cmd_tile, "volumes": cmd_volumes,
            "simulate": cmd_simulate, "sweep": cmd_sweep, "hbl": cmd_hbl}


def main(argv=None, out=None):
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args, out)
    except LayerFileError as e:
        where = f"{args.layer}: " if getattr(args, "layer", None) else ""
        print(f"error: {where}{e}", file=sys.stderr)
        return EXIT_INVALID
    except (T.TilingInfeasible, HblInfeasible, FootprintTooLarge) as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except UnknownPreset as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (UsageError, SimulationTooLarge, V.InvalidTiling, OverflowError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
