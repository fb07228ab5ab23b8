"""Command-line entry point: ``topothin thin|bench|verify|classify|gradient``."""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import pgm
from .bench import DEFAULT_REPEATS, DEFAULT_THREADS, run_bench
from .image import GrayImage, Point
from .parallel import BACKENDS, EngineConfig, run_parallel_stats
from .skeleton import count_targets, is_stable, lambda_skeleton_stats
from .synthetic import SyntheticSpec, gen_synthetic, gradient3x3
from .topology import classify

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Usage(Exception):
    pass


def _nonneg(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected an integer >= 0, got {text}")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return v


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad thread list {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"bad thread list {text!r}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="topothin", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    th = sub.add_parser("thin", help="thin a PGM image")
    th.add_argument("--input", required=True)
    th.add_argument("--output", required=True)
    th.add_argument("--lambda", dest="lam", type=_nonneg, default=0)
    th.add_argument("--engine", choices=("seq", "guarded", "spin", "spin_wait"), default="seq")
    th.add_argument("--threads", type=_positive, default=1)
    th.add_argument("--queue-capacity", type=_positive, default=4096)
    th.add_argument("--backend", choices=BACKENDS, default=BACKENDS[0])

    be = sub.add_parser("bench", help="time every engine over a list of thread counts")
    src = be.add_mutually_exclusive_group(required=True)
    src.add_argument("--input")
    src.add_argument("--synthetic", help="kind:WxH[:key=value,...]")
    be.add_argument("--lambda", dest="lam", type=_nonneg, default=10)
    be.add_argument("--threads-list", type=_int_list, default=list(DEFAULT_THREADS))
    be.add_argument("--repeats", type=_positive, default=DEFAULT_REPEATS)
    be.add_argument("--engines", default="seq,guarded,spin_wait")
    be.add_argument("--backend", choices=BACKENDS, default=BACKENDS[0])
    be.add_argument("--csv")

    ve = sub.add_parser("verify", help="report whether an image is stable")
    ve.add_argument("--input", required=True)
    ve.add_argument("--lambda", dest="lam", type=_nonneg, default=0)

    cl = sub.add_parser("classify", help="print the characterization of one pixel")
    cl.add_argument("--input", required=True)
    cl.add_argument("--lambda", dest="lam", type=_nonneg, default=0)
    cl.add_argument("--x", type=int, required=True)
    cl.add_argument("--y", type=int, required=True)

    gr = sub.add_parser("gradient", help="3x3 morphological gradient")
    gr.add_argument("--input", required=True)
    gr.add_argument("--output", required=True)
    return ap


def _thin(args) -> int:
    F, variant = pgm.load(args.input)
    if args.engine == "seq":
        t0 = time.perf_counter()
        out, lowerings = lambda_skeleton_stats(F, args.lam)
        stats = {"lowerings": lowerings, "wall_ms": round((time.perf_counter() - t0) * 1e3, 3)}
    else:
        cfg = EngineConfig(args.threads, args.lam, args.engine, args.queue_capacity,
                           backend=args.backend)
        out, st = run_parallel_stats(F, cfg)
        stats = st.as_dict()
        ref, _ = lambda_skeleton_stats(F, args.lam)
        stats["hamming_vs_seq"] = out.hamming(ref)
    pgm.save(args.output, out, variant)
    stats["stable"] = is_stable(out, args.lam)
    stats["engine"] = args.engine
    for k, v in stats.items():
        print(f"{k}={v}")
    return EXIT_OK


def _bench(args) -> int:
    if args.input:
        F, _ = pgm.load(args.input)
    else:
        try:
            F = gen_synthetic(SyntheticSpec.parse(args.synthetic))
        except ValueError as exc:
            raise _Usage(str(exc)) from None
    engines = [e.strip() for e in args.engines.split(",") if e.strip()]
    for e in engines:
        if e not in ("seq", "guarded", "spin", "spin_wait"):
            raise _Usage(f"unknown engine {e!r}")
    report = run_bench(F, args.lam, args.threads_list, args.repeats, engines,
                       progress=lambda msg: print(msg, file=sys.stderr), backend=args.backend)
    text = report.to_csv()
    if args.csv:
        Path(args.csv).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    print()
    print(report.summary_text())
    return EXIT_OK


def _verify(args) -> int:
    F, _ = pgm.load(args.input)
    n = count_targets(F, args.lam)
    print(f"stable={'yes' if n == 0 else 'no'}")
    print(f"targets={n}")
    return EXIT_OK


def _classify(args) -> int:
    F, _ = pgm.load(args.input)
    p = Point(args.x, args.y)
    if not F.is_interior(p):
        raise _Usage(f"({args.x}, {args.y}) is not an interior pixel of a {F.width}x{F.height} image")
    from .topology import is_lambda_deletable, is_lambda_end
    pc = classify(F, p)
    rec = {"x": p.x, "y": p.y, "value": F[p], **asdict(pc),
           "lambda": args.lam,
           "lambda_deletable": is_lambda_deletable(F, p, args.lam),
           "lambda_end": is_lambda_end(F, p, args.lam)}
    print(json.dumps(rec))
    return EXIT_OK


def _gradient(args) -> int:
    F, variant = pgm.load(args.input)
    pgm.save(args.output, gradient3x3(F), pgm.PgmVariant(variant.format, 255))
    return EXIT_OK


COMMANDS = {"thin": _thin, "bench": _bench, "verify": _verify, "classify": _classify,
            "gradient": _gradient}


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except _Usage as exc:
        ap.print_usage(sys.stderr)
        print(f"topothin: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"topothin: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
