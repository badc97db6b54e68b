"""Command-line entry point.

Exit codes: 0 success, 1 a synthesis step failed, 2 input error,
3 external solver handshake pending.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .dynamics import ParseError
from .driver import HandshakePending, load_gains, propagate, synthesize, verify
from .polynomial import exponent_basis
from .scenario import ScenarioError, bundled, load_scenario
from .sdp import SolverOptions

EXIT_OK, EXIT_STEP_FAILED, EXIT_INPUT, EXIT_PENDING = 0, 1, 2, 3


class InputError(Exception):
    pass


def _scenario(ref: str):
    path = Path(ref)
    if not path.exists():
        alt = bundled(ref)
        if not alt.exists():
            raise InputError(f"no scenario file {ref!r} (and no bundled scenario of that name)")
        path = alt
    try:
        return load_scenario(path)
    except ScenarioError as exc:
        lines = "\n".join(f"  {p}" for p in exc.problems)
        raise InputError(f"{path}: invalid scenario\n{lines}") from exc


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def cmd_synthesize(args) -> int:
    scn = _scenario(args.scenario)
    opts = SolverOptions(gap_tol=args.gap_tol, max_iter=args.max_iter)
    ext = None
    if args.solver == "external":
        ext = Path(args.external_dir or Path(args.out).with_suffix("").as_posix() + "_sdpa")
    try:
        sched = synthesize(scn, order=args.order, max_order=args.max_order, opts=opts, external_dir=ext)
    except HandshakePending as exc:
        print(f"awaiting external solver: {exc}", file=sys.stderr)
        return EXIT_PENDING
    gains_out = args.gains_out or str(Path(args.out).with_name(Path(args.out).stem + "_gains.json"))
    sched.write(args.out, gains_out, timing=args.timing)
    for rec in sched.steps:
        r = rec.result
        gains = " ".join(f"{g}={v:.6g}" for g, v in r.gains.items())
        print(f"k={rec.k} d={r.order} bound={r.bound:.6f} {r.status} {gains}")
    print(f"report: {args.out}\ngains: {gains_out}")
    if not sched.complete:
        print(f"synthesis stopped: {sched.failure}", file=sys.stderr)
        return EXIT_STEP_FAILED
    return EXIT_OK


def cmd_verify(args) -> int:
    scn = _scenario(args.scenario)
    try:
        gains = load_gains(args.gains)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"cannot read gains from {args.gains}: {exc}") from exc
    if len(gains) < scn.horizon:
        raise InputError(f"gains cover {len(gains)} steps, scenario horizon is {scn.horizon}")
    batch = verify(scn, gains, args.rollouts, args.seed, surrogate=args.surrogate)
    for row in batch.summary()["per_step"]:
        print(f"k={row['k']} rate={row['rate']:.5f} se={row['se']:.5f}")
    print(f"joint containment {batch.joint_rate:.5f} (se {batch.joint_se:.5f}, N={batch.n}, seed={batch.seed})")
    if args.summary:
        batch.write_summary(args.summary)
    if args.csv:
        batch.write_csv(args.csv)
    return EXIT_OK


def cmd_moments(args) -> int:
    scn = _scenario(args.scenario)
    if not 0 <= args.step <= scn.horizon:
        raise InputError(f"--step {args.step} outside 0..{scn.horizon}")
    gains = []
    if args.step > 0:
        if not args.gains:
            raise InputError("--gains is required for steps after 0")
        try:
            gains = load_gains(args.gains)
        except (OSError, ValueError, KeyError) as exc:
            raise InputError(f"cannot read gains from {args.gains}: {exc}") from exc
        if len(gains) < args.step:
            raise InputError(f"gains cover {len(gains)} steps, step {args.step} requested")
    try:
        sm = propagate(scn, gains, args.step, args.upto)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    names = sm.seq.vars
    rows = []
    for a in exponent_basis(len(names), args.upto):
        label = "*".join(f"{v}^{e}" if e > 1 else v for v, e in zip(names, a) if e) or "1"
        rows.append({"monomial": label, "exponents": list(a), "value": float(sm.seq[a])})
    if args.json:
        print(json.dumps({"format_version": 1, "k": args.step, "strategy": sm.tag, "moments": rows}, indent=2))
    else:
        print(f"# moments of x({args.step}), {sm.tag}")
        for r in rows:
            print(f"E[{r['monomial']}]\t{r['value']!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chancetube", description="Chance-constrained tube-following feedback synthesis.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-step progress")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synthesize", help="compute a gain schedule")
    s.add_argument("scenario", help="scenario file, or the name of a bundled scenario (ex1, ex2)")
    s.add_argument("--order", type=_positive, help="relaxation order d")
    s.add_argument("--max-order", type=_positive, help="highest order tried when extraction is forced")
    s.add_argument("--solver", choices=("embedded", "external"), default="embedded")
    s.add_argument("--external-dir", help="directory for SDPA files in external mode")
    s.add_argument("--out", default="report.json", help="run report path")
    s.add_argument("--gains-out", help="gains file path (default: <out stem>_gains.json)")
    s.add_argument("--timing", action="store_true", help="include wall times in the report")
    s.add_argument("--gap-tol", type=float, default=1e-7)
    s.add_argument("--max-iter", type=_positive, default=200)
    s.set_defaults(func=cmd_synthesize)

    v = sub.add_parser("verify", help="Monte Carlo check of a gain schedule")
    v.add_argument("scenario")
    v.add_argument("gains", help="gains JSON")
    v.add_argument("--rollouts", type=_positive, default=100_000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--csv", help="write every trajectory to this CSV file")
    v.add_argument("--summary", help="write the JSON summary here")
    v.add_argument("--surrogate", action="store_true", help="roll out the Taylor surrogate instead")
    v.set_defaults(func=cmd_verify)

    m = sub.add_parser("moments", help="print propagated state moments")
    m.add_argument("scenario")
    m.add_argument("--upto", type=_positive, default=2)
    m.add_argument("--step", type=int, default=0)
    m.add_argument("--gains", help="gains JSON (needed for --step > 0)")
    m.add_argument("--json", action="store_true")
    m.set_defaults(func=cmd_moments)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
