"""feec-proj command line: verify, dump-operator, dump-weights."""
import argparse
import sys

import numpy as np
import scipy.sparse as sp

from .cochain_projection import CochainProjection
from .exceptions import FeecError
from .fe_space import DiscreteComplex, parse_sequence
from .harness import SuiteConfig, emit_report, format_report, run_suite
from .mesh import mesh_from_name
from .validation import check_family, check_mesh_name
from .whitney_ops import WhitneyOperators, build_weights

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _common(p):
    p.add_argument("--mesh", default="unit-square-crisscross",
                   help="unit-square-crisscross, unit-cube-kuhn or file:PATH")
    p.add_argument("--degree", type=int, default=1, help="polynomial degree r")
    p.add_argument("--family", default="minus", help="minus, full or mixed:SPEC (e.g. mixed:2,2-,1,1-)")


def build_parser():
    parser = argparse.ArgumentParser(prog="feec-proj", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run the verification suite over refinement levels")
    _common(v)
    v.add_argument("--refine", type=int, default=2, help="number of refinement levels")
    v.add_argument("--base-n", type=int, default=None, help="subdivisions of the coarsest mesh")
    v.add_argument("--k", default="all", help="form degree or 'all'")
    v.add_argument("--seed", type=int, default=42)
    v.add_argument("--report", default=None, help="output path (stdout if omitted)")
    v.add_argument("--format", choices=("json", "csv", "markdown"), default="json")

    d = sub.add_parser("dump-operator", help="write an operator as sorted 0-based triplets")
    _common(d)
    d.add_argument("--n", type=int, default=2, help="mesh subdivisions")
    d.add_argument("--which", choices=("pi", "R", "d"), required=True)
    d.add_argument("--k", type=int, required=True)
    d.add_argument("--out", default=None)

    w = sub.add_parser("dump-weights", help="write the weight functions as JSON")
    _common(w)
    w.add_argument("--n", type=int, default=2)
    w.add_argument("--out", default=None)
    return parser


def _complex(args):
    check_mesh_name(args.mesh)
    check_family(args.family)
    cx = mesh_from_name(args.mesh, args.n)
    r = None if args.family.startswith("mixed:") else args.degree
    return cx, DiscreteComplex(cx, parse_sequence(args.family, r, cx.n))


def _write(text, path):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def triplets(mat, tol=0.0):
    """Text lines 'row col value', sorted by (row, col), entries with |value| > tol."""
    coo = sp.coo_matrix(mat)
    keep = np.abs(coo.data) > tol
    rows, cols, vals = coo.row[keep], coo.col[keep], coo.data[keep]
    order = np.lexsort((cols, rows))
    return "".join(f"{rows[i]} {cols[i]} {vals[i]:.17g}\n" for i in order)


def cmd_verify(args):
    cfg = SuiteConfig(mesh=args.mesh, levels=args.refine, degree=args.degree, family=args.family,
                      k=args.k, seed=args.seed, base_n=args.base_n)
    report = run_suite(cfg)
    if args.report:
        emit_report(report, args.report, args.format)
    else:
        _write(format_report(report, args.format), None)
    for c in report.failures():
        print(f"FAIL {c.name} level={c.level} k={c.k} residual={c.residual:.3e} tol={c.tolerance:.1e}",
              file=sys.stderr)
    return EXIT_PASS if report.passed else EXIT_FAIL


def cmd_dump_operator(args):
    cx, dc = _complex(args)
    k = args.k
    if not 0 <= k <= cx.n or (args.which == "d" and k == cx.n):
        raise FeecError(f"k={k} is not valid for --which {args.which}")
    if args.which == "d":
        mat = dc.D[k]
    elif args.which == "R":
        ops = WhitneyOperators(dc)
        mat = ops.R[k] @ (dc.fe_moment_matrix(k) @ dc.embed[k]).toarray()
    else:
        mat = CochainProjection(dc).fe_matrix(k)
    _write(triplets(mat, tol=1e-14), args.out)
    return EXIT_PASS


def cmd_dump_weights(args):
    _, dc = _complex(args)
    w = build_weights(dc)
    _write(w.to_json() + "\n", args.out)
    return EXIT_PASS


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"verify": cmd_verify, "dump-operator": cmd_dump_operator, "dump-weights": cmd_dump_weights}
    try:
        return handlers[args.command](args)
    except (FeecError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
