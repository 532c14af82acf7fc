"""Command line interface.

Subcommands: gen-dict, build-tree, gen-phantom, solve, sweep, validate-tree,
report.  Experiment definitions live in a TOML config; flags only select the
subcommand and artifact paths.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from covercs import covertree, harness, mrf
from covercs.config import load_config
from covercs.covertree import PointSet
from covercs.figures import render_report_figures
from covercs.model import load_dictionary, save_dictionary


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _require(path, what: str):
    if not Path(path).exists():
        raise FileNotFoundError(f"missing {what}: {path}")


def cmd_gen_dict(args) -> int:
    cfg = load_config(args.config)
    dictionary = harness.build_experiment_dictionary(cfg)
    save_dictionary(dictionary, args.out)
    print(f"wrote dictionary ({dictionary.size} atoms, {dictionary.n_chan} channels) "
          f"to {args.out}")
    return 0


def cmd_build_tree(args) -> int:
    _require(args.dict, "dictionary file")
    dictionary = load_dictionary(args.dict)
    tree = dictionary.build_tree()
    covertree.save_tree(tree, args.out)
    print(f"wrote cover tree (sigma={tree.sigma:.6g}, l_max={tree.l_max}, "
          f"{tree.node_count()} nodes) to {args.out}")
    return 0


def cmd_gen_phantom(args) -> int:
    cfg = load_config(args.config)
    _require(args.dict, "dictionary file")
    dictionary = load_dictionary(args.dict)
    phantom = harness.build_experiment_phantom(cfg, dictionary)
    mrf.save_phantom_spec(phantom, args.out)
    print(f"wrote phantom spec ({phantom.height}x{phantom.width}, "
          f"{len(phantom.segments)} segments) to {args.out}")
    return 0


def cmd_validate_tree(args) -> int:
    _require(args.dict, "dictionary file")
    _require(args.tree, "tree file")
    dictionary = load_dictionary(args.dict)
    tree = covertree.load_tree(args.tree, PointSet(dictionary.normalized_atoms))
    report = covertree.validate_invariants(tree)
    for prop in ("nesting", "covering", "separation", "maxdist"):
        ok = getattr(report, f"{prop}_ok")
        line = f"{prop}: {'pass' if ok else 'FAIL'}"
        if not ok:
            line += f" ({report.counterexamples.get(prop)})"
        print(line)
    return 0 if report.all_ok else 1


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    _require(args.dict, "dictionary file")
    dictionary = load_dictionary(args.dict)
    tree = None
    if args.method == "tree":
        _require(args.tree, "tree file")
        tree = covertree.load_tree(args.tree, PointSet(dictionary.normalized_atoms))
    if args.phantom:
        _require(args.phantom, "phantom spec")
        cfg.phantom_path = args.phantom
    phantom = harness.build_experiment_phantom(cfg, dictionary)
    summary = harness.run_single(dictionary, tree, phantom, cfg, args.ratio,
                                 args.method, args.epsilon, args.out)
    print(f"run {summary['method']} eps={args.epsilon:g} ratio={args.ratio}: "
          f"MSE={summary['final_rel_solution_mse']:.4g} "
          f"distances={summary['cum_distances']} -> {args.out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    summaries = harness.run_sweep(cfg, args.out)
    print(f"swept {len(summaries)} runs -> {args.out}/table.csv")
    return 0


def cmd_report(args) -> int:
    summaries = harness.load_summaries(args.runs)
    if not summaries:
        raise FileNotFoundError(f"no summary.json files under {args.runs}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = harness.write_report_table(summaries, out_dir / "table.csv")
    print(f"wrote {len(rows)} table rows to {out_dir / 'table.csv'}")
    if not args.no_figures:
        for path in render_report_figures(rows, out_dir):
            print(f"wrote figure {path}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covercs",
        description="Tree-accelerated projected-gradient reconstruction experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dict", help="generate the fingerprint dictionary")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_dict)

    p = sub.add_parser("build-tree", help="build a cover tree on a dictionary")
    p.add_argument("--dict", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_tree)

    p = sub.add_parser("gen-phantom", help="generate the phantom spec")
    p.add_argument("--config", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_phantom)

    p = sub.add_parser("validate-tree", help="check cover tree invariants")
    p.add_argument("--dict", required=True)
    p.add_argument("--tree", required=True)
    p.set_defaults(func=cmd_validate_tree)

    p = sub.add_parser("solve", help="single reconstruction run")
    p.add_argument("--config", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--tree")
    p.add_argument("--phantom")
    p.add_argument("--ratio", type=int, required=True)
    p.add_argument("--method", choices=["brute", "tree"], required=True)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="run the full epsilon x method x ratio grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="aggregate run summaries into table + figures")
    p.add_argument("--runs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
