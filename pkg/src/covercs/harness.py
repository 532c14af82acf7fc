"""Experiment runner: build artifacts, solve across the epsilon/method/ratio
grid, aggregate run summaries into the accuracy-versus-computation table."""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

from covercs import covertree, mrf, solver
from covercs.config import ExperimentConfig
from covercs.covertree import CoverTree
from covercs.model import Dictionary, save_dictionary
from covercs.operators import EPIOperator, add_noise, lattice_epi_pattern, vectorize_image

__all__ = [
    "build_experiment_dictionary",
    "build_experiment_phantom",
    "run_single",
    "run_sweep",
    "report_table",
    "write_report_table",
]

TABLE_COLUMNS = ["method", "epsilon", "ratio", "final_mse", "t1_mae", "t2_mae",
                 "cum_distances"]


def build_experiment_dictionary(cfg: ExperimentConfig) -> Dictionary:
    seq = mrf.default_sequence(cfg.n_excitations, cfg.tr_ms)
    grid = mrf.log_parameter_grid(cfg.t1_range, cfg.t2_range, cfg.t1_count, cfg.t2_count)
    return mrf.build_dictionary(seq, grid)


def build_experiment_phantom(cfg: ExperimentConfig, dictionary: Dictionary) -> mrf.Phantom:
    if cfg.phantom_path:
        return mrf.load_phantom_spec(cfg.phantom_path)
    grid = mrf.ParameterGrid(dictionary.params)
    return mrf.default_phantom(cfg.height, cfg.width, grid)


def _method_label(method: str, epsilon: float) -> str:
    if method == "brute":
        return "brute-exact"
    return "tree-exact" if epsilon == 0.0 else "tree-ann"


def run_single(dictionary: Dictionary, tree: CoverTree | None, phantom: mrf.Phantom,
               cfg: ExperimentConfig, ratio: int, method: str, epsilon: float,
               out_dir=None) -> dict:
    """One solve on the configured instance; writes telemetry + summary when
    out_dir is given and returns the summary dict."""
    X0, truth_ids, truth_gammas = mrf.synthesize_phantom(phantom, dictionary)
    pattern = lattice_epi_pattern(phantom.height, phantom.width,
                                  dictionary.n_chan, ratio, cfg.shift_rule)
    op = EPIOperator(pattern)
    y = op.apply(vectorize_image(X0))
    if cfg.noise_norm > 0:
        y = add_noise(y, cfg.noise_norm, cfg.seed)

    schedule = solver.EpsilonSchedule(
        variant=cfg.schedule_variant, mode=cfg.schedule_mode, epsilon=epsilon,
        decay=cfg.schedule_decay, gamma=cfg.schedule_gamma)
    run_cfg = solver.SolverConfig(
        step_size=cfg.step_size, max_iters=cfg.max_iters, tolerance=cfg.tolerance,
        projection=method, schedule=schedule, seed=cfg.seed)

    def metrics(ids, gammas):
        return mrf.parameter_mae(ids, gammas, truth_ids, truth_gammas,
                                 dictionary.params)

    t0 = time.perf_counter()
    run = solver.ipg_run(op, dictionary, tree, y, run_cfg, ground_truth=X0,
                         param_metrics=metrics)
    wall = time.perf_counter() - t0

    label = _method_label(method, epsilon)
    config_echo = {
        "ratio": ratio, "method": method, "epsilon": epsilon,
        "max_iters": cfg.max_iters, "tolerance": cfg.tolerance,
        "seed": cfg.seed, "height": phantom.height, "width": phantom.width,
        "n_excitations": dictionary.n_chan, "d": dictionary.size,
        "schedule": cfg.schedule_variant, "mode": cfg.schedule_mode,
    }
    if out_dir is None:
        last = run.records[-1]
        return {
            "method": label, "epsilon": epsilon, "ratio": ratio,
            "final_rel_solution_mse": last.rel_solution_mse,
            "final_t1_mae": last.t1_mae, "final_t2_mae": last.t2_mae,
            "cum_distances": last.distances_cum, "wall_time_s": wall,
            "run": run,
        }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    solver.write_telemetry_csv(run.records, out_dir / "telemetry.csv")
    summary = solver.write_run_summary(
        out_dir / "summary.json", method=label, epsilon=epsilon, ratio=ratio,
        config_echo=config_echo, run=run, wall_time_s=wall)
    return summary


def sweep_grid(cfg: ExperimentConfig):
    """(method, epsilon) cells per ratio: one brute baseline plus one tree run
    per epsilon value (epsilon 0 is the exact tree search)."""
    cells = []
    if "brute" in cfg.methods:
        cells.append(("brute", 0.0))
    if "tree" in cfg.methods:
        for eps in cfg.epsilons:
            cells.append(("tree", float(eps)))
    return cells


def run_sweep(cfg: ExperimentConfig, out_dir, dictionary: Dictionary | None = None,
              tree: CoverTree | None = None) -> list:
    """Full grid over ratios x methods; returns the list of run summaries and
    writes per-run directories plus the combined table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if dictionary is None:
        dictionary = build_experiment_dictionary(cfg)
        save_dictionary(dictionary, out_dir / "dictionary.bin")
    if tree is None and "tree" in cfg.methods:
        tree = dictionary.build_tree()
        covertree.save_tree(tree, out_dir / "tree.json")
    phantom = build_experiment_phantom(cfg, dictionary)
    mrf.save_phantom_spec(phantom, out_dir / "phantom.txt")

    summaries = []
    for ratio in cfg.ratios:
        for method, eps in sweep_grid(cfg):
            run_name = f"ratio{ratio}_{_method_label(method, eps)}_eps{eps:g}"
            summary = run_single(dictionary, tree, phantom, cfg, ratio, method,
                                 eps, out_dir / run_name)
            summaries.append(summary)
    write_report_table(summaries, out_dir / "table.csv")
    with open(out_dir / "sweep.json", "w") as fh:
        json.dump(summaries, fh, indent=2)
        fh.write("\n")
    return summaries


def report_table(summaries) -> list:
    """Rows (method, epsilon, ratio, final MSE, T1 MAE, T2 MAE, cumulative
    distances), sorted by cumulative distances."""
    if not summaries:
        raise ValueError("need at least one run summary")
    rows = []
    for s in summaries:
        rows.append({
            "method": s["method"],
            "epsilon": s["epsilon"],
            "ratio": s["ratio"],
            "final_mse": s["final_rel_solution_mse"],
            "t1_mae": s["final_t1_mae"],
            "t2_mae": s["final_t2_mae"],
            "cum_distances": s["cum_distances"],
        })
    rows.sort(key=lambda r: r["cum_distances"])
    return rows


def write_report_table(summaries, path) -> list:
    rows = report_table(summaries)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TABLE_COLUMNS)
        for r in rows:
            writer.writerow([r["method"], repr(float(r["epsilon"])), r["ratio"],
                             repr(float(r["final_mse"])), repr(float(r["t1_mae"])),
                             repr(float(r["t2_mae"])), r["cum_distances"]])
    return rows


def load_summaries(run_root) -> list:
    """Collect summary.json files under a sweep output directory."""
    root = Path(run_root)
    summaries = []
    for p in sorted(root.glob("**/summary.json")):
        with open(p) as fh:
            summaries.append(json.load(fh))
    return summaries
