"""Iterative projected gradient with pluggable (in)exact projection.

Each iteration takes the gradient step Z = X + mu * A^H (y - A X) and projects
Z column-wise onto the cone model, exactly (brute force) or approximately
(cover tree, multiplicative or additive accuracy from a schedule).  Telemetry
records objective, solution error and distance-evaluation counts; bound
calculators implement the contraction-rate formulas used to certify runs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from covercs.model import Dictionary, product_project
from covercs.operators import LinearOperator, unvectorize_image, vectorize_image

__all__ = [
    "EpsilonSchedule",
    "SolverConfig",
    "IterationRecord",
    "SolverRun",
    "ConvergenceBound",
    "BoundCheckReport",
    "next_epsilon",
    "ipg_run",
    "compute_bound",
    "residual_bound_check",
    "write_telemetry_csv",
    "read_telemetry_csv",
    "write_run_summary",
]

TELEMETRY_COLUMNS = ["iter", "objective", "rel_solution_mse", "t1_mae", "t2_mae",
                     "epsilon_t", "distances_iter", "distances_cum"]
SUMMARY_SCHEMA_VERSION = 1


@dataclass
class EpsilonSchedule:
    """Approximation level per iteration.

    variant: "constant", "geometric", "objective_feedback" or
    "gradient_feedback".  mode selects the projection contract:
    "multiplicative" pairs with (1+eps)-tree searches, "additive" with
    eps-close searches (squared-distance units).  The feedback variants emit
    squared-distance levels and are additive-only.
    """

    variant: str = "constant"
    mode: str = "multiplicative"
    epsilon: float = 0.0       # constant level / geometric start
    decay: float = 0.5         # geometric ratio r
    gamma: float = 0.1         # feedback gain

    def __post_init__(self):
        if self.variant not in ("constant", "geometric", "objective_feedback",
                                "gradient_feedback"):
            raise ValueError(f"unknown schedule variant {self.variant!r}")
        if self.mode not in ("multiplicative", "additive"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.variant in ("objective_feedback", "gradient_feedback") and \
                self.mode != "additive":
            raise ValueError(f"{self.variant} emits squared-distance levels and "
                             "is additive-mode only")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.variant == "geometric" and not (0 < self.decay < 1):
            raise ValueError("geometric decay must lie in (0, 1)")
        if self.variant in ("objective_feedback", "gradient_feedback") and self.gamma < 0:
            raise ValueError("feedback gain gamma must be >= 0")


@dataclass
class ScheduleState:
    k: int
    objective: float = 0.0
    gradient_norm_sq: float = 0.0
    mu: float = 1.0


def next_epsilon(schedule: EpsilonSchedule, state: ScheduleState) -> float:
    """Approximation level for iteration state.k."""
    for name in ("objective", "gradient_norm_sq", "mu"):
        v = getattr(state, name)
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"state.{name} must be finite and >= 0, got {v}")
    if schedule.variant == "constant":
        return schedule.epsilon
    if schedule.variant == "geometric":
        return schedule.epsilon * schedule.decay ** state.k
    if schedule.variant == "objective_feedback":
        return schedule.gamma * state.mu * state.objective
    return schedule.gamma * state.gradient_norm_sq


@dataclass
class SolverConfig:
    step_size: float | None = None   # None -> n/m
    max_iters: int = 40
    tolerance: float = 1e-6
    projection: str = "brute"        # "brute" or "tree"
    schedule: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    seed: int = 0

    def __post_init__(self):
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step size must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.projection not in ("brute", "tree"):
            raise ValueError(f"unknown projection {self.projection!r}")


@dataclass
class IterationRecord:
    k: int
    objective: float
    solution_error: float       # ||x^k - x_0||, nan without ground truth
    rel_solution_mse: float     # ||x^k - x_0|| / ||x_0||, nan without truth
    epsilon_t: float
    distances_iter: int
    distances_cum: int
    t1_mae: float = float("nan")
    t2_mae: float = float("nan")


@dataclass
class SolverRun:
    image: np.ndarray
    atom_ids: np.ndarray
    gammas: np.ndarray
    records: list
    clamp_count: int
    mu: float
    converged: bool


def ipg_run(op: LinearOperator, dictionary: Dictionary, tree, y, config: SolverConfig,
            ground_truth=None, param_metrics=None) -> SolverRun:
    """Run (in)exact IPG from X = 0.

    y is the measurement vector; ground_truth, when given, is the (n_chan, J)
    image used for the error telemetry.  param_metrics(atom_ids, gammas) may
    return extra (t1_mae, t2_mae) telemetry per iteration.
    """
    n_chan = dictionary.n_chan
    if op.input_dim % n_chan != 0:
        raise ValueError("operator input dim is not a multiple of the atom length")
    J = op.input_dim // n_chan
    mu = config.step_size if config.step_size is not None else op.input_dim / op.output_dim

    X = np.zeros((n_chan, J), dtype=np.complex128)
    atom_ids = np.full(J, tree.root.point_id if tree is not None else 0, dtype=int)
    gammas = np.zeros(J)
    truth_norm = float(np.linalg.norm(ground_truth)) if ground_truth is not None else float("nan")

    records: list[IterationRecord] = []
    cum = 0
    clamp_total = 0
    converged = False
    mode = "exact" if config.projection == "brute" else config.schedule.mode

    for k in range(config.max_iters):
        residual = y - op.apply(vectorize_image(X))
        objective = float(np.linalg.norm(residual)) ** 2
        grad = op.adjoint(residual)
        eps_t = next_epsilon(
            config.schedule,
            ScheduleState(k, objective, float(np.linalg.norm(grad)) ** 2, mu),
        ) if config.projection == "tree" else 0.0
        Z = X + mu * unvectorize_image(grad, n_chan, J)
        if not np.all(np.isfinite(Z.view(np.float64))):
            raise FloatingPointError(f"non-finite iterate at iteration {k + 1}")
        proj = product_project(dictionary, tree, Z, atom_ids, eps_t, mode)
        X_next, atom_ids, gammas = proj.image, proj.atom_ids, proj.gammas
        cum += proj.distances
        clamp_total += proj.clamp_count

        step = float(np.linalg.norm(X_next - X))
        denom = max(float(np.linalg.norm(X)), 1.0)
        err = float(np.linalg.norm(X_next - ground_truth)) if ground_truth is not None \
            else float("nan")
        new_objective = float(np.linalg.norm(y - op.apply(vectorize_image(X_next)))) ** 2
        rec = IterationRecord(
            k=k + 1,
            objective=new_objective,
            solution_error=err,
            rel_solution_mse=err / truth_norm if ground_truth is not None else float("nan"),
            epsilon_t=eps_t,
            distances_iter=proj.distances,
            distances_cum=cum,
        )
        if param_metrics is not None:
            rec.t1_mae, rec.t2_mae = param_metrics(atom_ids, gammas)
        records.append(rec)
        X = X_next
        if step / denom < config.tolerance:
            converged = True
            break
    return SolverRun(X, atom_ids, gammas, records, clamp_total, mu, converged)


# ---------------------------------------------------------------------------
# Theoretical bounds

@dataclass
class ConvergenceBound:
    theorem: str
    rho: float
    kappa_w: float = float("nan")   # multiplicative case only
    noise_amp: float = float("nan")  # additive / gradient-feedback cases
    valid: bool = True
    failed: list = field(default_factory=list)


def compute_bound(theorem: str, alpha: float, beta: float, mu: float, *,
                  epsilon: float = 0.0, gamma: float = 0.0,
                  op_norm: float = 1.0) -> ConvergenceBound:
    """Contraction rate and preconditions for one of the three guarantees.

    theorem "inexact_multiplicative": rho = sqrt(1/(mu*alpha) - 1) + delta with
    delta = sqrt(epsilon + epsilon^2) * op_norm / sqrt(alpha);
    "additive_recursion": rho = 2*(1/(mu*alpha) - 1), noise amplification 4/alpha;
    "gradient_feedback": rho = 2*((1 + 2*gamma*op_norm^4)/(mu*alpha) - 1).
    Violated preconditions set valid=False and are named in `failed`.
    """
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be > 0")
    failed: list[str] = []

    if theorem == "inexact_multiplicative":
        delta = math.sqrt(epsilon + epsilon**2) * op_norm / math.sqrt(alpha)
        if delta >= 1:
            failed.append("delta < 1")
        cond = (2 - 2 * delta + delta**2) * alpha
        if not beta < cond:
            failed.append("beta < (2 - 2*delta + delta^2)*alpha")
        if not (1.0 / cond < mu <= 1.0 / beta):
            failed.append("1/((2 - 2*delta + delta^2)*alpha) < mu <= 1/beta")
        inner = 1.0 / (mu * alpha) - 1.0
        rho = math.sqrt(inner) + delta if inner >= 0 else float("nan")
        if not (inner >= 0 and rho < 1):
            failed.append("rho < 1")
        kappa_w = 2 * math.sqrt(beta) / alpha + math.sqrt(mu) * delta
        return ConvergenceBound("inexact_multiplicative", rho, kappa_w=kappa_w,
                                valid=not failed, failed=failed)

    if theorem == "additive_recursion":
        if not beta < 1.5 * alpha:
            failed.append("beta < 1.5*alpha")
        if not (2.0 / (3.0 * alpha) < mu <= 1.0 / beta):
            failed.append("2/(3*alpha) < mu <= 1/beta")
        rho = 2.0 * (1.0 / (mu * alpha) - 1.0)
        if not rho < 1:
            failed.append("rho < 1")
        return ConvergenceBound("additive_recursion", rho, noise_amp=4.0 / alpha,
                                valid=not failed, failed=failed)

    if theorem == "gradient_feedback":
        boost = 1.0 + 2.0 * gamma * op_norm**4
        if not beta <= 1.5 * alpha / boost:
            failed.append("beta <= 3*alpha/(2*(1 + 2*gamma*||A||^4))")
        if not (2.0 * boost / (3.0 * alpha) <= mu <= 1.0 / beta):
            failed.append("(2/3)*(1 + 2*gamma*||A||^4)/alpha <= mu <= 1/beta")
        rho = 2.0 * (boost / (mu * alpha) - 1.0)
        if not rho < 1:
            failed.append("rho < 1")
        noise_amp = 4.0 / alpha * (1.0 + gamma * op_norm**2 / mu)
        return ConvergenceBound("gradient_feedback", rho, noise_amp=noise_amp,
                                valid=not failed, failed=failed)

    raise ValueError(f"unknown theorem {theorem!r}")


@dataclass
class BoundCheckReport:
    passed: bool
    first_violation: int | None
    margins: list  # rhs_t - err_t^2 per iteration


def residual_bound_check(records, bound: ConvergenceBound, x_init_error: float,
                         eps_sequence, noise_norm: float = 0.0,
                         alpha: float = 1.0, mu: float = 1.0,
                         slack: float = 1e-9) -> BoundCheckReport:
    """Check the recorded error sequence against the additive-theory envelope:

        err_t^2 <= rho^t * init^2 + (2/(mu*alpha)) * sum_i rho^(t-i) eps_i
                   + (4/alpha) * (1 - rho^t)/(1 - rho) * ||w||^2

    with eps_i the level used in the update producing x^i (i = 1..t).  A small
    absolute slack absorbs float accumulation.
    """
    rho = bound.rho
    eps_sequence = list(eps_sequence)
    if len(eps_sequence) < len(records):
        raise ValueError("eps_sequence shorter than the record list")
    margins = []
    first_violation = None
    noise_sum = 0.0
    eps_sum = 0.0  # sum_i rho^(t-i) eps_i, updated as eps_sum*rho + eps_t
    for t, rec in enumerate(records, start=1):
        if not math.isfinite(rec.solution_error):
            raise ValueError("residual_bound_check requires ground-truth errors")
        eps_sum = eps_sum * rho + eps_sequence[t - 1]
        noise_sum = noise_sum * rho + 1.0
        rhs = (rho ** t * x_init_error**2 + (2.0 / (mu * alpha)) * eps_sum
               + (4.0 / alpha) * noise_sum * noise_norm**2)
        margin = rhs + slack - rec.solution_error**2
        margins.append(margin)
        if margin < 0 and first_violation is None:
            first_violation = t
    return BoundCheckReport(first_violation is None, first_violation, margins)


# ---------------------------------------------------------------------------
# Telemetry files

def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_telemetry_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TELEMETRY_COLUMNS)
        for r in records:
            writer.writerow([_fmt(v) for v in (
                r.k, r.objective, r.rel_solution_mse, r.t1_mae, r.t2_mae,
                r.epsilon_t, r.distances_iter, r.distances_cum)])


def read_telemetry_csv(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append({k: (int(v) if k in ("iter", "distances_iter", "distances_cum")
                             else float(v)) for k, v in row.items()})
    return rows


def write_run_summary(path, *, method: str, epsilon: float, ratio, config_echo: dict,
                      run: SolverRun, wall_time_s: float, bound_report=None,
                      telemetry_csv: str = "telemetry.csv") -> dict:
    last = run.records[-1]
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "method": method,
        "epsilon": epsilon,
        "ratio": ratio,
        "config": config_echo,
        "iterations": len(run.records),
        "converged": run.converged,
        "step_size": run.mu,
        "final_objective": last.objective,
        "final_rel_solution_mse": last.rel_solution_mse,
        "final_t1_mae": last.t1_mae,
        "final_t2_mae": last.t2_mae,
        "cum_distances": last.distances_cum,
        "gamma_clamped_total": run.clamp_count,
        "wall_time_s": wall_time_s,
        "telemetry_csv": telemetry_csv,
    }
    if bound_report is not None:
        summary["bound_report"] = bound_report
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, allow_nan=True)
        fh.write("\n")
    return summary
