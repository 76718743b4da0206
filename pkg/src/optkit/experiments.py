"""Experiment drivers: seeded runs to CSV, batch-size speedup, ablation, checks.

CSV contract: comma-separated, header row, UNIX newlines, floats rendered
with 17 significant digits so parsing them back is exact. Identical specs
produce byte-identical files on a fixed platform.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentSpec
from .diagnostics import displacement_rhs, grad_norm_metric
from .errors import ConfigError, InvariantViolationError
from .objectives import (
    StochasticObjective,
    finite_diff_grad,
    make_noisy_rosenbrock,
    make_stochastic_quadratic,
    make_synthetic_logreg,
)
from .optimizers import (
    OptimizerConfig,
    TrajectoryRecord,
    eta_of,
    initial_state,
    iterate,
    run,
)
from .vectors import l2_norm, subtract

__all__ = [
    "TRAJECTORY_COLUMNS",
    "RunExperimentResult",
    "SpeedupRow",
    "SpeedupResult",
    "AblationRow",
    "AblationResult",
    "CheckOutcome",
    "CheckResult",
    "CHECK_SUITES",
    "run_experiment",
    "default_speedup_threshold",
    "run_speedup",
    "run_ablation",
    "check",
    "max_displacement_residual",
]

TRAJECTORY_COLUMNS = (
    "step",
    "loss",
    "grad_norm_sq",
    "eta_min",
    "eta_max",
    "eta_l1_diff_sum",
    "perturb_skipped",
)


def _fmt(value: float | int | bool) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    return format(value, ".17g")


def _write_csv(path: Path, header: tuple[str, ...], rows: list[tuple]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(cell) for cell in row) for row in rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        handle.write("\n".join(lines) + "\n")


def _record_row(record: TrajectoryRecord) -> tuple:
    return (
        record.step,
        record.loss,
        record.grad_norm_sq,
        record.eta_min,
        record.eta_max,
        record.eta_l1_diff_sum,
        record.perturb_skipped,
    )


def _warn_step_size(spec: ExperimentSpec, obj: StochasticObjective, gamma: float) -> None:
    # Analyzed regime: gamma <= epsilon / (16 L). Warn-only; practical rates
    # are routinely larger.
    meta = obj.meta
    if not meta.smoothness_exact:
        return
    bound = spec.optimizer.epsilon / (16.0 * meta.smoothness_L)
    if gamma > bound:
        warnings.warn(
            f"learning rate {gamma:g} exceeds epsilon/(16 L) = {bound:g}; "
            "outside the analyzed step-size regime",
            stacklevel=2,
        )


@dataclass(frozen=True)
class RunExperimentResult:
    trajectory_paths: tuple[Path, ...]
    summary_path: Path
    seeds: tuple[int, ...]
    mean_final_loss: float
    mean_grad_norm_metric: float
    outside_box_steps: int


def run_experiment(spec: ExperimentSpec) -> RunExperimentResult:
    """Run every seed, write one trajectory CSV per seed plus a summary CSV."""
    if spec.output_path is None:
        raise ConfigError("output.path is required for run_experiment")
    obj = spec.make_objective()
    gamma = spec.gamma_for_batch(spec.batch_size)
    _warn_step_size(spec, obj, gamma)
    cfg = _with_gamma(spec.optimizer, gamma)
    x0 = spec.start_vector(obj.meta.dim)

    per_seed: list[list[TrajectoryRecord]] = []
    paths: list[Path] = []
    outside = 0
    for seed in spec.seeds:
        records = run(
            spec.optimizer_kind,
            cfg,
            obj,
            spec.steps,
            spec.batch_size,
            seed,
            x0=x0,
            strict_invariants=spec.strict,
            record_stride=spec.record_stride,
        )
        outside += sum(r.outside_box for r in records)
        path = spec.output_path / f"trajectory_seed{seed}.csv"
        _write_csv(path, TRAJECTORY_COLUMNS, [_record_row(r) for r in records])
        per_seed.append(records)
        paths.append(path)

    summary_rows = []
    n_seeds = len(per_seed)
    for step_records in zip(*per_seed):
        summary_rows.append(
            (
                step_records[0].step,
                math.fsum(r.loss for r in step_records) / n_seeds,
                math.fsum(r.grad_norm_sq for r in step_records) / n_seeds,
                math.fsum(r.eta_min for r in step_records) / n_seeds,
                math.fsum(r.eta_max for r in step_records) / n_seeds,
                math.fsum(r.eta_l1_diff_sum for r in step_records) / n_seeds,
                math.fsum(float(r.perturb_skipped) for r in step_records) / n_seeds,
            )
        )
    summary_path = spec.output_path / "summary.csv"
    _write_csv(summary_path, TRAJECTORY_COLUMNS, summary_rows)

    return RunExperimentResult(
        trajectory_paths=tuple(paths),
        summary_path=summary_path,
        seeds=spec.seeds,
        mean_final_loss=math.fsum(r[-1].loss for r in per_seed) / n_seeds,
        mean_grad_norm_metric=math.fsum(grad_norm_metric(r) for r in per_seed)
        / n_seeds,
        outside_box_steps=outside,
    )


def _with_gamma(cfg: OptimizerConfig, gamma: float) -> OptimizerConfig:
    return OptimizerConfig(
        gamma=gamma,
        rho=cfg.rho,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        epsilon=cfg.epsilon,
        use_max_clamp=cfg.use_max_clamp,
        perturb_norm_floor=cfg.perturb_norm_floor,
        rho_schedule=cfg.rho_schedule,
    )


@dataclass(frozen=True)
class SpeedupRow:
    batch_size: int
    steps_to_threshold: int | None  # None: threshold never reached
    final_metric: float


@dataclass(frozen=True)
class SpeedupResult:
    rows: tuple[SpeedupRow, ...]  # sorted by batch size ascending
    threshold: float
    loglog_slope: float | None
    csv_path: Path | None


def default_speedup_threshold(spec: ExperimentSpec, obj: StochasticObjective) -> float:
    """Heuristic default: 10x the predicted steady metric at the largest batch.

    The steady-state running-average level at batch size b is roughly
    gamma_b * eta * sigma^2 / (2 b) with eta at most 1/G on the declared
    box; the largest batch has the lowest floor, and 10x it leaves the
    transient visible for every batch size. Printed by the CLI and
    overridable with --threshold.
    """
    meta = obj.meta
    if meta.grad_inf_bound_G is None:
        raise ConfigError(
            "objective reports no finite gradient bound; pass an explicit "
            "speedup threshold"
        )
    b_max = max(spec.speedup_batch_sizes)
    gamma_b = spec.gamma_for_batch(b_max)
    floor = gamma_b * meta.grad_variance_sigma2 / (
        2.0 * b_max * meta.grad_inf_bound_G
    )
    return 10.0 * floor


def run_speedup(
    spec: ExperimentSpec, threshold: float | None = None
) -> SpeedupResult:
    """Steps until the seed-mean running average of ||grad f||^2 crosses
    a threshold, per batch size, with a log-log slope estimate."""
    obj = spec.make_objective()
    if threshold is None:
        threshold = spec.speedup_threshold
    if threshold is None:
        threshold = default_speedup_threshold(spec, obj)
    if threshold <= 0:
        raise ConfigError("speedup threshold must be positive")

    rows = []
    for batch_size in sorted(spec.speedup_batch_sizes):
        gamma = spec.gamma_for_batch(batch_size)
        _warn_step_size(spec, obj, gamma)
        cfg = _with_gamma(spec.optimizer, gamma)
        x0 = spec.start_vector(obj.meta.dim)
        gsq = []
        for seed in spec.seeds:
            records = run(
                spec.optimizer_kind,
                cfg,
                obj,
                spec.speedup_max_steps,
                batch_size,
                seed,
                x0=x0,
                strict_invariants=spec.strict,
            )
            gsq.append([r.grad_norm_sq for r in records])
        seed_mean = np.asarray(gsq).mean(axis=0)
        prefix_mean = np.cumsum(seed_mean) / np.arange(1, seed_mean.size + 1)
        below = np.nonzero(prefix_mean < threshold)[0]
        steps_to = int(below[0]) + 1 if below.size else None
        rows.append(SpeedupRow(batch_size, steps_to, float(prefix_mean[-1])))

    reached = [(r.batch_size, r.steps_to_threshold) for r in rows
               if r.steps_to_threshold is not None]
    slope = None
    if len(reached) >= 2:
        log_b = np.log([b for b, _ in reached])
        log_steps = np.log([s for _, s in reached])
        slope = float(np.polyfit(log_b, log_steps, 1)[0])

    csv_path = None
    if spec.output_path is not None:
        csv_path = spec.output_path / "speedup.csv"
        _write_csv(
            csv_path,
            ("batch_size", "steps_to_threshold", "final_metric"),
            [
                (
                    r.batch_size,
                    r.steps_to_threshold
                    if r.steps_to_threshold is not None
                    else "not_reached",
                    r.final_metric,
                )
                for r in rows
            ],
        )
    return SpeedupResult(tuple(rows), float(threshold), slope, csv_path)


ABLATION_KINDS = ("sgd", "sam", "amsgrad", "adasam")
ABLATION_BETA1S = (0.0, 0.9)


@dataclass(frozen=True)
class AblationRow:
    optimizer_kind: str
    beta1: float
    final_losses: tuple[float, ...]  # one per seed
    mean_final_loss: float


@dataclass(frozen=True)
class AblationResult:
    rows: tuple[AblationRow, ...]
    csv_path: Path | None


def run_ablation(spec: ExperimentSpec) -> AblationResult:
    """The 4-optimizer x {beta1 = 0, beta1 = 0.9} grid on one objective.

    Adaptive rows (amsgrad/adasam) use `ablation.adaptive_gamma` when set,
    since one learning rate rarely suits both plain and adaptive updates;
    the reported cell metric is the seed-mean loss at the last recorded
    step.
    """
    obj = spec.make_objective()
    x0 = spec.start_vector(obj.meta.dim)
    rows = []
    for kind in ABLATION_KINDS:
        adaptive = kind in ("amsgrad", "adasam")
        gamma = spec.optimizer.gamma
        if adaptive and spec.ablation_adaptive_gamma is not None:
            gamma = spec.ablation_adaptive_gamma
        for beta1 in ABLATION_BETA1S:
            cfg = OptimizerConfig(
                gamma=gamma,
                rho=spec.optimizer.rho,
                beta1=beta1,
                beta2=spec.optimizer.beta2,
                epsilon=spec.optimizer.epsilon,
                use_max_clamp=spec.optimizer.use_max_clamp,
                perturb_norm_floor=spec.optimizer.perturb_norm_floor,
            )
            finals = []
            for seed in spec.seeds:
                records = run(
                    kind,
                    cfg,
                    obj,
                    spec.steps,
                    spec.batch_size,
                    seed,
                    x0=x0,
                    strict_invariants=spec.strict,
                )
                finals.append(records[-1].loss)
            rows.append(
                AblationRow(
                    optimizer_kind=kind,
                    beta1=beta1,
                    final_losses=tuple(finals),
                    mean_final_loss=math.fsum(finals) / len(finals),
                )
            )
    csv_path = None
    if spec.output_path is not None:
        csv_path = spec.output_path / "ablation.csv"
        _write_csv(
            csv_path,
            ("optimizer", "beta1", "mean_final_loss"),
            [(r.optimizer_kind, r.beta1, r.mean_final_loss) for r in rows],
        )
    return AblationResult(tuple(rows), csv_path)


@dataclass(frozen=True)
class CheckOutcome:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class CheckResult:
    outcomes: tuple[CheckOutcome, ...]

    @property
    def passed(self) -> bool:
        return all(o.passed for o in self.outcomes)


def max_displacement_residual(
    optimizer_kind: str,
    cfg: OptimizerConfig,
    obj: StochasticObjective,
    steps: int,
    batch_size: int,
    seed: int,
) -> float:
    """Max per-coordinate gap between the auxiliary-sequence displacement
    computed from iterates and the same displacement predicted from
    optimizer internals."""
    coef = cfg.beta1 / (1.0 - cfg.beta1)
    x0 = obj.default_start()
    prev_state = initial_state(x0, cfg)
    eta_prev = eta_of(prev_state)
    worst = 0.0
    for state, report in iterate(
        optimizer_kind, cfg, obj, steps, batch_size, seed, x0=x0
    ):
        # z_t from iterates: state.x_prev is x_t, prev_state.x_prev is x_{t-1}.
        z_now = state.x_prev + coef * (state.x_prev - prev_state.x_prev)
        z_next = state.x + coef * (state.x - state.x_prev)
        predicted = displacement_rhs(
            prev_state.m, eta_prev, report.eta, report.sam_grad, cfg.gamma, cfg.beta1
        )
        gap = np.abs((z_next - z_now) - predicted).max()
        worst = max(worst, float(gap))
        prev_state = state
        eta_prev = report.eta
    return worst


def _check_gradient_oracle() -> CheckOutcome:
    objectives = {
        "quadratic": make_stochastic_quadratic(6, 64, 1.5, seed=11),
        "rosenbrock": make_noisy_rosenbrock(seed=12, noise_sigma=0.7),
        "logreg": make_synthetic_logreg(5, 128, seed=13),
    }
    rng = np.random.default_rng(2024)
    worst = 0.0
    h = 1e-5
    for obj in objectives.values():
        for batch_size in (1, 4, 16):
            for _ in range(20):
                x = rng.uniform(-2.0, 2.0, size=obj.meta.dim)
                batch = obj.sample_batch(rng, batch_size)
                analytic = obj.batch_grad(x, batch)
                numeric = finite_diff_grad(obj, x, batch, h)
                rel = l2_norm(subtract(numeric, analytic)) / max(
                    l2_norm(analytic), 1e-12
                )
                worst = max(worst, rel)
    return CheckOutcome(
        "gradient_oracle",
        worst < 1e-5,
        f"max relative error {worst:.3e} over 3 objectives x 3 batch sizes "
        f"x 20 points (h = {h:g})",
    )


def _trajectories_equal(a_pairs, b_pairs) -> bool:
    for (state_a, _), (state_b, _) in zip(a_pairs, b_pairs):
        if not np.array_equal(state_a.x, state_b.x):
            return False
    return True


def _check_reductions() -> CheckOutcome:
    obj = make_stochastic_quadratic(10, 64, 1.0, seed=5)
    steps, batch, seed = 300, 4, 17
    # Power-of-two epsilon keeps the beta2 = 1 rescaling exact in floats.
    eps = 0.25
    pairs_ok = []

    cfg = OptimizerConfig(gamma=0.02, rho=0.0, beta1=0.9, epsilon=eps)
    pairs_ok.append(
        _trajectories_equal(
            iterate("adasam", cfg, obj, steps, batch, seed),
            iterate("amsgrad", cfg, obj, steps, batch, seed),
        )
    )
    cfg_b2 = OptimizerConfig(gamma=0.02, rho=0.05, beta1=0.9, beta2=1.0, epsilon=eps)
    cfg_sam = OptimizerConfig(
        gamma=0.02 / eps, rho=0.05, beta1=0.9, beta2=1.0, epsilon=eps
    )
    pairs_ok.append(
        _trajectories_equal(
            iterate("adasam", cfg_b2, obj, steps, batch, seed),
            iterate("sam", cfg_sam, obj, steps, batch, seed),
        )
    )
    cfg_rho0 = OptimizerConfig(gamma=0.05, rho=0.0, beta1=0.9, epsilon=eps)
    pairs_ok.append(
        _trajectories_equal(
            iterate("sam", cfg_rho0, obj, steps, batch, seed),
            iterate("sgd", cfg_rho0, obj, steps, batch, seed),
        )
    )
    # sgd with beta1 = 0 against a hand-rolled plain SGD loop.
    cfg_plain = OptimizerConfig(gamma=0.05, rho=0.0, beta1=0.0, epsilon=eps)
    manual_x = obj.default_start()
    rng = np.random.default_rng(seed)
    plain_ok = True
    for state, _ in iterate("sgd", cfg_plain, obj, steps, batch, seed):
        b = obj.sample_batch(rng, batch)
        manual_x = manual_x - cfg_plain.gamma * obj.batch_grad(manual_x, b)
        if not np.array_equal(state.x, manual_x):
            plain_ok = False
            break
    pairs_ok.append(plain_ok)

    names = ["adasam(rho=0)=amsgrad", "adasam(beta2=1)=sam(gamma/eps)",
             "sam(rho=0)=sgd-momentum", "sgd(beta1=0)=plain-sgd"]
    failing = [n for n, ok in zip(names, pairs_ok) if not ok]
    return CheckOutcome(
        "reduction_equalities",
        not failing,
        "all four reductions bit-exact" if not failing
        else f"failed: {', '.join(failing)}",
    )


def _check_eta_bounds(vhat_init: float | None = None) -> CheckOutcome:
    obj = make_noisy_rosenbrock(seed=3, noise_sigma=0.5)
    cfg = OptimizerConfig(gamma=0.01, rho=0.01, beta1=0.9)
    try:
        for seed in (0, 1):
            run("adasam", cfg, obj, 800, 2, seed, strict_invariants=True,
                vhat_init=vhat_init)
    except InvariantViolationError as exc:
        return CheckOutcome("eta_bounds", False, str(exc))
    return CheckOutcome(
        "eta_bounds",
        True,
        "eta within [1/max(eps, G_run), 1/eps] and non-increasing over "
        "2 seeds x 800 steps",
    )


def _check_telescoping(vhat_init: float | None = None) -> CheckOutcome:
    obj = make_stochastic_quadratic(8, 128, 2.0, seed=21)
    cfg = OptimizerConfig(gamma=0.05, rho=0.02, beta1=0.9)
    try:
        records = run(
            "adasam", cfg, obj, 1000, 4, 9, strict_invariants=True,
            vhat_init=vhat_init,
        )
    except InvariantViolationError as exc:
        return CheckOutcome("telescoping_bound", False, str(exc))
    return CheckOutcome(
        "telescoping_bound",
        True,
        f"rate-drift sum {records[-1].eta_l1_diff_sum:.6g} within bound over "
        "1000 steps",
    )


def _check_displacement() -> CheckOutcome:
    obj = make_stochastic_quadratic(6, 64, 1.0, seed=2)
    cfg = OptimizerConfig(gamma=0.02, rho=0.02, beta1=0.9)
    worst = max_displacement_residual("adasam", cfg, obj, 100, 4, seed=1)
    return CheckOutcome(
        "displacement_identity",
        worst < 1e-10,
        f"max per-coordinate residual {worst:.3e} over 100 steps",
    )


CHECK_SUITES = (
    "gradients",
    "reductions",
    "eta",
    "telescoping",
    "displacement",
)


def check(suite: str = "all", *, vhat_init: float | None = None) -> CheckResult:
    """Run the invariant check suite(s).

    `vhat_init` is a negative-control hook that corrupts the second-moment
    initialization of the eta/telescoping checks; production callers leave
    it None.
    """
    if suite != "all" and suite not in CHECK_SUITES:
        raise ConfigError(
            f"unknown check suite {suite!r}; expected 'all' or one of "
            f"{CHECK_SUITES}"
        )
    outcomes: list[CheckOutcome] = []
    wanted = CHECK_SUITES if suite == "all" else (suite,)
    for name in wanted:
        started = time.perf_counter()
        if name == "gradients":
            outcome = _check_gradient_oracle()
        elif name == "reductions":
            outcome = _check_reductions()
        elif name == "eta":
            outcome = _check_eta_bounds(vhat_init=vhat_init)
        elif name == "telescoping":
            outcome = _check_telescoping(vhat_init=vhat_init)
        else:
            outcome = _check_displacement()
        elapsed = time.perf_counter() - started
        outcomes.append(
            CheckOutcome(outcome.name, outcome.passed,
                         f"{outcome.detail} [{elapsed:.2f}s]")
        )
    return CheckResult(tuple(outcomes))
