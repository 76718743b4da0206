"""SAM-family optimizer steps and the seeded run loop.

One shared transition implements all four optimizers so that the degenerate
reductions are bit-exact on a fixed platform:

* adasam  -- perturbed gradient, momentum, adaptive per-coordinate rate
             1/sqrt(v_hat) with optional running-max clamp on v_hat;
* amsgrad -- adasam with the perturbation stage removed;
* sam     -- perturbed gradient + momentum, plain learning rate;
* sgd     -- momentum only (beta1 = 0 gives vanilla SGD).

Every step is a pure transition (state, batch) -> (state, report); a single
run is sequential by definition, and independent runs share nothing.

The per-step recipe (perturb + adaptive case):

    s = batch_grad(x, B)
    delta = rho * s / ||s||          (zero and flagged if ||s|| < floor)
    g = batch_grad(x + delta, B)     (same batch B for both evaluations)
    m = beta1 * m + (1 - beta1) * g
    v = beta2 * v + (1 - beta2) * g*g
    v_hat = max(v_hat, v)            (clamp optional)
    eta = 1 / sqrt(v_hat)
    x <- x - gamma * (m * eta)

There is no bias correction and epsilon enters only through the v/v_hat
initialization to epsilon^2, so eta <= 1/epsilon holds exactly and setting
beta2 = 1 reproduces sam at learning rate gamma/epsilon.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .diagnostics import InvariantLedger, update_ledger
from .errors import NonFiniteGradientError, OptkitError
from .objectives import MiniBatch, StochasticObjective
from .vectors import (
    ParamVector,
    add,
    as_param_vector,
    axpy,
    dot,
    elementwise_max,
    elementwise_sqrt,
    filled,
    first_nonfinite_index,
    hadamard,
    l2_norm,
    reciprocal,
    scale,
    zeros,
)

__all__ = [
    "OptimizerConfig",
    "OptimizerState",
    "StepReport",
    "TrajectoryRecord",
    "OPTIMIZER_KINDS",
    "initial_state",
    "eta_of",
    "sam_perturbation",
    "adasam_step",
    "amsgrad_step",
    "sam_step",
    "sgd_step",
    "iterate",
    "run",
]


@dataclass(frozen=True)
class OptimizerConfig:
    """Hyperparameters shared by all optimizer kinds.

    `epsilon` initializes the second-moment buffers to epsilon^2; it is not
    an additive denominator term. `perturb_norm_floor` guards the
    perturbation's division by ||s||: below the floor the perturbation is
    skipped (zero vector), which keeps the rho = 0 reduction exact and
    matches the closed-form maximizer becoming vacuous at a stationary
    point. `rho_schedule`, when set, overrides `rho` per step; the default
    is a constant neighborhood size.
    """

    gamma: float
    rho: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-4
    use_max_clamp: bool = True
    perturb_norm_floor: float = 1e-12
    rho_schedule: Callable[[int], float] | None = None

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if not 0 <= self.beta1 < 1:
            raise ValueError("beta1 must be in [0, 1)")
        if not 0 <= self.beta2 <= 1:
            raise ValueError("beta2 must be in [0, 1]")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.perturb_norm_floor > 0:
            raise ValueError("perturb_norm_floor must be positive")

    def rho_at(self, t: int) -> float:
        if self.rho_schedule is None:
            return self.rho
        return float(self.rho_schedule(t))


@dataclass(frozen=True)
class OptimizerState:
    """Iterate and moment buffers after `t` completed steps.

    `x_prev` is the previous iterate, kept for the momentum auxiliary
    sequence; before any step it equals `x` (no step taken yet), which is
    exactly the initialization under which the displacement identity holds
    from the first step.
    """

    x: ParamVector
    m: ParamVector
    v: ParamVector
    v_hat: ParamVector
    t: int
    x_prev: ParamVector

    @property
    def dim(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class StepReport:
    """Observables of one step: gradients, the rate vector, and flags."""

    sam_grad: ParamVector  # gradient at the perturbed point (g)
    pre_perturb_grad: ParamVector  # gradient at the iterate (s)
    eta: ParamVector  # 1/sqrt(v_hat) after the step
    perturbation_skipped: bool
    batch_token: int


def initial_state(
    x0: ParamVector, cfg: OptimizerConfig, *, vhat_init: float | None = None
) -> OptimizerState:
    """Fresh state: zero momentum, second moments at epsilon^2.

    `vhat_init` is a test hook that overrides the epsilon^2 initialization
    of both second-moment buffers (used by negative-control checks); leave
    it None in real runs.
    """
    x = as_param_vector(x0)
    init = cfg.epsilon * cfg.epsilon if vhat_init is None else float(vhat_init)
    return OptimizerState(
        x=x,
        m=zeros(x.shape[0]),
        v=filled(x.shape[0], init),
        v_hat=filled(x.shape[0], init),
        t=0,
        x_prev=x,
    )


def eta_of(state: OptimizerState) -> ParamVector:
    """The per-coordinate rate vector 1/sqrt(v_hat) for a state."""
    return reciprocal(elementwise_sqrt(state.v_hat))


def sam_perturbation(
    s: ParamVector, rho: float, floor: float
) -> tuple[ParamVector, bool]:
    """Ascent step rho * s/||s||, or (zeros, True) when ||s|| < floor."""
    if not floor > 0:
        raise ValueError("floor must be positive")
    norm = l2_norm(s)
    if norm < floor:
        return zeros(s.shape[0]), True
    return scale(rho / norm, s), False


def _checked_grad(
    obj: StochasticObjective, x: ParamVector, batch: MiniBatch, step: int
) -> ParamVector:
    g = obj.batch_grad(x, batch)
    bad = first_nonfinite_index(g)
    if bad is not None:
        raise NonFiniteGradientError(step, bad)
    return g


def _transition(
    state: OptimizerState,
    cfg: OptimizerConfig,
    obj: StochasticObjective,
    batch: MiniBatch,
    *,
    perturb: bool,
    adaptive: bool,
) -> tuple[OptimizerState, StepReport]:
    s = _checked_grad(obj, state.x, batch, state.t)
    skipped = False
    g = s
    if perturb:
        rho_t = cfg.rho_at(state.t)
        delta, skipped = sam_perturbation(s, rho_t, cfg.perturb_norm_floor)
        # A zero perturbation must reproduce the unperturbed gradient
        # bit-for-bit, so the second evaluation is elided in that case.
        if not skipped and rho_t != 0.0:
            g = _checked_grad(obj, add(state.x, delta), batch, state.t)
    m = add(scale(cfg.beta1, state.m), scale(1.0 - cfg.beta1, g))
    if adaptive:
        v = add(scale(cfg.beta2, state.v), scale(1.0 - cfg.beta2, hadamard(g, g)))
        v_hat = elementwise_max(state.v_hat, v) if cfg.use_max_clamp else v
        eta = reciprocal(elementwise_sqrt(v_hat))
        x_new = axpy(-cfg.gamma, hadamard(m, eta), state.x)
    else:
        v = state.v
        v_hat = state.v_hat
        eta = reciprocal(elementwise_sqrt(v_hat))
        x_new = axpy(-cfg.gamma, m, state.x)
    new_state = OptimizerState(
        x=x_new, m=m, v=v, v_hat=v_hat, t=state.t + 1, x_prev=state.x
    )
    report = StepReport(
        sam_grad=g,
        pre_perturb_grad=s,
        eta=eta,
        perturbation_skipped=skipped,
        batch_token=batch.token,
    )
    return new_state, report


def adasam_step(state, cfg, obj, batch):
    """One step of the full algorithm: perturbation + momentum + adaptive rate."""
    return _transition(state, cfg, obj, batch, perturb=True, adaptive=True)


def amsgrad_step(state, cfg, obj, batch):
    """adasam with the perturbation stage removed."""
    return _transition(state, cfg, obj, batch, perturb=False, adaptive=True)


def sam_step(state, cfg, obj, batch):
    """Perturbed gradient with momentum, plain learning rate."""
    return _transition(state, cfg, obj, batch, perturb=True, adaptive=False)


def sgd_step(state, cfg, obj, batch):
    """Momentum SGD baseline (beta1 = 0 gives vanilla SGD)."""
    return _transition(state, cfg, obj, batch, perturb=False, adaptive=False)


# kind -> (perturb, adaptive)
OPTIMIZER_KINDS: dict[str, tuple[bool, bool]] = {
    "adasam": (True, True),
    "amsgrad": (False, True),
    "sam": (True, False),
    "sgd": (False, False),
}


def _kind_flags(optimizer_kind: str) -> tuple[bool, bool]:
    try:
        return OPTIMIZER_KINDS[optimizer_kind]
    except KeyError:
        raise OptkitError(
            f"unknown optimizer kind {optimizer_kind!r}; "
            f"expected one of {sorted(OPTIMIZER_KINDS)}"
        ) from None


def iterate(
    optimizer_kind: str,
    cfg: OptimizerConfig,
    obj: StochasticObjective,
    steps: int,
    batch_size: int,
    seed: int,
    *,
    x0: ParamVector | None = None,
    vhat_init: float | None = None,
) -> Iterator[tuple[OptimizerState, StepReport]]:
    """Yield (state after step, report) for t = 0..steps-1, deterministically."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    perturb, adaptive = _kind_flags(optimizer_kind)
    start = obj.default_start() if x0 is None else as_param_vector(x0)
    if start.shape[0] != obj.meta.dim:
        raise ValueError(
            f"x0 has dimension {start.shape[0]}, objective expects {obj.meta.dim}"
        )
    state = initial_state(start, cfg, vhat_init=vhat_init)
    rng = np.random.default_rng(seed)
    for _ in range(steps):
        batch = obj.sample_batch(rng, batch_size)
        state, report = _transition(
            state, cfg, obj, batch, perturb=perturb, adaptive=adaptive
        )
        yield state, report


@dataclass(frozen=True)
class TrajectoryRecord:
    """Per-step log entry; metrics are evaluated at the pre-step iterate."""

    step: int
    loss: float
    grad_norm_sq: float
    eta_min: float
    eta_max: float
    eta_l1_diff_sum: float
    perturb_skipped: bool
    outside_box: bool = False


def run(
    optimizer_kind: str,
    cfg: OptimizerConfig,
    obj: StochasticObjective,
    steps: int,
    batch_size: int,
    seed: int,
    *,
    x0: ParamVector | None = None,
    strict_invariants: bool = True,
    record_stride: int = 1,
    vhat_init: float | None = None,
) -> list[TrajectoryRecord]:
    """Run `steps` seeded optimizer steps, monitoring invariants throughout.

    Deterministic given all arguments. Records the full-objective loss and
    squared gradient norm of each visited iterate, the extrema of the rate
    vector, and the running rate-drift sum from the invariant ledger. With
    `record_stride > 1` only every stride-th step (plus the last) is
    recorded; monitoring still runs every step.

    With `strict_invariants` the ledger raises on any violated bound
    (hard / test mode); otherwise violations are counted on the ledger
    (soft / release mode). `vhat_init` is the negative-control test hook of
    `initial_state`.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if record_stride < 1:
        raise ValueError("record_stride must be >= 1")
    perturb, adaptive = _kind_flags(optimizer_kind)
    start = obj.default_start() if x0 is None else as_param_vector(x0)
    if start.shape[0] != obj.meta.dim:
        raise ValueError(
            f"x0 has dimension {start.shape[0]}, objective expects {obj.meta.dim}"
        )
    state = initial_state(start, cfg, vhat_init=vhat_init)
    eta_prev = eta_of(state)
    ledger = InvariantLedger(
        dim=state.dim,
        epsilon=cfg.epsilon,
        clamped=adaptive and cfg.use_max_clamp,
        strict=strict_invariants,
    )
    rng = np.random.default_rng(seed)
    records: list[TrajectoryRecord] = []
    for t in range(steps):
        x_t = state.x
        loss = obj.full_loss(x_t)
        g_full = obj.full_grad(x_t)
        grad_norm_sq = dot(g_full, g_full)
        batch = obj.sample_batch(rng, batch_size)
        state, report = _transition(
            state, cfg, obj, batch, perturb=perturb, adaptive=adaptive
        )
        ledger = update_ledger(ledger, eta_prev, report.eta, report.sam_grad)
        if t % record_stride == 0 or t == steps - 1:
            outside = (
                obj.box_radius is not None
                and float(np.abs(x_t).max()) > obj.box_radius
            )
            records.append(
                TrajectoryRecord(
                    step=t,
                    loss=loss,
                    grad_norm_sq=grad_norm_sq,
                    eta_min=float(report.eta.min()),
                    eta_max=float(report.eta.max()),
                    eta_l1_diff_sum=ledger.eta_l1_diff_sum,
                    perturb_skipped=report.perturbation_skipped,
                    outside_box=outside,
                )
            )
        eta_prev = report.eta
    return records
