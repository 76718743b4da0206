"""Runtime monitors for deterministic consequences of the convergence analysis.

Monitored facts, all checked per step while the running-max clamp is active:

* rate bounds: every coordinate of eta = 1/sqrt(v_hat) satisfies
  eta <= 1/epsilon (the clamp keeps v_hat >= epsilon^2) and
  eta >= 1/max(epsilon, G_run) where G_run is the running max sup-norm of
  observed gradients (v_hat can never exceed max(epsilon^2, G_run^2));
* monotonicity: each coordinate of eta is non-increasing;
* telescoping drift bound: because eta is per-coordinate non-increasing,
  sum_t ||eta_{t-1} - eta_t||_1 telescopes to
  sum_j (eta_{-1} - eta_{T-1})_j <= d * (1/epsilon - 1/max(epsilon, G_run)).

The bounds are evaluated against the running gradient maximum, the weakest
form that is correct at each step. A violation indicates an implementation
bug, so in strict (test) mode the ledger raises; in soft (release) mode it
counts violations instead. Without the max clamp eta is not monotone and
none of these bounds apply: the ledger then records sums but asserts
nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import EmptyTrajectoryError, InvariantViolationError
from .vectors import ParamVector, as_param_vector, dot, l1_norm, scale, subtract

if TYPE_CHECKING:
    from .optimizers import TrajectoryRecord

__all__ = [
    "ETA_BOUND_TOL",
    "TELESCOPING_TOL",
    "InvariantLedger",
    "update_ledger",
    "AuxSequencePoint",
    "aux_sequence",
    "displacement_rhs",
    "grad_norm_metric",
]

ETA_BOUND_TOL = 1e-12
TELESCOPING_TOL = 1e-9


@dataclass(frozen=True)
class InvariantLedger:
    """Running sums and extrema feeding the invariant checks.

    A ledger is a value: `update_ledger` returns a new one. One ledger per
    run; never shared across runs.
    """

    dim: int
    epsilon: float
    eta_l1_diff_sum: float = 0.0
    eta_l2sq_diff_sum: float = 0.0
    g_inf_max: float = 0.0
    steps: int = 0
    clamped: bool = True
    strict: bool = True
    violation_count: int = 0
    first_violation: str | None = None


def _violate(ledger: InvariantLedger, detail: str) -> InvariantLedger:
    if ledger.strict:
        raise InvariantViolationError(ledger.steps, detail)
    return replace(
        ledger,
        violation_count=ledger.violation_count + 1,
        first_violation=ledger.first_violation
        or f"step {ledger.steps}: {detail}",
    )


def update_ledger(
    ledger: InvariantLedger,
    eta_prev: ParamVector,
    eta_now: ParamVector,
    g_now: ParamVector,
) -> InvariantLedger:
    """Fold one step's rate vectors and gradient into the ledger.

    Accumulates the L1 and squared-L2 rate drifts and the running gradient
    sup-norm maximum, then (clamp active only) checks the rate bounds,
    monotonicity, and the telescoping bound. Violations raise in strict
    mode and are counted otherwise.
    """
    diff = subtract(eta_prev, eta_now)
    l1 = l1_norm(diff)
    l2sq = dot(diff, diff)
    g_inf = float(np.abs(g_now).max())
    updated = replace(
        ledger,
        eta_l1_diff_sum=ledger.eta_l1_diff_sum + l1,
        eta_l2sq_diff_sum=ledger.eta_l2sq_diff_sum + l2sq,
        g_inf_max=max(ledger.g_inf_max, g_inf),
        steps=ledger.steps + 1,
    )
    if not updated.clamped:
        return updated
    eps = updated.epsilon
    eta_cap = 1.0 / math.sqrt(eps * eps)
    eta_floor = 1.0 / max(eps, updated.g_inf_max)
    worst_high = float(eta_now.max())
    if worst_high > eta_cap + ETA_BOUND_TOL:
        updated = _violate(
            updated, f"eta upper bound: {worst_high!r} > 1/epsilon = {eta_cap!r}"
        )
    worst_low = float(eta_now.min())
    if worst_low < eta_floor - ETA_BOUND_TOL:
        updated = _violate(
            updated,
            f"eta lower bound: {worst_low!r} < 1/max(eps, G_run) = {eta_floor!r}",
        )
    rise = float((eta_now - eta_prev).max())
    if rise > ETA_BOUND_TOL:
        updated = _violate(updated, f"eta increased by {rise!r} in a coordinate")
    telescope_cap = updated.dim * (1.0 / eps - eta_floor)
    if updated.eta_l1_diff_sum > telescope_cap + TELESCOPING_TOL:
        updated = _violate(
            updated,
            f"telescoping bound: drift sum {updated.eta_l1_diff_sum!r} > "
            f"{telescope_cap!r}",
        )
    return updated


@dataclass(frozen=True)
class AuxSequencePoint:
    """Momentum-absorbing auxiliary point z = x + beta1/(1-beta1)*(x - x_prev)."""

    z: ParamVector


def aux_sequence(
    x_now: ParamVector, x_prev: ParamVector, beta1: float
) -> AuxSequencePoint:
    """Observational auxiliary sequence; with beta1 = 0, z equals x exactly."""
    if not 0 <= beta1 < 1:
        raise ValueError("beta1 must be in [0, 1)")
    if beta1 == 0.0:
        return AuxSequencePoint(as_param_vector(x_now))
    coef = beta1 / (1.0 - beta1)
    shift = scale(coef, subtract(x_now, x_prev))
    return AuxSequencePoint(as_param_vector(x_now + shift))


def displacement_rhs(
    m_prev: ParamVector,
    eta_prev: ParamVector,
    eta_now: ParamVector,
    g_now: ParamVector,
    gamma: float,
    beta1: float,
) -> ParamVector:
    """Predicted z_{t+1} - z_t from optimizer internals.

    The auxiliary sequence satisfies, as an algebraic identity of the
    update rule,

        z_{t+1} - z_t = beta1/(1-beta1) * gamma * m_{t-1} (.) (eta_{t-1} - eta_t)
                        - gamma * g_t (.) eta_t.
    """
    coef = beta1 / (1.0 - beta1)
    momentum_part = coef * gamma * (m_prev * (eta_prev - eta_now))
    grad_part = gamma * (g_now * eta_now)
    out = np.asarray(momentum_part - grad_part)
    out.setflags(write=False)
    return out


def grad_norm_metric(traj: Sequence["TrajectoryRecord"]) -> float:
    """Arithmetic mean of recorded squared full-gradient norms.

    Uses an exactly-rounded sum, so the result is independent of record
    order.
    """
    if len(traj) == 0:
        raise EmptyTrajectoryError("cannot average over an empty trajectory")
    return math.fsum(r.grad_norm_sq for r in traj) / len(traj)
