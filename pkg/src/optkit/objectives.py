"""Stochastic objectives with known smoothness/variance/gradient-bound constants.

Three problem families are provided, all built from an explicit integer seed
so every draw is reproducible across platforms (numpy PCG64 streams):

* stochastic quadratic -- the "theory instance". Per-sample losses are
  f_i(x) = 0.5*||x - c_i||^2 with centers c_i = center + noise_scale*u_i.
  The offsets u_i are seeded standard normals, re-centered to (near) zero
  mean and scaled to unit root-mean-square, so the gradient-noise variance
  equals noise_scale^2 up to rounding. Every constant is exact: L = 1,
  sigma^2 is the empirical center spread (constant in x), f* is the value
  at the mean center, and the sup-norm gradient bound G is reported over
  the declared trajectory box [-R, R]^d as R + max_i ||c_i||_inf.

* noisy Rosenbrock -- f(x1, x2) = (1 - x1)^2 + 100*(x2 - x1^2)^2 with
  per-sample linear tilts: f_id(x) = f(x) + n_id . x where n_id is a
  zero-mean Gaussian with per-coordinate std `noise_sigma` derived
  deterministically from the sample id. Tilting the loss (rather than
  adding noise only to the gradient) keeps gradients equal to the
  derivative of the sampled loss, so finite differences agree with
  batch_grad. Batch averaging over b samples scales the gradient-noise
  variance as sigma^2/b. The smoothness constant is a local bound on the
  box [-2, 2]^2: the Hessian has entries H11 = 2 - 400*x2 + 1200*x1^2,
  H12 = -400*x1, H22 = 200, so ||H||_inf <= max(5602 + 800, 800 + 200)
  = 6402 on the box. Gaussian tilts are unbounded, so no finite G exists.

* synthetic logistic regression -- binary logistic loss over a seeded
  near-separable dataset (labels from a random ground-truth direction with
  Gaussian margin noise). Per-sample Hessians are sig'(z) * a a^T with
  sig' <= 1/4, giving L = max_i ||a_i||^2 / 4; per-sample gradients are
  (sig(a_i . x) - y_i) * a_i with |sig - y| <= 1, giving the exact bound
  G = max_i ||a_i||_inf. sigma^2 is empirical, estimated at x = 0.

Mini-batches are sampled uniformly without replacement within a batch and
independently across steps. Gradient evaluation is pure given (x, batch);
all mutation lives in the caller-owned numpy Generator.
"""

from __future__ import annotations

import abc
import math
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import OptkitError
from .vectors import ParamVector, as_param_vector, zeros

__all__ = [
    "ObjectiveMeta",
    "MiniBatch",
    "StochasticObjective",
    "make_stochastic_quadratic",
    "make_noisy_rosenbrock",
    "make_synthetic_logreg",
    "make_objective",
    "finite_diff_grad",
    "OBJECTIVE_NAMES",
]


@dataclass(frozen=True)
class ObjectiveMeta:
    """Known problem constants.

    `grad_inf_bound_G` is None when no finite sup-norm gradient bound exists
    (unbounded noise); `optimum_value_fstar` is None when the optimum is
    unknown. `sigma2_empirical` marks variance values estimated from data
    rather than exact by construction; `smoothness_exact` marks L values
    that are exact rather than conservative local bounds.
    """

    dim: int
    smoothness_L: float
    grad_variance_sigma2: float
    grad_inf_bound_G: float | None
    optimum_value_fstar: float | None
    smoothness_exact: bool = False
    sigma2_empirical: bool = False

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.smoothness_L <= 0:
            raise ValueError("smoothness_L must be positive")
        if self.grad_variance_sigma2 < 0:
            raise ValueError("grad_variance_sigma2 must be nonnegative")


@dataclass(frozen=True, eq=False)
class MiniBatch:
    """A drawn mini-batch: sample identifiers plus its size."""

    indices: np.ndarray
    size: int

    def __post_init__(self) -> None:
        if self.size != self.indices.shape[0]:
            raise ValueError("size must equal the number of indices")
        if self.size < 1:
            raise ValueError("batch size must be >= 1")
        self.indices.setflags(write=False)

    @property
    def token(self) -> int:
        """Stable fingerprint used to assert same-batch discipline."""
        return zlib.crc32(self.indices.tobytes())


class StochasticObjective(abc.ABC):
    """A stochastic objective: batch sampling plus pure loss/gradient oracles.

    Objectives are immutable after construction. `batch_grad` and
    `batch_loss` are pure functions of (x, batch); `sample_batch` draws from
    the caller's Generator, which owns all RNG state.
    """

    meta: ObjectiveMeta
    n_samples: int | None  # None: infinite sample space
    box_radius: float | None  # declared trajectory box for reported bounds

    @abc.abstractmethod
    def sample_batch(self, rng: np.random.Generator, batch_size: int) -> MiniBatch:
        ...

    @abc.abstractmethod
    def batch_grad(self, x: ParamVector, batch: MiniBatch) -> ParamVector:
        ...

    @abc.abstractmethod
    def batch_loss(self, x: ParamVector, batch: MiniBatch) -> float:
        ...

    @abc.abstractmethod
    def full_grad(self, x: ParamVector) -> ParamVector:
        ...

    @abc.abstractmethod
    def full_loss(self, x: ParamVector) -> float:
        ...

    @abc.abstractmethod
    def default_start(self) -> ParamVector:
        """A sensible starting iterate for experiments."""

    def full_batch(self) -> MiniBatch:
        """The batch containing every sample, in natural order."""
        if self.n_samples is None:
            raise OptkitError("objective has an infinite sample space")
        return MiniBatch(np.arange(self.n_samples, dtype=np.int64), self.n_samples)

    def _check_batch_size(self, batch_size: int) -> None:
        if batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.n_samples is not None and batch_size > self.n_samples:
            raise ValueError(
                f"batch size {batch_size} exceeds sample count {self.n_samples}"
            )


class _StochasticQuadratic(StochasticObjective):
    def __init__(
        self,
        d: int,
        n_samples: int,
        noise_scale: float,
        seed: int,
        box_radius: float = 10.0,
        center: ParamVector | None = None,
    ) -> None:
        if d < 1:
            raise ValueError("d must be >= 1")
        if n_samples < 2:
            raise ValueError("n_samples must be >= 2 (variance undefined otherwise)")
        rng = np.random.default_rng(seed)
        raw = rng.standard_normal((n_samples, d))
        offsets = raw - raw.mean(axis=0)
        rms = math.sqrt(float((offsets**2).sum()) / n_samples)
        if rms == 0.0:
            raise OptkitError("degenerate center offsets (all samples identical)")
        offsets = offsets / rms
        cbar = zeros(d) if center is None else as_param_vector(center)
        centers = cbar + float(noise_scale) * offsets
        centers.setflags(write=False)
        self._centers = centers
        self._cbar = centers.mean(axis=0)
        self._cbar.setflags(write=False)
        # Per-sample gradient at any x is x - c_i, so the gradient-noise
        # variance is the center spread, constant in x.
        spread = float(((centers - self._cbar) ** 2).sum()) / n_samples
        self.n_samples = n_samples
        self.box_radius = float(box_radius)
        self.meta = ObjectiveMeta(
            dim=d,
            smoothness_L=1.0,
            grad_variance_sigma2=spread,
            grad_inf_bound_G=self.box_radius + float(np.abs(centers).max()),
            optimum_value_fstar=0.5 * spread,
            smoothness_exact=True,
        )

    @property
    def centers(self) -> np.ndarray:
        return self._centers

    @property
    def mean_center(self) -> ParamVector:
        return self._cbar

    def sample_batch(self, rng: np.random.Generator, batch_size: int) -> MiniBatch:
        self._check_batch_size(batch_size)
        idx = rng.choice(self.n_samples, size=batch_size, replace=False)
        return MiniBatch(idx.astype(np.int64), batch_size)

    def batch_grad(self, x: ParamVector, batch: MiniBatch) -> ParamVector:
        mu = self._centers[batch.indices].mean(axis=0)
        out = x - mu
        out.setflags(write=False)
        return out

    def batch_loss(self, x: ParamVector, batch: MiniBatch) -> float:
        diffs = x - self._centers[batch.indices]
        return 0.5 * float((diffs**2).sum(axis=1).mean())

    def full_grad(self, x: ParamVector) -> ParamVector:
        out = x - self._cbar
        out.setflags(write=False)
        return out

    def full_loss(self, x: ParamVector) -> float:
        diff = x - self._cbar
        return 0.5 * float(diff @ diff) + 0.5 * self.meta.grad_variance_sigma2

    def default_start(self) -> ParamVector:
        out = self._cbar + 3.0
        out.setflags(write=False)
        return out


class _NoisyRosenbrock(StochasticObjective):
    # Smoothness bound on the box [-2, 2]^2; see module docstring.
    L_BOX = 6402.0

    def __init__(self, seed: int, noise_sigma: float) -> None:
        if noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        self._seed = int(seed)
        self._noise_sigma = float(noise_sigma)
        self.n_samples = None
        self.box_radius = 2.0
        self.meta = ObjectiveMeta(
            dim=2,
            smoothness_L=self.L_BOX,
            grad_variance_sigma2=2.0 * noise_sigma**2,
            grad_inf_bound_G=None,  # Gaussian tilts are unbounded
            optimum_value_fstar=0.0,
        )

    def sample_batch(self, rng: np.random.Generator, batch_size: int) -> MiniBatch:
        self._check_batch_size(batch_size)
        ids = rng.integers(0, 2**63, size=batch_size, dtype=np.int64)
        return MiniBatch(ids, batch_size)

    def _tilt(self, batch: MiniBatch) -> np.ndarray:
        """Mean of the per-sample linear tilt vectors, derived from ids."""
        if self._noise_sigma == 0.0:
            return np.zeros(2)
        total = np.zeros(2)
        for sample_id in batch.indices.tolist():
            noise_rng = np.random.default_rng([self._seed, sample_id])
            total += noise_rng.standard_normal(2)
        return (self._noise_sigma / batch.size) * total

    def batch_grad(self, x: ParamVector, batch: MiniBatch) -> ParamVector:
        out = np.asarray(self.full_grad(x) + self._tilt(batch))
        out.setflags(write=False)
        return out

    def batch_loss(self, x: ParamVector, batch: MiniBatch) -> float:
        tilt = self._tilt(batch)
        return self.full_loss(x) + float(tilt[0] * x[0] + tilt[1] * x[1])

    def full_grad(self, x: ParamVector) -> ParamVector:
        x1, x2 = float(x[0]), float(x[1])
        g1 = -2.0 * (1.0 - x1) - 400.0 * x1 * (x2 - x1 * x1)
        g2 = 200.0 * (x2 - x1 * x1)
        out = np.array([g1, g2])
        out.setflags(write=False)
        return out

    def full_loss(self, x: ParamVector) -> float:
        x1, x2 = float(x[0]), float(x[1])
        return (1.0 - x1) ** 2 + 100.0 * (x2 - x1 * x1) ** 2

    def default_start(self) -> ParamVector:
        return as_param_vector([-1.2, 1.0])


class _SyntheticLogreg(StochasticObjective):
    def __init__(
        self, d: int, n_samples: int, seed: int, margin_noise: float = 0.1
    ) -> None:
        if d < 1:
            raise ValueError("d must be >= 1")
        if n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        rng = np.random.default_rng(seed)
        features = rng.standard_normal((n_samples, d))
        direction = rng.standard_normal(d)
        direction /= math.sqrt(float(direction @ direction))
        margins = features @ direction + margin_noise * rng.standard_normal(n_samples)
        labels = (margins > 0).astype(np.float64)
        features.setflags(write=False)
        labels.setflags(write=False)
        self._features = features
        self._labels = labels
        self.n_samples = n_samples
        self.box_radius = None
        row_norms_sq = (features**2).sum(axis=1)
        sigma2 = self._gradient_spread_at_zero()
        self.meta = ObjectiveMeta(
            dim=d,
            smoothness_L=0.25 * float(row_norms_sq.max()),
            grad_variance_sigma2=sigma2,
            grad_inf_bound_G=float(np.abs(features).max()),
            optimum_value_fstar=None,
            sigma2_empirical=True,
        )

    def _gradient_spread_at_zero(self) -> float:
        # grad f_i(0) = (1/2 - y_i) a_i; spread around the full gradient.
        per_sample = (0.5 - self._labels)[:, None] * self._features
        mean = per_sample.mean(axis=0)
        return float(((per_sample - mean) ** 2).sum()) / self.n_samples

    @staticmethod
    def _sigmoid(z: np.ndarray) -> np.ndarray:
        # Overflow-safe logistic function.
        return 0.5 * (1.0 + np.tanh(0.5 * z))

    def sample_batch(self, rng: np.random.Generator, batch_size: int) -> MiniBatch:
        self._check_batch_size(batch_size)
        idx = rng.choice(self.n_samples, size=batch_size, replace=False)
        return MiniBatch(idx.astype(np.int64), batch_size)

    def batch_grad(self, x: ParamVector, batch: MiniBatch) -> ParamVector:
        rows = self._features[batch.indices]
        y = self._labels[batch.indices]
        z = rows @ x
        out = np.asarray(((self._sigmoid(z) - y)[:, None] * rows).mean(axis=0))
        out.setflags(write=False)
        return out

    def batch_loss(self, x: ParamVector, batch: MiniBatch) -> float:
        rows = self._features[batch.indices]
        y = self._labels[batch.indices]
        z = rows @ x
        return float((np.logaddexp(0.0, z) - y * z).mean())

    def full_grad(self, x: ParamVector) -> ParamVector:
        return self.batch_grad(x, self.full_batch())

    def full_loss(self, x: ParamVector) -> float:
        return self.batch_loss(x, self.full_batch())

    def default_start(self) -> ParamVector:
        return zeros(self.meta.dim)


def make_stochastic_quadratic(
    d: int,
    n_samples: int,
    noise_scale: float,
    seed: int,
    box_radius: float = 10.0,
) -> StochasticObjective:
    """Finite-sum quadratic with exact constants (see module docstring)."""
    return _StochasticQuadratic(d, n_samples, noise_scale, seed, box_radius)


def make_noisy_rosenbrock(seed: int, noise_sigma: float) -> StochasticObjective:
    """Non-convex 2-d test function with seeded Gaussian gradient tilts."""
    return _NoisyRosenbrock(seed, noise_sigma)


def make_synthetic_logreg(
    d: int, n_samples: int, seed: int, margin_noise: float = 0.1
) -> StochasticObjective:
    """Binary logistic loss over a seeded near-separable dataset."""
    return _SyntheticLogreg(d, n_samples, seed, margin_noise)


OBJECTIVE_NAMES = ("quadratic", "rosenbrock", "logreg")


def make_objective(name: str, params: dict) -> StochasticObjective:
    """Construct an objective by config name with keyword parameters."""
    if name == "quadratic":
        return _StochasticQuadratic(**params)
    if name == "rosenbrock":
        return _NoisyRosenbrock(**params)
    if name == "logreg":
        return _SyntheticLogreg(**params)
    raise OptkitError(f"unknown objective {name!r}; expected one of {OBJECTIVE_NAMES}")


def finite_diff_grad(
    obj: StochasticObjective, x: ParamVector, batch: MiniBatch, h: float
) -> ParamVector:
    """Central-difference gradient of batch_loss on a fixed batch."""
    if h <= 0:
        raise ValueError("h must be positive")
    base = np.asarray(x, dtype=np.float64)
    out = np.empty_like(base)
    for j in range(base.shape[0]):
        plus = base.copy()
        minus = base.copy()
        plus[j] += h
        minus[j] -= h
        out[j] = (obj.batch_loss(plus, batch) - obj.batch_loss(minus, batch)) / (2 * h)
    out.setflags(write=False)
    return out
