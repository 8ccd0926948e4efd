"""Shared domain types and angle-aware state arithmetic.

Poses live in (x, y, theta) with theta kept in (-pi, pi]. Query points
concatenate a pose with an environmental feature vector; distances between
them are taken in per-dimension z-scored coordinates so that meters and
radians are commensurate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

# index of the heading coordinate inside a pose / query vector
THETA_DIM = 2
STATE_DIM = 3


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    if not math.isfinite(a):
        raise ValueError(f"angle must be finite, got {a!r}")
    return a - TWO_PI * math.ceil((a - math.pi) / TWO_PI)


def wrap_angle_array(a: np.ndarray) -> np.ndarray:
    """Vectorized wrap_angle; input must be finite."""
    a = np.asarray(a, dtype=float)
    return a - TWO_PI * np.ceil((a - math.pi) / TWO_PI)


@dataclass(frozen=True)
class State:
    """Planar pose; theta is wrapped to (-pi, pi] on construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=float)


@dataclass(frozen=True)
class Action:
    """Discrete control: commanded linear and angular speed."""

    id: int
    v: float
    omega: float


@dataclass(frozen=True)
class StateShift:
    """Pose difference with the angular component wrapped."""

    dx: float
    dy: float
    dtheta: float

    def __post_init__(self):
        object.__setattr__(self, "dtheta", wrap_angle(float(self.dtheta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dtheta], dtype=float)


def state_shift(s: State, s_next: State) -> StateShift:
    """Componentwise difference; the heading takes the shortest signed path."""
    return StateShift(
        s_next.x - s.x,
        s_next.y - s.y,
        wrap_angle(s_next.theta - s.theta),
    )


def advance(s: State, delta: StateShift) -> State:
    """Apply a shift to a pose (inverse of state_shift for |dtheta| < pi)."""
    return State(s.x + delta.dx, s.y + delta.dy, wrap_angle(s.theta + delta.dtheta))


@dataclass(frozen=True)
class QueryPoint:
    """A pose paired with the environmental feature observed there, u = (s, c)."""

    state: State
    feature: tuple[float, ...]

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.state.as_array(), np.asarray(self.feature, dtype=float)])


@dataclass(frozen=True)
class Sample:
    """One logged transition; delta is cached from (state, next_state)."""

    u: QueryPoint
    action_id: int
    next_state: State
    delta: StateShift = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "delta", state_shift(self.u.state, self.next_state))


@dataclass(frozen=True)
class FeatureScaler:
    """Per-dimension mean and scale of query vectors; zero-variance dims get scale 1."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, vectors: np.ndarray) -> "FeatureScaler":
        vectors = np.asarray(vectors, dtype=float)
        mean = vectors.mean(axis=0)
        scale = vectors.std(axis=0)
        scale = np.where(scale > 0.0, scale, 1.0)
        return cls(mean=mean, scale=scale)


class Dataset:
    """Ordered collection of samples with cached arrays for vectorized queries.

    Attributes:
        samples: the ordered Sample list.
        U: (n, d) raw query vectors.
        deltas: (n, 3) observed state shifts.
        action_ids: (n,) int array.
        scaler: FeatureScaler fitted on U.
        episodes, steps: optional per-sample collection metadata.
    """

    def __init__(self, samples: list[Sample], episodes=None, steps=None):
        if not samples:
            raise ValueError("dataset must contain at least one sample")
        self.samples = list(samples)
        self.U = np.stack([s.u.as_vector() for s in self.samples])
        self.deltas = np.stack([s.delta.as_array() for s in self.samples])
        self.action_ids = np.array([s.action_id for s in self.samples], dtype=int)
        self.scaler = FeatureScaler.fit(self.U)
        n = len(self.samples)
        self.episodes = np.zeros(n, dtype=int) if episodes is None else np.asarray(episodes, dtype=int)
        self.steps = np.arange(n, dtype=int) if steps is None else np.asarray(steps, dtype=int)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def dim(self) -> int:
        return self.U.shape[1]


def standardized_diffs(U: np.ndarray, u: np.ndarray, scaler: FeatureScaler) -> np.ndarray:
    """Z-scored differences U[i] - u with the heading dimension wrapped.

    U may be (n, d) or (d,); result has the same leading shape.
    """
    U = np.asarray(U, dtype=float)
    u = np.asarray(u, dtype=float)
    if U.shape[-1] != u.shape[-1] or u.shape[-1] != scaler.mean.shape[0]:
        raise ValueError(
            f"dimension mismatch: U has {U.shape[-1]}, query has {u.shape[-1]}, "
            f"scaler has {scaler.mean.shape[0]}"
        )
    diff = U - u
    if U.ndim == 1:
        diff[THETA_DIM] = wrap_angle(diff[THETA_DIM])
    else:
        diff[..., THETA_DIM] = wrap_angle_array(diff[..., THETA_DIM])
    return diff / scaler.scale


def standardized_distance(u1: QueryPoint, u2: QueryPoint, scaler: FeatureScaler) -> float:
    """Euclidean norm of the z-scored difference between two query points."""
    z = standardized_diffs(u1.as_vector(), u2.as_vector(), scaler)
    return float(np.linalg.norm(z))


def build_action_grid(vs, omegas) -> list[Action]:
    """Cartesian action set over linear and angular speeds, ids in row-major order."""
    actions = []
    for v in vs:
        for w in omegas:
            actions.append(Action(id=len(actions), v=float(v), omega=float(w)))
    return actions
