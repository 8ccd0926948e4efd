"""Cross-terrain elliptical-track driving simulator.

The track centerline is an ellipse split into angular segments of ice,
concrete and pebbles. Dynamics are a discrete unicycle whose commanded
speeds are attenuated by the local slip coefficient and perturbed by
Gaussian noise that grows on low-slip terrain at speed, which is what makes
fast driving on ice genuinely dangerous. Data collection supports a biased
(safety-overridden) logging policy and a uniformly randomized one; rollouts
report progress reward and action statistics.

Positions use the parametric projection phi(x, y) = atan2((y-cy)/b,
(x-cx)/a); progress is the signed arc length of the centerline between the
projections of consecutive states (midpoint quadrature, exactly
antisymmetric under swapping endpoints).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from causalnav.core import (
    Action,
    Dataset,
    QueryPoint,
    Sample,
    State,
    build_action_grid,
    wrap_angle,
    wrap_angle_array,
)

TWO_PI = 2.0 * math.pi

ICE = "ice"
CONCRETE = "concrete"
PEBBLES = "pebbles"
TERRAIN_CLASSES = (ICE, CONCRETE, PEBBLES)

DEFAULT_SLIPS = {ICE: 0.1, PEBBLES: 0.5, CONCRETE: 0.9}

# aggressive action set: large linear and angular speed simultaneously
AGGRESSIVE_V = 6.0
AGGRESSIVE_OMEGA = math.pi / 2.0


def default_actions() -> list[Action]:
    """5 linear x 7 angular speeds; spans both aggressive and safe regimes."""
    omegas = [k * math.pi / 4.0 for k in (-3, -2, -1, 0, 1, 2, 3)]
    return build_action_grid([0.0, 2.0, 4.0, 6.0, 8.0], omegas)


def is_aggressive(action: Action) -> bool:
    return action.v >= AGGRESSIVE_V - 1e-9 and abs(action.omega) >= AGGRESSIVE_OMEGA - 1e-9


def most_conservative(actions) -> Action:
    """Minimum linear speed, then minimum |angular speed|, then lowest id."""
    return min(actions, key=lambda a: (a.v, abs(a.omega), a.id))


@dataclass(frozen=True)
class TerrainSegment:
    start: float  # angular extent [start, end) in [0, 2*pi)
    end: float
    terrain: str
    slip: float


@dataclass(frozen=True)
class TerrainTrack:
    """Elliptical centerline with per-angular-segment terrain."""

    center: tuple[float, float]
    a: float
    b: float
    half_width: float
    segments: tuple[TerrainSegment, ...]
    ice_coverage: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0 or self.half_width <= 0:
            raise ValueError("ellipse axes and half width must be positive")
        segs = self.segments
        if not segs or abs(segs[0].start) > 1e-12 or abs(segs[-1].end - TWO_PI) > 1e-9:
            raise ValueError("segments must partition [0, 2*pi)")
        ice_arc = 0.0
        for i, s in enumerate(segs):
            if s.end <= s.start:
                raise ValueError("segments must have positive width")
            if i and abs(s.start - segs[i - 1].end) > 1e-9:
                raise ValueError("segments must be contiguous")
            if not (0.0 < s.slip <= 1.0):
                raise ValueError("slip must lie in (0, 1]")
            if s.terrain not in TERRAIN_CLASSES:
                raise ValueError(f"unknown terrain {s.terrain!r}")
            if s.terrain == ICE:
                ice_arc += s.end - s.start
        if abs(ice_arc / TWO_PI - self.ice_coverage) > 1e-6:
            raise ValueError(
                f"ice arc fraction {ice_arc / TWO_PI:.8f} != coverage {self.ice_coverage}"
            )
        object.__setattr__(self, "_starts", np.array([s.start for s in segs]))
        object.__setattr__(self, "_slips", np.array([s.slip for s in segs]))
        object.__setattr__(self, "_terrains", [s.terrain for s in segs])


def make_elliptical_track(
    ice_coverage: float,
    n_ice_patches: int = 4,
    a: float = 6.0,
    b: float = 4.0,
    half_width: float = 2.0,
    center=(0.0, 0.0),
    slips: dict | None = None,
) -> TerrainTrack:
    """Track with n evenly spaced ice patches totalling the requested coverage.

    Each angular slot of width 2*pi/n holds concrete, then ice, then pebbles;
    the ice sub-arc is coverage * slot width so total ice arc is exact.
    """
    if not (0.0 <= ice_coverage <= 1.0):
        raise ValueError("ice coverage must lie in [0, 1]")
    if n_ice_patches < 1:
        raise ValueError("need at least one slot")
    slips = {**DEFAULT_SLIPS, **(slips or {})}
    w = TWO_PI / n_ice_patches
    wi = ice_coverage * w
    side = 0.5 * (w - wi)
    segs = []
    for j in range(n_ice_patches):
        s0 = j * w
        bounds = [
            (s0, s0 + side, CONCRETE),
            (s0 + side, s0 + side + wi, ICE),
            (s0 + side + wi, s0 + w, PEBBLES),
        ]
        for lo, hi, terrain in bounds:
            if hi - lo > 1e-12:
                segs.append(TerrainSegment(lo, hi, terrain, slips[terrain]))
    # snap the final end to exactly 2*pi
    last = segs[-1]
    segs[-1] = TerrainSegment(last.start, TWO_PI, last.terrain, last.slip)
    return TerrainTrack(
        center=tuple(center),
        a=float(a),
        b=float(b),
        half_width=float(half_width),
        segments=tuple(segs),
        ice_coverage=float(ice_coverage),
    )


@dataclass(frozen=True)
class VehicleParams:
    """Unicycle step parameters; the noise law couples slip and commanded speed."""

    dt: float = 0.1
    base_noise: tuple[float, float, float] = (0.05, 0.05, 0.04)
    slip_noise_gain: float = 1.0
    speed_attenuation: float = 0.5
    off_track_penalty: float = 4.0
    off_track_cap: float = 3.0  # meters of excess distance counted by the penalty

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if any(v < 0 for v in self.base_noise):
            raise ValueError("noise scales must be >= 0")
        if not (0.0 <= self.speed_attenuation <= 1.0):
            raise ValueError("speed attenuation must lie in [0, 1]")
        if self.off_track_cap <= 0:
            raise ValueError("off_track_cap must be positive")


# ---------------------------------------------------------------- geometry


def param_angle(x, y, track: TerrainTrack):
    """Parametric projection angle of (x, y) onto the centerline ellipse."""
    cx, cy = track.center
    return np.arctan2((np.asarray(y) - cy) / track.b, (np.asarray(x) - cx) / track.a)


def centerline_point(phi, track: TerrainTrack):
    cx, cy = track.center
    return cx + track.a * np.cos(phi), cy + track.b * np.sin(phi)


def tangent_heading(phi, track: TerrainTrack):
    """Heading of counterclockwise travel at centerline parameter phi."""
    return np.arctan2(track.b * np.cos(phi), -track.a * np.sin(phi))


def param_speed(phi, track: TerrainTrack):
    """|d centerline / d phi|: converts parameter increments to arc length."""
    return np.sqrt((track.a * np.sin(phi)) ** 2 + (track.b * np.cos(phi)) ** 2)


def signed_distance(x, y, track: TerrainTrack):
    """Distance to the projected centerline point, positive outside the ellipse."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    cx, cy = track.center
    phi = param_angle(x, y, track)
    px, py = centerline_point(phi, track)
    d = np.hypot(x - px, y - py)
    inside = ((x - cx) / track.a) ** 2 + ((y - cy) / track.b) ** 2 < 1.0
    return np.where(inside, -d, d)


def progress(phi1, phi2, track: TerrainTrack):
    """Signed centerline arc length from phi1 to phi2 (shortest angular path)."""
    dphi = wrap_angle_array(np.asarray(phi2, dtype=float) - np.asarray(phi1, dtype=float))
    return dphi * param_speed(np.asarray(phi1, dtype=float) + 0.5 * dphi, track)


def terrain_lookup(x, y, track: TerrainTrack):
    """(segment index array, slip array, signed distance array) at positions."""
    phi = param_angle(x, y, track)
    phi_mod = np.mod(phi, TWO_PI)
    idx = np.searchsorted(track._starts, phi_mod, side="right") - 1
    return idx, track._slips[idx], signed_distance(x, y, track)


def terrain_at(x: float, y: float, track: TerrainTrack):
    """(terrain class, slip, context feature) at a position."""
    idx, slip, dist = terrain_lookup(np.asarray([x]), np.asarray([y]), track)
    return track._terrains[int(idx[0])], float(slip[0]), (float(slip[0]), float(dist[0]))


def centerline_state(track: TerrainTrack, phi: float, lateral: float = 0.0) -> State:
    """Pose on (or laterally offset from) the centerline, heading tangent."""
    px, py = centerline_point(phi, track)
    d = np.hypot(track.a * np.sin(phi), track.b * np.cos(phi))
    # outward normal direction
    nx, ny = track.b * np.cos(phi) / d, track.a * np.sin(phi) / d
    return State(px + lateral * nx, py + lateral * ny, float(tangent_heading(phi, track)))


# ---------------------------------------------------------------- dynamics


def step_batch(xs, ys, ths, v, omega, track, params: VehicleParams, rng):
    """Vectorized stochastic unicycle step; returns (nx, ny, nth) arrays."""
    xs = np.asarray(xs, dtype=float)
    _, slip, _ = terrain_lookup(xs, ys, track)
    factor = 1.0 - params.speed_attenuation * (1.0 - slip)
    v_eff = np.asarray(v) * factor
    om_eff = np.asarray(omega) * factor
    nx = xs + v_eff * np.cos(ths) * params.dt
    ny = ys + v_eff * np.sin(ths) * params.dt
    nth = ths + om_eff * params.dt
    scale = 1.0 + params.slip_noise_gain * (1.0 - slip) * np.abs(np.asarray(v))
    noise = rng.normal(size=(len(xs), 3)) * np.asarray(params.base_noise) * scale[:, None]
    return nx + noise[:, 0], ny + noise[:, 1], wrap_angle_array(nth + noise[:, 2])


def step(s: State, a: Action, track, params: VehicleParams, rng) -> State:
    """One stochastic transition of the vehicle."""
    nx, ny, nth = step_batch(
        np.array([s.x]), np.array([s.y]), np.array([s.theta]), a.v, a.omega, track, params, rng
    )
    return State(float(nx[0]), float(ny[0]), float(nth[0]))


def kinematic_step_batch(xs, ys, ths, v, omega, dt):
    """Slip-free, noise-free unicycle update (the commanded intention)."""
    nx = xs + np.asarray(v) * np.cos(ths) * dt
    ny = ys + np.asarray(v) * np.sin(ths) * dt
    return nx, ny, wrap_angle_array(ths + np.asarray(omega) * dt)


def reward_batch(xs, ys, nxs, nys, track, params: VehicleParams):
    """Centerline progress minus penalty for ending beyond the track half width."""
    p1 = param_angle(xs, ys, track)
    p2 = param_angle(nxs, nys, track)
    prog = progress(p1, p2, track)
    excess = np.maximum(0.0, np.abs(signed_distance(nxs, nys, track)) - track.half_width)
    return prog - params.off_track_penalty * excess


def reward(s: State, a: Action, s_next: State, track, params: VehicleParams) -> float:
    return float(
        reward_batch(
            np.array([s.x]), np.array([s.y]), np.array([s_next.x]), np.array([s_next.y]), track, params
        )[0]
    )


def intended_rewards(states: np.ndarray, actions, track, params: VehicleParams) -> np.ndarray:
    """R(s, a) table for the planner: reward of the commanded kinematic step.

    Uses the slip-free model so the planner's reward does not leak the
    unknown terrain dynamics; those enter only through learned moments.
    """
    states = np.asarray(states, dtype=float)
    n = len(states)
    out = np.empty((n, len(actions)))
    for j, a in enumerate(actions):
        nx, ny, _ = kinematic_step_batch(states[:, 0], states[:, 1], states[:, 2], a.v, a.omega, params.dt)
        out[:, j] = reward_batch(states[:, 0], states[:, 1], nx, ny, track, params)
    return out


def true_moments(states: np.ndarray, actions, track, params: VehicleParams):
    """Ground-truth shift moments of the simulator at given poses.

    mu is the deterministic slip-attenuated displacement; sigma is the raw
    second moment mu mu^T + diag(noise std^2). Used as the oracle model for
    normalized-score anchors.
    """
    states = np.asarray(states, dtype=float)
    n, m = len(states), len(actions)
    _, slip, _ = terrain_lookup(states[:, 0], states[:, 1], track)
    factor = 1.0 - params.speed_attenuation * (1.0 - slip)
    mu = np.empty((n, m, 3))
    sigma = np.empty((n, m, 3, 3))
    base = np.asarray(params.base_noise)
    for j, a in enumerate(actions):
        v_eff = a.v * factor
        om_eff = a.omega * factor
        mu[:, j, 0] = v_eff * np.cos(states[:, 2]) * params.dt
        mu[:, j, 1] = v_eff * np.sin(states[:, 2]) * params.dt
        mu[:, j, 2] = om_eff * params.dt
        std = base[None, :] * (1.0 + params.slip_noise_gain * (1.0 - slip) * abs(a.v))[:, None]
        outer = mu[:, j, :, None] * mu[:, j, None, :]
        sigma[:, j] = outer + np.einsum("nd,de->nde", std**2, np.eye(3))
    return mu, sigma


# ---------------------------------------------------------------- behavior policy


@dataclass(frozen=True)
class BehaviorConfig:
    """Logging-policy knobs: exploration for overlap, safety override on ice."""

    p_explore: float = 0.3
    p_override: float = 0.9
    ice_slip_threshold: float = 0.3
    preview_steps: int = 3
    alignment_weight: float = 0.6
    margin: float = 0.8  # fraction of half width treated as safe in the preview


def pursuit_scores(states: np.ndarray, actions, track, params: VehicleParams, cfg: BehaviorConfig):
    """Score each action by previewed kinematic progress, staying near the centerline."""
    states = np.asarray(states, dtype=float)
    n, m = len(states), len(actions)
    scores = np.zeros((n, m))
    v = np.array([a.v for a in actions])
    om = np.array([a.omega for a in actions])
    xs = np.repeat(states[:, 0:1], m, axis=1)
    ys = np.repeat(states[:, 1:2], m, axis=1)
    ths = np.repeat(states[:, 2:3], m, axis=1)
    safe = cfg.margin * track.half_width
    for _ in range(cfg.preview_steps):
        nx, ny, nth = kinematic_step_batch(xs, ys, ths, v[None, :], om[None, :], params.dt)
        prog = progress(param_angle(xs, ys, track), param_angle(nx, ny, track), track)
        excess = np.maximum(0.0, np.abs(signed_distance(nx, ny, track)) - safe)
        scores += prog - params.off_track_penalty * excess
        xs, ys, ths = nx, ny, nth
    misalign = np.abs(wrap_angle_array(tangent_heading(param_angle(xs, ys, track), track) - ths))
    return scores - cfg.alignment_weight * misalign


def pursuit_policy_batch(states, actions, track, params, cfg: BehaviorConfig):
    """Deterministic centerline follower: argmax of the preview scores."""
    return np.argmax(pursuit_scores(states, actions, track, params, cfg), axis=1)


def behavior_policy(s: State, feature, rng, base_policy, actions, cfg: BehaviorConfig) -> Action:
    """Safety-overridden logging policy (the confounding mechanism).

    On low-slip terrain an aggressive base action is replaced, with
    probability p_override, by the most conservative action available.
    """
    act = base_policy(s, feature, rng)
    slip = feature[0]
    if slip < cfg.ice_slip_threshold and is_aggressive(act) and rng.random() < cfg.p_override:
        return most_conservative(actions)
    return act


def _behavior_ids_batch(states, slips, actions, track, params, cfg: BehaviorConfig, rng):
    ids = pursuit_policy_batch(states, actions, track, params, cfg)
    n = len(ids)
    explore = rng.random(n) < cfg.p_explore
    ids = np.where(explore, rng.integers(0, len(actions), size=n), ids)
    aggressive = np.array([is_aggressive(a) for a in actions])
    override = (
        (slips < cfg.ice_slip_threshold) & aggressive[ids] & (rng.random(n) < cfg.p_override)
    )
    ids = np.where(override, most_conservative(actions).id, ids)
    return ids


# ---------------------------------------------------------------- collection


def random_start_states(track, n, rng, lateral_frac=0.7, heading_jitter=0.5):
    """Poses spread around the track for episode resets."""
    phi = rng.uniform(0.0, TWO_PI, size=n)
    lat = rng.uniform(-lateral_frac, lateral_frac, size=n) * track.half_width
    px, py = centerline_point(phi, track)
    norm = np.hypot(track.a * np.sin(phi), track.b * np.cos(phi))
    nx, ny = track.b * np.cos(phi) / norm, track.a * np.sin(phi) / norm
    th = wrap_angle_array(tangent_heading(phi, track) + rng.uniform(-heading_jitter, heading_jitter, size=n))
    return px + lat * nx, py + lat * ny, th


def collect_dataset(
    mode: str,
    episodes: int,
    steps: int,
    track: TerrainTrack,
    params: VehicleParams,
    actions,
    seed: int,
    behavior: BehaviorConfig | None = None,
) -> Dataset:
    """Roll the logging policy and record (u, a, s') transitions.

    mode "biased" uses the safety-overridden pursuit policy; "randomized"
    samples actions uniformly. Fully reproducible from the seed.
    """
    if mode not in ("biased", "randomized"):
        raise ValueError(f"mode must be 'biased' or 'randomized', got {mode!r}")
    if episodes < 1 or steps < 1:
        raise ValueError("episodes and steps must be >= 1")
    behavior = behavior or BehaviorConfig()
    rng = np.random.default_rng(seed)
    xs, ys, ths = random_start_states(track, episodes, rng)
    v = np.array([a.v for a in actions])
    om = np.array([a.omega for a in actions])

    rows_u = []
    rows_a = []
    rows_next = []
    rows_ep = []
    rows_t = []
    for t in range(steps):
        _, slips, dists = terrain_lookup(xs, ys, track)
        if mode == "randomized":
            ids = rng.integers(0, len(actions), size=episodes)
        else:
            states = np.stack([xs, ys, ths], axis=1)
            ids = _behavior_ids_batch(states, slips, actions, track, params, behavior, rng)
        nx, ny, nth = step_batch(xs, ys, ths, v[ids], om[ids], track, params, rng)
        rows_u.append(np.stack([xs, ys, ths, slips, dists], axis=1))
        rows_a.append(ids)
        rows_next.append(np.stack([nx, ny, nth], axis=1))
        rows_ep.append(np.arange(episodes))
        rows_t.append(np.full(episodes, t))
        xs, ys, ths = nx, ny, nth

    U = np.concatenate(rows_u)
    ids = np.concatenate(rows_a)
    nxt = np.concatenate(rows_next)
    eps = np.concatenate(rows_ep)
    ts = np.concatenate(rows_t)
    # order samples by (episode, t) so the dataset reads as contiguous trajectories
    order = np.lexsort((ts, eps))
    samples = [
        Sample(
            u=QueryPoint(State(U[i, 0], U[i, 1], U[i, 2]), (U[i, 3], U[i, 4])),
            action_id=int(ids[i]),
            next_state=State(nxt[i, 0], nxt[i, 1], nxt[i, 2]),
        )
        for i in order
    ]
    return Dataset(samples, episodes=eps[order], steps=ts[order])


def save_dataset_csv(dataset: Dataset, path) -> None:
    """Write (episode, t, x, y, theta, feat_*, action_id, next state) rows."""
    d_feat = dataset.U.shape[1] - 3
    header = (
        ["episode", "t", "x", "y", "theta"]
        + [f"feat_{i}" for i in range(d_feat)]
        + ["action_id", "x_next", "y_next", "theta_next"]
    )
    lines = [",".join(header)]
    for i, s in enumerate(dataset.samples):
        u = dataset.U[i]
        cells = [str(int(dataset.episodes[i])), str(int(dataset.steps[i]))]
        cells += [repr(float(v)) for v in u]
        cells.append(str(int(dataset.action_ids[i])))
        cells += [repr(float(v)) for v in (s.next_state.x, s.next_state.y, s.next_state.theta)]
        lines.append(",".join(cells))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset_csv(path) -> Dataset:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    d_feat = sum(1 for h in header if h.startswith("feat_"))
    samples = []
    eps, ts = [], []
    for r in rows:
        vals = [float(v) for v in r[2:]]
        state = State(vals[0], vals[1], vals[2])
        feat = tuple(vals[3 : 3 + d_feat])
        a = int(r[2 + 3 + d_feat])
        nxt = State(*vals[4 + d_feat : 7 + d_feat])
        samples.append(Sample(u=QueryPoint(state, feat), action_id=a, next_state=nxt))
        eps.append(int(r[0]))
        ts.append(int(r[1]))
    return Dataset(samples, episodes=np.array(eps), steps=np.array(ts))


# ---------------------------------------------------------------- rollouts


@dataclass(frozen=True)
class RolloutMetrics:
    """Trial-averaged rollout statistics."""

    cumulative_reward: float
    aggressive_frequency: float
    mean_linear_speed: float
    mean_abs_angular_speed: float
    steps_completed: int


@dataclass(frozen=True)
class RolloutResult:
    """Per-trial rollout outcomes; aggregate() averages them."""

    rewards: np.ndarray
    aggressive_frequency: np.ndarray
    mean_linear_speed: np.ndarray
    mean_abs_angular_speed: np.ndarray
    steps: int

    def aggregate(self) -> RolloutMetrics:
        return RolloutMetrics(
            cumulative_reward=float(self.rewards.mean()),
            aggressive_frequency=float(self.aggressive_frequency.mean()),
            mean_linear_speed=float(self.mean_linear_speed.mean()),
            mean_abs_angular_speed=float(self.mean_abs_angular_speed.mean()),
            steps_completed=int(self.steps),
        )


def make_support_policy(support_states: np.ndarray, policy_actions: np.ndarray, lengthscales):
    """Policy function: act with the nearest supporting state's action.

    Nearness is measured in lengthscale-scaled coordinates with a wrapped
    heading difference.
    """
    support_states = np.asarray(support_states, dtype=float)
    ls = np.asarray(lengthscales, dtype=float)
    S = support_states / ls

    def policy_fn(states: np.ndarray, rng) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        dxy = (states[:, None, :2] / ls[:2]) - S[None, :, :2]
        sq = np.sum(dxy * dxy, axis=2)
        dth = wrap_angle_array(states[:, None, 2] - support_states[None, :, 2]) / ls[2]
        sq += dth * dth
        return policy_actions[np.argmin(sq, axis=1)]

    return policy_fn


def uniform_random_policy(actions):
    m = len(actions)

    def policy_fn(states, rng):
        return rng.integers(0, m, size=len(np.atleast_2d(states)))

    return policy_fn


def rollout(
    policy_fn,
    track: TerrainTrack,
    params: VehicleParams,
    actions,
    trials: int,
    steps: int,
    seed: int,
) -> RolloutResult:
    """Run trials in lockstep and collect per-trial statistics."""
    if trials < 1 or steps < 1:
        raise ValueError("trials and steps must be >= 1")
    rng = np.random.default_rng(seed)
    phi0 = rng.uniform(0.0, TWO_PI, size=trials)
    px, py = centerline_point(phi0, track)
    xs, ys = np.asarray(px, dtype=float), np.asarray(py, dtype=float)
    ths = np.asarray(tangent_heading(phi0, track), dtype=float)

    v = np.array([a.v for a in actions])
    om = np.array([a.omega for a in actions])
    aggressive = np.array([is_aggressive(a) for a in actions])

    total_reward = np.zeros(trials)
    aggr_count = np.zeros(trials)
    v_sum = np.zeros(trials)
    om_sum = np.zeros(trials)
    for _ in range(steps):
        states = np.stack([xs, ys, ths], axis=1)
        ids = np.asarray(policy_fn(states, rng), dtype=int)
        nx, ny, nth = step_batch(xs, ys, ths, v[ids], om[ids], track, params, rng)
        total_reward += reward_batch(xs, ys, nx, ny, track, params)
        aggr_count += aggressive[ids]
        v_sum += v[ids]
        om_sum += np.abs(om[ids])
        xs, ys, ths = nx, ny, nth
    return RolloutResult(
        rewards=total_reward,
        aggressive_frequency=aggr_count / steps,
        mean_linear_speed=v_sum / steps,
        mean_abs_angular_speed=om_sum / steps,
        steps=steps,
    )


# ---------------------------------------------------------------- track files


def save_track_config(track: TerrainTrack, params: VehicleParams, path) -> None:
    """Flat key=value track/vehicle description with the explicit segment list."""
    lines = [
        f"center_x = {track.center[0]!r}",
        f"center_y = {track.center[1]!r}",
        f"semi_axis_a = {track.a!r}",
        f"semi_axis_b = {track.b!r}",
        f"half_width = {track.half_width!r}",
        f"ice_coverage = {track.ice_coverage!r}",
        f"n_segments = {len(track.segments)}",
    ]
    for i, s in enumerate(track.segments):
        lines.append(f"segment_{i} = {s.start!r}:{s.end!r}:{s.terrain}:{s.slip!r}")
    lines += [
        f"dt = {params.dt!r}",
        f"base_noise = {params.base_noise[0]!r},{params.base_noise[1]!r},{params.base_noise[2]!r}",
        f"slip_noise_gain = {params.slip_noise_gain!r}",
        f"speed_attenuation = {params.speed_attenuation!r}",
        f"off_track_penalty = {params.off_track_penalty!r}",
    ]
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def load_track_config(path):
    """Inverse of save_track_config; returns (TerrainTrack, VehicleParams)."""
    kv = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            kv[key.strip()] = val.strip()
    n_seg = int(kv["n_segments"])
    segs = []
    for i in range(n_seg):
        start, end, terrain, slip = kv[f"segment_{i}"].split(":")
        segs.append(TerrainSegment(float(start), float(end), terrain, float(slip)))
    track = TerrainTrack(
        center=(float(kv["center_x"]), float(kv["center_y"])),
        a=float(kv["semi_axis_a"]),
        b=float(kv["semi_axis_b"]),
        half_width=float(kv["half_width"]),
        segments=tuple(segs),
        ice_coverage=float(kv["ice_coverage"]),
    )
    noise = tuple(float(v) for v in kv["base_noise"].split(","))
    params = VehicleParams(
        dt=float(kv["dt"]),
        base_noise=noise,
        slip_noise_gain=float(kv["slip_noise_gain"]),
        speed_attenuation=float(kv["speed_attenuation"]),
        off_track_penalty=float(kv["off_track_penalty"]),
    )
    return track, params
