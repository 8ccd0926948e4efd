"""Diffusion-approximated policy evaluation and policy iteration.

Values live on a finite supporting-state set and extend everywhere through
kernel interpolation. Evaluating a policy solves the dense linear system

    (M (lambda*I + K)^-1 - (1 - gamma) I) V = -R

where row i of M applies the drift-diffusion operator built from the
policy's (mu, sigma) at support i to the kernel columns. Improvement is the
argmax of R(s, a) + gamma * (mu_a . grad v + 0.5 tr(sigma_a hess v)) per
support, optionally penalizing data-poor (unknown) cells MOReL-style.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.linalg.lapack

from causalnav.core import THETA_DIM, wrap_angle_array
from causalnav.estimators import MomentTable, _query_vector
from causalnav.kernels import (
    GramSystem,
    KernelConfig,
    build_gram,
    generator_basis,
    generator_row,
    kernel_grad,
    kernel_hessian,
)

# basis tensors above this many elements are recomputed row-wise instead
_MAX_BASIS_ELEMS = 4e7


class SolverError(Exception):
    """Linear-system failure during policy evaluation."""


@dataclass(frozen=True)
class SupportingSet:
    """Supporting states plus the Gram machinery shared by all solver steps."""

    states: np.ndarray
    gram: GramSystem

    def __post_init__(self):
        if self.states.ndim != 2 or self.states.shape[0] < 2:
            raise ValueError("need at least 2 supporting states")

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @cached_property
    def basis(self):
        """(G, H) pairwise kernel gradient/Hessian tensors, or None when too large."""
        k = self.states.shape[1]
        if self.n * self.n * k * k > _MAX_BASIS_ELEMS:
            return None
        return generator_basis(self.states, self.gram.cfg)

    @classmethod
    def from_states(cls, states: np.ndarray, cfg: KernelConfig) -> "SupportingSet":
        states = np.asarray(states, dtype=float)
        return cls(states=states, gram=build_gram(states, cfg))


@dataclass(frozen=True)
class Policy:
    """Action id per supporting state."""

    actions: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "actions", np.asarray(self.actions, dtype=int))

    def __eq__(self, other):
        return isinstance(other, Policy) and np.array_equal(self.actions, other.actions)

    def key(self) -> tuple:
        return tuple(int(a) for a in self.actions)


@dataclass(frozen=True)
class ValueField:
    """Values at supports with cached interpolation weights (lambda*I + K)^-1 V."""

    values: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class PessimismConfig:
    """Unknown-cell detection and penalty parameters.

    radius is an epsilon-ball in standardized query coordinates; cells whose
    action-matched in-ball sample count falls below n_min are treated as
    unknown and planned with reward R - kappa. kappa = None resolves to
    2x the reward range at planning time.
    """

    radius: float = 0.5
    n_min: int = 5
    kappa: float | None = None

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError("radius must be positive")
        if self.n_min < 1:
            raise ValueError("n_min must be >= 1")
        if self.kappa is not None and self.kappa < 0.0:
            raise ValueError("kappa must be >= 0")


def _selected_moments(table: MomentTable, policy: Policy):
    ids = np.asarray(table.action_ids)
    missing = set(policy.actions.tolist()) - set(table.action_ids)
    if missing:
        raise ValueError(f"moment table has no cells for actions {sorted(missing)}")
    positions = np.searchsorted(ids, policy.actions)
    idx = np.arange(len(policy.actions))
    return table.mu[idx, positions], table.sigma[idx, positions]


def assemble_generator(
    supports: SupportingSet, policy: Policy, table: MomentTable, gamma: float, viscosity=None
) -> np.ndarray:
    """N x N generator matrix M for the policy's per-support moments.

    viscosity, when given, is a per-dimension nonnegative vector added to the
    diagonal of every sigma during evaluation. It is the streamline-diffusion
    stabilizer for drift-dominated moment tables, where the raw collocation
    operator has amplifying modes (see policy_iteration).
    """
    if len(policy.actions) != supports.n or table.n_supports != supports.n:
        raise ValueError("policy / table / supports sizes disagree")
    mu_sel, sigma_sel = _selected_moments(table, policy)
    if viscosity is not None:
        sigma_sel = sigma_sel + np.diag(np.asarray(viscosity, dtype=float))
    basis = supports.basis
    if basis is not None:
        G, H = basis
        M = np.einsum("ijd,id->ij", G, mu_sel)
        M += 0.5 * np.einsum("ijde,ide->ij", H, sigma_sel)
        return gamma * M
    rows = [
        generator_row(mu_sel[i], sigma_sel[i], supports.states[i], supports.states, supports.gram.cfg, gamma)
        for i in range(supports.n)
    ]
    return np.stack(rows)


def evaluate_policy(
    M: np.ndarray, gram: GramSystem, gamma: float, rewards: np.ndarray
) -> ValueField:
    """Solve the diffusion Bellman linear system for V at the supports.

    rewards holds R(s^i, pi(s^i)); the system right-hand side is its negation.
    """
    if not (0.0 < gamma < 1.0):
        raise ValueError("gamma must lie in (0, 1)")
    rewards = np.asarray(rewards, dtype=float)
    n = gram.n
    # M (lambda*I + K)^-1 through the cached factorization (symmetric system)
    X = gram.solve(M.T).T
    A = X - (1.0 - gamma) * np.eye(n)
    rhs = -rewards
    anorm = np.linalg.norm(A, 1)
    try:
        lu, piv = scipy.linalg.lu_factor(A)
    except scipy.linalg.LinAlgError as exc:
        raise SolverError("singular policy-evaluation system") from exc
    rcond = scipy.linalg.lapack.dgecon(lu, anorm, norm="1")[0]
    if rcond < 1e-13:
        raise SolverError(
            f"singular/ill-conditioned policy-evaluation system "
            f"(condition estimate ~ {1.0 / max(rcond, 1e-300):.3e})"
        )
    V = scipy.linalg.lu_solve((lu, piv), rhs)
    resid = np.max(np.abs(A @ V - rhs))
    bound = 1e-8 * (1.0 + np.max(np.abs(rhs)))
    if resid > bound:
        raise SolverError(
            f"ill-conditioned policy evaluation: residual {resid:.3e} > {bound:.3e}, "
            f"condition estimate ~ {1.0 / max(rcond, 1e-300):.3e}"
        )
    return ValueField(values=V, weights=gram.solve(V))


def interpolate_value(s, vf: ValueField, gram: GramSystem):
    """v(s) = k(s, supports)^T (lambda*I + K)^-1 V; batched over leading axes."""
    return gram.kernel_row(s) @ vf.weights


def value_derivatives(s, vf: ValueField, gram: GramSystem):
    """Gradient and Hessian of the interpolated value at s."""
    s = np.asarray(s, dtype=float)
    grads = kernel_grad(s[..., None, :], gram.supports, gram.cfg)
    hess = kernel_hessian(s[..., None, :], gram.supports, gram.cfg)
    g = np.einsum("...jd,j->...d", grads, vf.weights)
    h = np.einsum("...jde,j->...de", hess, vf.weights)
    return g, h


def _support_derivatives(supports: SupportingSet, vf: ValueField):
    basis = supports.basis
    if basis is not None:
        G, H = basis
        return np.einsum("ijd,j->id", G, vf.weights), np.einsum("ijde,j->ide", H, vf.weights)
    return value_derivatives(supports.states, vf, supports.gram)


def improvement_scores(
    supports: SupportingSet,
    vf: ValueField,
    table: MomentTable,
    rewards: np.ndarray,
    gamma: float,
    unknown=None,
    kappa: float = 0.0,
) -> np.ndarray:
    """Score R(s,a) + gamma*(mu . grad v + 0.5 tr(sigma hess v)) per (support, action)."""
    rewards = np.asarray(rewards, dtype=float)
    if rewards.shape != (supports.n, len(table.action_ids)):
        raise ValueError("rewards must be (n_supports, n_actions)")
    grad_v, hess_v = _support_derivatives(supports, vf)
    drift = np.einsum("iad,id->ia", table.mu, grad_v)
    diffusion = 0.5 * np.einsum("iade,ide->ia", table.sigma, hess_v)
    scores = rewards + gamma * (drift + diffusion)
    if unknown is not None and kappa:
        scores = scores - kappa * np.asarray(unknown, dtype=float)
    return scores


def improve_policy(
    supports: SupportingSet,
    vf: ValueField,
    table: MomentTable,
    rewards: np.ndarray,
    gamma: float,
    unknown=None,
    kappa: float = 0.0,
) -> Policy:
    """Greedy policy over improvement scores; ties go to the lowest action id."""
    ids = np.asarray(table.action_ids)
    if np.any(np.diff(ids) <= 0):
        raise ValueError("table action ids must be strictly increasing for tie-breaking")
    scores = improvement_scores(supports, vf, table, rewards, gamma, unknown, kappa)
    return Policy(actions=ids[np.argmax(scores, axis=1)])


@dataclass
class PolicyIterationResult:
    policy: Policy
    value_field: ValueField
    diagnostics: dict = field(default_factory=dict)


def default_viscosity(supports: SupportingSet, table: MomentTable, scale: float = 0.15) -> np.ndarray:
    """Lengthscale-proportional evaluation viscosity.

    The collocation of the drift term alone admits modes with positive real
    eigenvalues that resonate with the (1 - gamma) damping; a diffusion
    floor of order max||mu|| * lengthscale restores dissipativity. Applied
    identically to every action and estimator so comparisons stay fair.
    """
    ls = supports.gram.cfg.ls
    mu_max = float(np.linalg.norm(table.mu, axis=-1).max())
    return scale * mu_max * ls**2 / float(ls.max())


def policy_iteration(
    supports: SupportingSet,
    table: MomentTable,
    rewards: np.ndarray,
    gamma: float,
    max_iters: int = 50,
    unknown=None,
    pessimism: PessimismConfig | None = None,
    viscosity="auto",
) -> PolicyIterationResult:
    """Alternate evaluation and improvement until the policy is a fixed point.

    Terminates early when a policy repeats (cycling); the best iterate by
    mean support value is returned when no fixed point is reached.
    viscosity="auto" applies the default stabilizer during evaluation;
    None disables it; a per-dimension vector sets it explicitly.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    rewards = np.asarray(rewards, dtype=float)
    if isinstance(viscosity, str) and viscosity == "auto":
        viscosity = default_viscosity(supports, table)
    kappa = 0.0
    if pessimism is not None:
        kappa = pessimism.kappa
        if kappa is None:
            kappa = 2.0 * (float(rewards.max()) - float(rewards.min()))
        if unknown is None:
            raise ValueError("pessimism requires an unknown-cell mask")
    ids = np.asarray(table.action_ids)
    base = rewards - kappa * np.asarray(unknown, dtype=float) if kappa else rewards
    policy = Policy(actions=ids[np.argmax(base, axis=1)])

    history = []
    seen = {}
    best = None
    converged = False
    vf = None
    for it in range(max_iters):
        M = assemble_generator(supports, policy, table, gamma, viscosity=viscosity)
        vf = evaluate_policy(M, supports.gram, gamma, base[np.arange(supports.n), np.searchsorted(ids, policy.actions)])
        mean_v = float(vf.values.mean())
        if best is None or mean_v > best[0]:
            best = (mean_v, policy, vf)
        nxt = improve_policy(supports, vf, table, rewards, gamma, unknown, kappa)
        changes = int(np.sum(nxt.actions != policy.actions))
        history.append({"iteration": it, "policy_changes": changes, "mean_value": mean_v})
        if changes == 0:
            converged = True
            break
        key = nxt.key()
        if key in seen:
            history.append({"iteration": it + 1, "policy_changes": changes, "cycle": True})
            break
        seen[policy.key()] = it
        policy = nxt
    if converged:
        result_policy, result_vf = policy, vf
    else:
        _, result_policy, result_vf = best
    return PolicyIterationResult(
        policy=result_policy,
        value_field=result_vf,
        diagnostics={
            "converged": converged,
            "iterations": len(history),
            "history": history,
            "kappa": kappa,
            "viscosity": None if viscosity is None else np.asarray(viscosity).tolist(),
        },
    )


def flag_unknown(u, action_id: int, dataset, pess: PessimismConfig) -> bool:
    """True when fewer than n_min action-matched samples fall in the eps-ball at u."""
    mask = unknown_mask(np.atleast_2d(_query_vector(u)), [action_id], dataset, pess)
    return bool(mask[0, 0])


def unknown_mask(queries, action_ids, dataset, pess: PessimismConfig) -> np.ndarray:
    """(n_queries, n_actions) unknown flags from standardized eps-ball counts."""
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    action_ids = [int(a) for a in action_ids]
    scale = dataset.scaler.scale
    U = dataset.U
    out = np.zeros((len(queries), len(action_ids)), dtype=bool)
    onehot = np.stack([(dataset.action_ids == a) for a in action_ids], axis=1).astype(float)
    r2 = pess.radius**2
    chunk = max(1, int(2_000_000 // max(len(U), 1)))
    for lo in range(0, len(queries), chunk):
        block = queries[lo : lo + chunk]
        diff = U[None, :, :] - block[:, None, :]
        diff[:, :, THETA_DIM] = wrap_angle_array(diff[:, :, THETA_DIM])
        diff /= scale
        inside = (np.sum(diff * diff, axis=2) <= r2).astype(float)
        counts = inside @ onehot
        out[lo : lo + chunk] = counts < pess.n_min
    return out


def support_grid(
    x_range: tuple[float, float],
    y_range: tuple[float, float],
    spacing: float,
    n_headings: int = 8,
    keep=None,
) -> np.ndarray:
    """Uniform pose grid: (x, y) lattice at the given spacing, equispaced headings.

    keep, when given, is a predicate over (n, 2) xy positions returning a
    boolean mask (used to restrict supports to the reachable region).
    """
    if spacing <= 0 or n_headings < 1:
        raise ValueError("spacing must be > 0 and n_headings >= 1")
    xs = np.arange(x_range[0], x_range[1] + 1e-9, spacing)
    ys = np.arange(y_range[0], y_range[1] + 1e-9, spacing)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    xy = np.stack([gx.ravel(), gy.ravel()], axis=1)
    if keep is not None:
        xy = xy[keep(xy)]
    headings = -math.pi + 2.0 * math.pi * (np.arange(n_headings) + 1) / n_headings
    states = np.concatenate(
        [
            np.repeat(xy, n_headings, axis=0),
            np.tile(headings, len(xy))[:, None],
        ],
        axis=1,
    )
    return states


def save_policy_csv(path, supports: np.ndarray, policy: Policy, values: np.ndarray) -> None:
    """Persist (support_index, x, y, theta, action_id, value) rows."""
    lines = ["support_index,x,y,theta,action_id,value"]
    for i in range(len(supports)):
        x, y, th = (float(v) for v in supports[i])
        lines.append(
            f"{i},{x!r},{y!r},{th!r},{int(policy.actions[i])},{float(values[i])!r}"
        )
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def load_policy_csv(path):
    """Load (states, action ids, values) from a policy CSV."""
    with open(path) as fh:
        fh.readline()
        rows = [line.strip().split(",") for line in fh if line.strip()]
    states = np.array([[float(r[1]), float(r[2]), float(r[3])] for r in rows])
    actions = np.array([int(r[4]) for r in rows], dtype=int)
    values = np.array([float(r[5]) for r in rows])
    return states, actions, values
