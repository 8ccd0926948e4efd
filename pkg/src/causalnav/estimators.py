"""Moment estimation from observational transition logs.

Given a query point u = (state, feature), the estimators select the k_n
nearest logged samples in standardized coordinates, estimate each action's
assignment probability inside that subset nonparametrically (kernel density
weighted vote), and produce first/second moments of the state shift via
plain local regression (KNN mean), inverse propensity weighting, or the
doubly robust combination of the two. Second moments are repaired to be
positive semidefinite before they feed the planner.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from causalnav.core import (
    Dataset,
    FeatureScaler,
    QueryPoint,
    STATE_DIM,
    THETA_DIM,
    standardized_diffs,
    wrap_angle_array,
)

REGRESSION = "regression"
IPW = "ipw"
DR = "dr"
METHODS = (REGRESSION, IPW, DR)


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs shared by all moment estimators.

    eps_propensity is a hard floor on estimated propensities; together with
    renormalization it requires n_actions * eps_propensity <= 1.
    """

    k_n: int = 50
    bandwidth: float = 0.5
    eps_propensity: float = 0.05
    eps_sigma: float = 1e-6
    kde_feature_only: bool = False

    def __post_init__(self):
        if self.k_n < 1:
            raise ValueError("k_n must be >= 1")
        if self.bandwidth <= 0.0:
            raise ValueError("bandwidth must be positive")
        if not (0.0 < self.eps_propensity < 1.0):
            raise ValueError("eps_propensity must lie in (0, 1)")
        if self.eps_sigma < 0.0:
            raise ValueError("eps_sigma must be >= 0")


@dataclass(frozen=True)
class Neighborhood:
    """Indices of the k_n samples nearest to a query, in increasing distance."""

    query: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


def _query_vector(u) -> np.ndarray:
    if isinstance(u, QueryPoint):
        return u.as_vector()
    return np.asarray(u, dtype=float)


def select_neighborhood(u, dataset: Dataset, k_n: int) -> Neighborhood:
    """The min(k_n, n) nearest samples under standardized distance.

    Ties are broken by lower sample index (stable sort over distances).
    """
    if k_n < 1:
        raise ValueError("k_n must be >= 1")
    uv = _query_vector(u)
    z = standardized_diffs(dataset.U, uv, dataset.scaler)
    dist = np.sqrt(np.sum(z * z, axis=1))
    order = np.argsort(dist, kind="stable")
    return Neighborhood(query=uv, indices=order[: min(k_n, len(dataset))])


def floor_simplex(p: np.ndarray, eps: float) -> np.ndarray:
    """Project probability rows onto the simplex with a per-entry floor.

    Entries below eps are pinned to eps and the remaining mass is shared
    among the free entries in proportion to their input values, iterating
    until no free entry dips under the floor. Requires m * eps <= 1.
    """
    P = np.atleast_2d(np.asarray(p, dtype=float)).copy()
    m = P.shape[1]
    if m * eps > 1.0 + 1e-12:
        raise ValueError(
            f"floor infeasible: {m} actions with floor {eps} exceed total mass 1"
        )
    floored = np.zeros_like(P, dtype=bool)
    for _ in range(m):
        remaining = 1.0 - eps * floored.sum(axis=1)
        free_mass = np.where(floored, 0.0, P).sum(axis=1)
        scale = remaining / np.maximum(free_mass, 1e-300)
        P = np.where(floored, eps, P * scale[:, None])
        # rows whose free entries are all zero share the remainder uniformly
        degenerate = free_mass <= 0.0
        if degenerate.any():
            n_free = np.maximum((~floored).sum(axis=1), 1)
            P = np.where(
                (~floored) & degenerate[:, None], (remaining / n_free)[:, None], P
            )
        newly = (~floored) & (P < eps * (1.0 - 1e-12))
        if not newly.any():
            break
        floored |= newly
        P[floored] = eps
    return P if np.asarray(p).ndim == 2 else P[0]


@dataclass(frozen=True)
class PropensityVector:
    """Per-action assignment probabilities at one evaluation point."""

    probs: np.ndarray
    action_ids: tuple[int, ...]

    def __post_init__(self):
        s = float(np.sum(self.probs))
        if abs(s - 1.0) > 1e-9:
            raise ValueError(f"propensities must sum to 1, got {s}")

    def for_action(self, action_id: int) -> float:
        return float(self.probs[self.action_ids.index(action_id)])


class LocalPropensity:
    """KDE-backed propensity model fitted on one neighborhood.

    The class prior p(a) is the action frequency in the neighborhood and
    p(u|a) is a Gaussian KDE over standardized coordinates of the action-a
    members; evaluation returns floor-renormalized probability rows.
    """

    def __init__(
        self,
        member_U: np.ndarray,
        member_actions: np.ndarray,
        action_ids,
        scaler: FeatureScaler,
        bandwidth: float,
        eps: float,
        feature_only: bool = False,
    ):
        if bandwidth <= 0.0:
            raise ValueError("bandwidth must be positive")
        if len(member_U) == 0:
            raise ValueError("neighborhood must be nonempty")
        self.member_U = np.asarray(member_U, dtype=float)
        self.action_ids = tuple(int(a) for a in action_ids)
        if len(self.action_ids) * eps > 1.0 + 1e-12:
            raise ValueError(
                f"{len(self.action_ids)} actions with floor {eps} cannot sum to 1"
            )
        self.scaler = scaler
        self.bandwidth = float(bandwidth)
        self.eps = float(eps)
        self.cols = slice(STATE_DIM, None) if feature_only else slice(None)
        idx_of = {a: i for i, a in enumerate(self.action_ids)}
        self.onehot = np.zeros((len(member_U), len(self.action_ids)))
        for row, a in enumerate(member_actions):
            self.onehot[row, idx_of[int(a)]] = 1.0
        self.counts = self.onehot.sum(axis=0)

    def at(self, points_U: np.ndarray) -> np.ndarray:
        """Propensity rows (q, n_actions) at raw query vectors (q, d) or (d,)."""
        pts = np.atleast_2d(np.asarray(points_U, dtype=float))
        d = self.member_U.shape[1]
        sel = np.arange(d)[self.cols]
        lin = sel[sel != THETA_DIM]
        has_theta = bool(np.any(sel == THETA_DIM))
        mean, scale = self.scaler.mean, self.scaler.scale
        Zm = (self.member_U[:, lin] - mean[lin]) / scale[lin]
        zm_sq = np.sum(Zm * Zm, axis=1)
        th_m = self.member_U[:, THETA_DIM] if has_theta else None

        votes = np.empty((len(pts), len(self.action_ids)))
        chunk = max(1, int(4_000_000 // max(len(self.member_U), 1)))
        for lo in range(0, len(pts), chunk):
            block = pts[lo : lo + chunk]
            Zq = (block[:, lin] - mean[lin]) / scale[lin]
            # squared distances via the expansion; clamp tiny negatives from cancellation
            sq = zm_sq[None, :] + np.sum(Zq * Zq, axis=1)[:, None] - 2.0 * (Zq @ Zm.T)
            if has_theta:
                dth = wrap_angle_array(th_m[None, :] - block[:, THETA_DIM][:, None])
                dth /= scale[THETA_DIM]
                sq += dth * dth
            np.maximum(sq, 0.0, out=sq)
            votes[lo : lo + chunk] = np.exp(-0.5 * sq / self.bandwidth**2) @ self.onehot
        present = self.counts > 0
        raw = np.where(present, votes, 0.0)
        totals = raw.sum(axis=1, keepdims=True)
        # all kernel weights underflowed: fall back to the class prior
        prior = self.counts / self.counts.sum()
        raw = np.where(totals > 0.0, raw / np.maximum(totals, 1e-300), prior)
        raw = np.where(present, raw, self.eps)
        out = floor_simplex(raw, self.eps)
        return out if np.asarray(points_U).ndim == 2 else out[0]


def estimate_propensity(
    u,
    nbhd: Neighborhood,
    dataset: Dataset,
    bandwidth: float,
    eps: float,
    action_ids=None,
    feature_only: bool = False,
) -> PropensityVector:
    """Propensity vector at query u from the KDE model fitted on nbhd."""
    if action_ids is None:
        action_ids = sorted(int(a) for a in np.unique(dataset.action_ids))
    model = LocalPropensity(
        dataset.U[nbhd.indices],
        dataset.action_ids[nbhd.indices],
        action_ids,
        dataset.scaler,
        bandwidth,
        eps,
        feature_only,
    )
    return PropensityVector(probs=model.at(_query_vector(u)), action_ids=tuple(action_ids))


def ipw_mu(deltas: np.ndarray, actions: np.ndarray, action_id: int, e_a: np.ndarray):
    """IPW first moment (1/n) sum I_a(a_i) * delta_i / e_a(u_i); None when unsupported."""
    mask = actions == action_id
    if not mask.any():
        return None
    w = np.where(mask, 1.0 / e_a, 0.0)
    return (deltas * w[:, None]).sum(axis=0) / len(deltas)


def ipw_sigma(deltas: np.ndarray, actions: np.ndarray, action_id: int, e_a: np.ndarray):
    """IPW raw second moment (1/n) sum I_a(a_i) * delta_i delta_i^T / e_a(u_i)."""
    mask = actions == action_id
    if not mask.any():
        return None
    d = deltas[mask]
    w = 1.0 / e_a[mask]
    s = (d.T * w) @ d / len(deltas)
    return 0.5 * (s + s.T)


def knn_mu(deltas: np.ndarray, actions: np.ndarray, action_id: int):
    """Local-constant regression fit: mean shift over action-a members."""
    mask = actions == action_id
    if not mask.any():
        return None
    return deltas[mask].mean(axis=0)


def reg_sigma(deltas: np.ndarray, actions: np.ndarray, action_id: int, fhat=None):
    """Regression second moment: mean of fhat fhat^T + residual residual^T.

    fhat defaults to the local-constant fit, in which case the result equals
    the raw second moment of the action-a shifts.
    """
    mask = actions == action_id
    if not mask.any():
        return None
    d = deltas[mask]
    if fhat is None:
        fhat = d.mean(axis=0)
    f = np.broadcast_to(np.asarray(fhat, dtype=float), d.shape)
    resid = d - f
    s = (f.T @ f + resid.T @ resid) / len(d)
    return 0.5 * (s + s.T)


def dr_mu(
    deltas: np.ndarray,
    actions: np.ndarray,
    action_id: int,
    e_a: np.ndarray,
    mu_nr,
):
    """Doubly robust first moment.

    (1/n) sum [ I_a delta_i / e_a(u_i) + (1 - I_a / e_a(u_i)) * mu_nr(u_i) ].
    mu_nr may be a constant k-vector or per-member (n, k) predictions.
    """
    if mu_nr is None:
        return None
    mask = actions == action_id
    w = np.where(mask, 1.0 / e_a, 0.0)
    m = np.broadcast_to(np.asarray(mu_nr, dtype=float), deltas.shape)
    terms = deltas * w[:, None] + (1.0 - w)[:, None] * m
    return terms.sum(axis=0) / len(deltas)


def dr_sigma(
    deltas: np.ndarray,
    actions: np.ndarray,
    action_id: int,
    e_a: np.ndarray,
    sigma_nr,
):
    """Doubly robust raw second moment, defined like dr_mu with outer products."""
    if sigma_nr is None:
        return None
    mask = actions == action_id
    w = np.where(mask, 1.0 / e_a, 0.0)
    k = deltas.shape[1]
    s_nr = np.broadcast_to(np.asarray(sigma_nr, dtype=float), (len(deltas), k, k))
    outer = deltas[:, :, None] * deltas[:, None, :]
    terms = outer * w[:, None, None] + (1.0 - w)[:, None, None] * s_nr
    s = terms.sum(axis=0) / len(deltas)
    return 0.5 * (s + s.T)


def psd_project(m: np.ndarray, eps_sigma: float) -> np.ndarray:
    """Clamp eigenvalues of a (nearly) symmetric matrix to >= eps_sigma."""
    m = np.asarray(m, dtype=float)
    if np.max(np.abs(m - m.T)) > 1e-8:
        raise ValueError("matrix is not symmetric within 1e-8")
    sym = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(sym)
    vals = np.maximum(vals, eps_sigma)
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T)


class MomentTable:
    """Per-(support, action) first/second moments with support bookkeeping.

    Arrays are indexed [support, action_position]; action_position follows
    the order of action_ids.
    """

    def __init__(self, mu, sigma, support_count, unknown, action_ids, estimator, fallback_cells=0):
        self.mu = np.asarray(mu, dtype=float)
        self.sigma = np.asarray(sigma, dtype=float)
        self.support_count = np.asarray(support_count, dtype=int)
        self.unknown = np.asarray(unknown, dtype=bool)
        self.action_ids = tuple(int(a) for a in action_ids)
        self.estimator = str(estimator)
        self.fallback_cells = int(fallback_cells)

    @property
    def n_supports(self) -> int:
        return self.mu.shape[0]

    @property
    def k(self) -> int:
        return self.mu.shape[2]

    def pair(self, support_index: int, action_id: int):
        j = self.action_ids.index(action_id)
        return MomentPair(
            mu=self.mu[support_index, j],
            sigma=self.sigma[support_index, j],
            support_count=int(self.support_count[support_index, j]),
            unknown=bool(self.unknown[support_index, j]),
        )

    def to_csv(self, path) -> None:
        k = self.k
        header = (
            ["support_index", "action_id"]
            + [f"mu_{i}" for i in range(k)]
            + [f"sigma_{i}_{j}" for i in range(k) for j in range(k)]
            + ["support_count", "unknown_flag", "estimator_tag"]
        )
        lines = [",".join(header)]
        for i in range(self.n_supports):
            for j, a in enumerate(self.action_ids):
                cells = [str(i), str(a)]
                cells += [repr(float(v)) for v in self.mu[i, j]]
                cells += [repr(float(v)) for v in self.sigma[i, j].reshape(-1)]
                cells += [str(int(self.support_count[i, j])), str(int(self.unknown[i, j])), self.estimator]
                lines.append(",".join(cells))
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "MomentTable":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        k = sum(1 for h in header if h.startswith("mu_"))
        supports = sorted({int(r[0]) for r in rows})
        action_ids = sorted({int(r[1]) for r in rows})
        a_pos = {a: j for j, a in enumerate(action_ids)}
        n, m = len(supports), len(action_ids)
        mu = np.zeros((n, m, k))
        sigma = np.zeros((n, m, k, k))
        count = np.zeros((n, m), dtype=int)
        unknown = np.zeros((n, m), dtype=bool)
        estimator = rows[0][-1]
        for r in rows:
            i, j = int(r[0]), a_pos[int(r[1])]
            vals = [float(v) for v in r[2 : 2 + k + k * k]]
            mu[i, j] = vals[:k]
            sigma[i, j] = np.array(vals[k:]).reshape(k, k)
            count[i, j] = int(r[2 + k + k * k])
            unknown[i, j] = bool(int(r[3 + k + k * k]))
        return cls(mu, sigma, count, unknown, action_ids, estimator)


def build_moment_table(
    queries,
    action_ids,
    dataset: Dataset,
    method: str,
    cfg: EstimatorConfig,
) -> MomentTable:
    """Estimate moments for every (query, action) cell.

    A cell whose neighborhood holds no action-a sample retries once with a
    doubled neighborhood; if still empty it falls back to mu = 0,
    sigma = eps_sigma * I and is flagged unknown for the pessimism layer.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    qvecs = np.atleast_2d(
        np.stack([_query_vector(q) for q in queries])
        if not isinstance(queries, np.ndarray)
        else queries
    )
    action_ids = [int(a) for a in action_ids]
    n_sup, n_act, k = len(qvecs), len(action_ids), dataset.deltas.shape[1]
    mu = np.zeros((n_sup, n_act, k))
    sigma = np.zeros((n_sup, n_act, k, k))
    count = np.zeros((n_sup, n_act), dtype=int)
    unknown = np.zeros((n_sup, n_act), dtype=bool)
    fallback = 0
    needs_prop = method in (IPW, DR)

    for i, q in enumerate(qvecs):
        ctx = _NeighborhoodContext(q, dataset, action_ids, cfg, needs_prop)
        for j, a in enumerate(action_ids):
            deltas, actions, e_col, n_a = ctx.for_action(a)
            count[i, j] = n_a
            if n_a == 0:
                fallback += 1
                mu[i, j] = 0.0
                sigma[i, j] = cfg.eps_sigma * np.eye(k)
                unknown[i, j] = True
                continue
            if method == REGRESSION:
                m_hat = knn_mu(deltas, actions, a)
                s_hat = reg_sigma(deltas, actions, a)
            elif method == IPW:
                m_hat = ipw_mu(deltas, actions, a, e_col)
                s_hat = ipw_sigma(deltas, actions, a, e_col)
            else:
                m_nr = knn_mu(deltas, actions, a)
                s_nr = reg_sigma(deltas, actions, a)
                m_hat = dr_mu(deltas, actions, a, e_col, m_nr)
                s_hat = dr_sigma(deltas, actions, a, e_col, s_nr)
            mu[i, j] = m_hat
            sigma[i, j] = psd_project(s_hat, cfg.eps_sigma)
    return MomentTable(mu, sigma, count, unknown, action_ids, method, fallback)


class _NeighborhoodContext:
    """Per-support neighborhood state shared across the action loop.

    Lazily computes the doubled-k_n retry set the first time an action has
    no support in the base neighborhood.
    """

    def __init__(self, q, dataset, action_ids, cfg, needs_prop):
        self.q = q
        self.dataset = dataset
        self.action_ids = action_ids
        self.cfg = cfg
        self.needs_prop = needs_prop
        self.base = self._materialize(cfg.k_n)
        self.doubled = None

    def _materialize(self, k_n):
        nbhd = select_neighborhood(self.q, self.dataset, k_n)
        idx = nbhd.indices
        deltas = self.dataset.deltas[idx]
        actions = self.dataset.action_ids[idx]
        E = None
        if self.needs_prop:
            model = LocalPropensity(
                self.dataset.U[idx],
                actions,
                self.action_ids,
                self.dataset.scaler,
                self.cfg.bandwidth,
                self.cfg.eps_propensity,
                self.cfg.kde_feature_only,
            )
            E = model.at(self.dataset.U[idx])
        return deltas, actions, E

    def for_action(self, a):
        deltas, actions, E = self.base
        n_a = int(np.sum(actions == a))
        if n_a == 0 and self.cfg.k_n < len(self.dataset):
            if self.doubled is None:
                self.doubled = self._materialize(2 * self.cfg.k_n)
            deltas, actions, E = self.doubled
            n_a = int(np.sum(actions == a))
        e_col = None
        if E is not None:
            e_col = E[:, self.action_ids.index(a)]
        return deltas, actions, e_col, n_a
