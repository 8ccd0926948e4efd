"""Squared-exponential kernel calculus and Gram-system machinery.

The kernel k(x, y) = exp(-0.5 * sum_d ((x_d - y_d) / l_d)^2) acts on pose
vectors; the heading coordinate enters through its wrapped difference so the
interpolated value field stays continuous across +-pi. Analytic gradient and
Hessian support applying the drift-diffusion operator

    gamma * (mu^T grad + 0.5 * trace(sigma * hess))

to kernel columns, which is what the policy-evaluation linear system needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from causalnav.core import THETA_DIM, wrap_angle_array


class SingularSystemError(Exception):
    """Raised when (lambda*I + K) cannot be factorized."""


@dataclass(frozen=True)
class KernelConfig:
    """Per-dimension lengthscales and the Gram regularization factor."""

    lengthscales: tuple[float, ...] = (1.0, 1.0, 0.8)
    regularization: float = 1e-3
    wrap_dims: tuple[int, ...] = (THETA_DIM,)

    def __post_init__(self):
        ls = np.asarray(self.lengthscales, dtype=float)
        if ls.ndim != 1 or not np.all(ls > 0.0):
            raise ValueError(f"lengthscales must be positive, got {self.lengthscales}")
        if self.regularization < 0.0:
            raise ValueError(f"regularization must be >= 0, got {self.regularization}")
        object.__setattr__(self, "lengthscales", tuple(float(v) for v in ls))

    @cached_property
    def ls(self) -> np.ndarray:
        return np.asarray(self.lengthscales, dtype=float)


def _scaled_diff(x: np.ndarray, y: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    """(x - y) with wrapped dims, broadcast over leading axes of either side."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != len(cfg.lengthscales) or y.shape[-1] != len(cfg.lengthscales):
        raise ValueError("state dimension does not match kernel lengthscales")
    d = x - y
    for dim in cfg.wrap_dims:
        if dim < d.shape[-1]:
            d[..., dim] = wrap_angle_array(d[..., dim])
    return d


def kernel_eval(x, y, cfg: KernelConfig):
    """k(x, y); broadcasts over leading axes, values in (0, 1]."""
    d = _scaled_diff(x, y, cfg) / cfg.ls
    return np.exp(-0.5 * np.sum(d * d, axis=-1))


def kernel_grad(x, y, cfg: KernelConfig):
    """Gradient of k with respect to x: -(x - y) / l^2 * k(x, y)."""
    d = _scaled_diff(x, y, cfg)
    z = d / (cfg.ls**2)
    k = np.exp(-0.5 * np.sum((d / cfg.ls) ** 2, axis=-1))
    return -z * k[..., None]


def kernel_hessian(x, y, cfg: KernelConfig):
    """Hessian of k with respect to x: (z z^T - diag(1/l^2)) * k, z = (x-y)/l^2."""
    d = _scaled_diff(x, y, cfg)
    z = d / (cfg.ls**2)
    k = np.exp(-0.5 * np.sum((d / cfg.ls) ** 2, axis=-1))
    outer = z[..., :, None] * z[..., None, :]
    return (outer - np.diag(1.0 / cfg.ls**2)) * k[..., None, None]


@dataclass(frozen=True)
class GramSystem:
    """Supporting states with their Gram matrix and a factorization of (lambda*I + K)."""

    supports: np.ndarray
    K: np.ndarray
    cfg: KernelConfig
    _cho: tuple = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.supports.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve (lambda*I + K) x = b."""
        return scipy.linalg.cho_solve(self._cho, b)

    def kernel_row(self, x) -> np.ndarray:
        """k(x, supports) as a vector (or matrix for batched x)."""
        return kernel_eval(np.asarray(x, dtype=float)[..., None, :], self.supports, self.cfg)


def build_gram(supports: np.ndarray, cfg: KernelConfig) -> GramSystem:
    """Assemble K_ij = k(s^i, s^j) and factorize (lambda*I + K).

    Raises SingularSystemError when the regularized Gram matrix is not
    positive definite (e.g. duplicated supports with lambda = 0).
    """
    supports = np.asarray(supports, dtype=float)
    if supports.ndim != 2 or supports.shape[0] < 1:
        raise ValueError("supports must be a nonempty (N, k) array")
    K = kernel_eval(supports[:, None, :], supports[None, :, :], cfg)
    K = 0.5 * (K + K.T)
    A = K + cfg.regularization * np.eye(K.shape[0])
    try:
        cho = scipy.linalg.cho_factor(A)
    except scipy.linalg.LinAlgError as exc:
        raise SingularSystemError(
            f"(lambda*I + K) is not positive definite for N={K.shape[0]}, "
            f"lambda={cfg.regularization}: {exc}"
        ) from exc
    return GramSystem(supports=supports, K=K, cfg=cfg, _cho=cho)


def generator_row(
    mu: np.ndarray,
    sigma: np.ndarray,
    s_i: np.ndarray,
    supports: np.ndarray,
    cfg: KernelConfig,
    gamma: float,
) -> np.ndarray:
    """Row of the generator matrix: gamma*(mu^T grad + 0.5*tr(sigma*hess)) k(s_i, s^j)."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if not np.allclose(sigma, sigma.T, atol=1e-8):
        raise ValueError("sigma must be symmetric within 1e-8")
    s_i = np.asarray(s_i, dtype=float)
    grads = kernel_grad(s_i, supports, cfg)
    hess = kernel_hessian(s_i, supports, cfg)
    drift = grads @ mu
    diffusion = 0.5 * np.einsum("jde,de->j", hess, sigma)
    return gamma * (drift + diffusion)


def generator_basis(supports: np.ndarray, cfg: KernelConfig) -> tuple[np.ndarray, np.ndarray]:
    """All pairwise kernel gradients (N,N,k) and Hessians (N,N,k,k) w.r.t. the row state.

    Memory scales as N^2 k^2; callers should fall back to generator_row loops
    for very large supporting sets.
    """
    supports = np.asarray(supports, dtype=float)
    G = kernel_grad(supports[:, None, :], supports[None, :, :], cfg)
    H = kernel_hessian(supports[:, None, :], supports[None, :, :], cfg)
    return G, H
