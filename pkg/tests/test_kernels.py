import math

import numpy as np
import pytest

from causalnav.kernels import (
    GramSystem,
    KernelConfig,
    SingularSystemError,
    build_gram,
    generator_basis,
    generator_row,
    kernel_eval,
    kernel_grad,
    kernel_hessian,
)

CFG = KernelConfig(lengthscales=(1.0, 1.0, 0.8), regularization=1e-3)
RNG = np.random.default_rng(42)


def _fd_grad(x, y, cfg, h=1e-5):
    """Central finite-difference gradient of kernel_eval in x."""
    g = np.zeros_like(x)
    for d in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[d] += h
        xm[d] -= h
        g[d] = (kernel_eval(xp, y, cfg) - kernel_eval(xm, y, cfg)) / (2 * h)
    return g


def _fd_hess(x, y, cfg, h=1e-5):
    """Central finite-difference Hessian via differences of the analytic gradient."""
    k = len(x)
    H = np.zeros((k, k))
    for d in range(k):
        xp, xm = x.copy(), x.copy()
        xp[d] += h
        xm[d] -= h
        H[d] = (kernel_grad(xp, y, cfg) - kernel_grad(xm, y, cfg)) / (2 * h)
    return 0.5 * (H + H.T)


def _random_pair(span=2.0):
    x = RNG.uniform(-span, span, size=3)
    y = RNG.uniform(-span, span, size=3)
    return x, y


def test_kernel_config_validation():
    with pytest.raises(ValueError):
        KernelConfig(lengthscales=(1.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        KernelConfig(lengthscales=(1.0, 1.0, 1.0), regularization=-1e-6)


def test_kernel_eval_at_equal_points():
    x = np.array([0.3, -1.2, 0.5])
    assert kernel_eval(x, x, CFG) == pytest.approx(1.0)


def test_kernel_eval_closed_form_1d():
    cfg = KernelConfig(lengthscales=(1.0,), regularization=0.0, wrap_dims=())
    v = kernel_eval(np.array([0.0]), np.array([math.sqrt(2.0)]), cfg)
    assert v == pytest.approx(math.exp(-1.0), rel=1e-12)


def test_kernel_eval_symmetry():
    for _ in range(20):
        x, y = _random_pair()
        assert kernel_eval(x, y, CFG) == pytest.approx(kernel_eval(y, x, CFG), rel=1e-14)


def test_kernel_eval_range():
    for _ in range(20):
        x, y = _random_pair(span=5.0)
        v = kernel_eval(x, y, CFG)
        assert 0.0 < v <= 1.0


def test_kernel_grad_zero_at_equal_points():
    x = np.array([0.5, 0.1, -0.4])
    assert np.allclose(kernel_grad(x, x, CFG), 0.0)


def test_kernel_grad_closed_form_1d():
    cfg = KernelConfig(lengthscales=(1.0,), regularization=0.0, wrap_dims=())
    g = kernel_grad(np.array([1.0]), np.array([0.0]), cfg)
    assert g[0] == pytest.approx(-math.exp(-0.5), rel=1e-12)


def test_kernel_grad_matches_finite_differences():
    for _ in range(100):
        x, y = _random_pair()
        g = kernel_grad(x, y, CFG)
        fd = _fd_grad(x, y, CFG)
        assert np.allclose(g, fd, rtol=1e-6, atol=1e-9)


def test_kernel_hessian_at_equal_points_unit_lengthscales():
    cfg = KernelConfig(lengthscales=(1.0, 1.0, 1.0), wrap_dims=())
    x = np.array([1.0, 2.0, 3.0])
    assert np.allclose(kernel_hessian(x, x, cfg), -np.eye(3))


def test_kernel_hessian_matches_finite_differences():
    for _ in range(100):
        x, y = _random_pair()
        H = kernel_hessian(x, y, CFG)
        fd = _fd_hess(x, y, CFG)
        assert np.allclose(H, fd, rtol=1e-5, atol=1e-8)


def test_kernel_hessian_symmetric():
    for _ in range(20):
        x, y = _random_pair()
        H = kernel_hessian(x, y, CFG)
        assert np.max(np.abs(H - H.T)) < 1e-14


def test_kernel_wrapped_heading_continuity():
    # headings just either side of +-pi are close, not far
    a = np.array([0.0, 0.0, math.pi - 0.05])
    b = np.array([0.0, 0.0, -math.pi + 0.05])
    assert kernel_eval(a, b, CFG) > 0.99


def test_build_gram_single_support():
    gs = build_gram(np.array([[0.0, 0.0, 0.0]]), CFG)
    assert gs.K.shape == (1, 1)
    assert gs.K[0, 0] == pytest.approx(1.0)


def test_build_gram_duplicate_supports_lambda_zero_singular():
    cfg = KernelConfig(lengthscales=(1.0, 1.0, 0.8), regularization=0.0)
    sup = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    with pytest.raises(SingularSystemError):
        build_gram(sup, cfg)


def test_build_gram_solve_residual():
    sup = RNG.uniform(-3, 3, size=(12, 3))
    gs = build_gram(sup, CFG)
    b = RNG.normal(size=12)
    x = gs.solve(b)
    A = gs.K + CFG.regularization * np.eye(12)
    assert np.max(np.abs(A @ x - b)) < 1e-10


def test_gram_psd():
    sup = RNG.uniform(-4, 4, size=(30, 3))
    gs = build_gram(sup, CFG)
    eig = np.linalg.eigvalsh(gs.K)
    assert eig.min() >= -1e-8


def test_generator_row_null():
    sup = RNG.uniform(-2, 2, size=(6, 3))
    row = generator_row(np.zeros(3), np.zeros((3, 3)), sup[0], sup, CFG, gamma=0.9)
    assert np.allclose(row, 0.0)


def test_generator_row_drift_term_only():
    sup = RNG.uniform(-2, 2, size=(6, 3))
    mu = np.array([0.4, -0.2, 0.1])
    row = generator_row(mu, np.zeros((3, 3)), sup[2], sup, CFG, gamma=0.9)
    grads = kernel_grad(sup[2], sup, CFG)
    assert np.allclose(row, 0.9 * grads @ mu)


def test_generator_row_rejects_asymmetric_sigma():
    sup = RNG.uniform(-2, 2, size=(4, 3))
    sigma = np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(ValueError):
        generator_row(np.zeros(3), sigma, sup[0], sup, CFG, gamma=0.9)


def test_generator_row_matches_directional_fd_oracle():
    """gamma*(mu^T grad + 0.5 tr(sigma hess)) via finite differences of kernel_eval."""
    sup = RNG.uniform(-2, 2, size=(5, 3))
    mu = np.array([0.3, -0.5, 0.2])
    A = RNG.normal(size=(3, 3)) * 0.3
    sigma = A @ A.T
    gamma = 0.92
    s_i = sup[1]
    row = generator_row(mu, sigma, s_i, sup, CFG, gamma)

    h = 1e-4
    for j in range(len(sup)):
        grad_fd = _fd_grad(s_i.copy(), sup[j], CFG, h=h)
        hess_fd = np.zeros((3, 3))
        for d in range(3):
            xp, xm = s_i.copy(), s_i.copy()
            xp[d] += h
            xm[d] -= h
            hess_fd[d] = (_fd_grad(xp, sup[j], CFG, h=h) - _fd_grad(xm, sup[j], CFG, h=h)) / (2 * h)
        hess_fd = 0.5 * (hess_fd + hess_fd.T)
        expected = gamma * (mu @ grad_fd + 0.5 * np.trace(sigma @ hess_fd))
        assert row[j] == pytest.approx(expected, rel=1e-4, abs=1e-7)


def test_generator_row_linear_in_moments():
    sup = RNG.uniform(-2, 2, size=(7, 3))
    mu1, mu2 = RNG.normal(size=3), RNG.normal(size=3)
    s1 = np.diag(RNG.uniform(0.1, 1, size=3))
    s2 = np.diag(RNG.uniform(0.1, 1, size=3))
    a, b = 0.7, -1.3
    combo = generator_row(a * mu1 + b * mu2, a * s1 + b * s2, sup[0], sup, CFG, 0.9)
    parts = a * generator_row(mu1, s1, sup[0], sup, CFG, 0.9) + b * generator_row(
        mu2, s2, sup[0], sup, CFG, 0.9
    )
    assert np.allclose(combo, parts, atol=1e-12)


def test_generator_basis_matches_rowwise():
    sup = RNG.uniform(-2, 2, size=(8, 3))
    G, H = generator_basis(sup, CFG)
    for i in range(8):
        assert np.allclose(G[i], kernel_grad(sup[i], sup, CFG))
        assert np.allclose(H[i], kernel_hessian(sup[i], sup, CFG))
