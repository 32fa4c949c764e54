import re
import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from real2sim.nlls import (LAMBDA_MAX, NonFiniteError, ResidualBlock, SolverConfig, SolverError,
                           finite_difference_jacobian, smooth_l1_transform, solve, total_cost)


def rosenbrock_blocks():
    return [
        ResidualBlock("a", [0, 1], lambda x: [10 * (x[1] - x[0] ** 2)], lambda x: [[-20 * x[0], 10.0]]),
        ResidualBlock("b", [0], lambda x: [1 - x[0]], lambda x: [[-1.0]]),
    ]


def test_linear_block_exact():
    block = ResidualBlock("lin", [0], lambda x: x - 5, lambda x: np.eye(1))
    # two damped iterations leave a residual of order lambda0**2
    x, rep = solve([block], [0.0], SolverConfig(max_iterations=2))
    assert abs(x[0] - 5) < 1e-6
    assert rep.iterations <= 2
    x, _ = solve([block], [0.0])
    assert abs(x[0] - 5) < 1e-10


def test_rosenbrock():
    x, rep = solve(rosenbrock_blocks(), [-1.2, 1.0])
    np.testing.assert_allclose(x, [1, 1], atol=1e-6)
    assert rep.final_cost <= rep.initial_cost
    assert rep.final_cost >= 0


def test_rosenbrock_without_analytic_jacobian():
    blocks = [ResidualBlock(b.name, b.indices, b.residual) for b in rosenbrock_blocks()]
    x, _ = solve(blocks, [-1.2, 1.0])
    np.testing.assert_allclose(x, [1, 1], atol=1e-6)


def test_constant_residual_stops_on_gradient():
    block = ResidualBlock("const", [0, 1], lambda x: np.array([3.0, -1.0]), lambda x: np.zeros((2, 2)))
    x, rep = solve([block], [0.4, -2.0])
    assert rep.reason == "gradient_tol"
    assert rep.iterations == 0
    np.testing.assert_array_equal(x, [0.4, -2.0])


def test_history_is_monotone():
    _, rep = solve(rosenbrock_blocks(), [-1.2, 1.0])
    assert all(b <= a for a, b in zip(rep.history, rep.history[1:]))
    assert set(rep.block_costs) == {"a", "b"}


def test_non_finite_initial_residual_names_block():
    good = ResidualBlock("fine", [0], lambda x: x)
    bad = ResidualBlock("broken", [1], lambda x: np.full(1, np.nan) * x)
    with pytest.raises(NonFiniteError, match="broken"):
        solve([good, bad], [1.0, 1.0])


def test_out_of_range_indices():
    with pytest.raises(IndexError):
        solve([ResidualBlock("oops", [3], lambda x: x)], [0.0, 1.0])


def test_damping_overflow_raises():
    # a block whose Jacobian points the wrong way can never reduce the cost
    block = ResidualBlock("liar", [0], lambda x: x ** 2 + 1, lambda x: np.array([[-0.01]]))
    with pytest.raises(SolverError, match=re.escape(f"{LAMBDA_MAX:g}")):
        solve([block], [1.0])


def test_linear_least_squares_matches_normal_equations():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(30, 6))
    b = rng.normal(size=30)
    block = ResidualBlock("ls", np.arange(6), lambda x: A @ x - b, lambda x: A)
    x, _ = solve([block], np.zeros(6))
    ref = np.linalg.solve(A.T @ A, A.T @ b)
    np.testing.assert_allclose(x, ref, atol=1e-8)


def test_sparse_path_matches_dense():
    # more parameters than the dense limit, chain-structured
    n = 2000
    rng = np.random.default_rng(1)
    target = rng.normal(size=n)
    D = sp.diags([np.ones(n - 1), -np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr")
    blocks = [
        ResidualBlock("data", np.arange(n), lambda x: x - target, lambda x: sp.identity(n, format="csr")),
        ResidualBlock("smooth", np.arange(n), lambda x: D @ x, lambda x: D, weight=4.0),
    ]
    x, _ = solve(blocks, np.zeros(n))
    A = sp.identity(n) + 4.0 * (D.T @ D)
    ref = sp.linalg.spsolve(A.tocsc(), target)
    np.testing.assert_allclose(x, ref, atol=1e-8)


def test_weight_scales_cost():
    b1 = ResidualBlock("w", [0], lambda x: x, weight=1.0)
    b3 = ResidualBlock("w", [0], lambda x: x, weight=3.0)
    assert total_cost([b3], [2.0]) == pytest.approx(3 * total_cost([b1], [2.0]))


@settings(max_examples=200, deadline=None)
@given(r=st.floats(-100, 100), delta=st.floats(1e-3, 10))
def test_smooth_l1_matches_huber(r, delta):
    out, d = smooth_l1_transform(np.array([r]), delta)
    huber = 0.5 * r * r if abs(r) <= delta else delta * (abs(r) - 0.5 * delta)
    assert 0.5 * out[0] ** 2 == pytest.approx(huber, rel=1e-9, abs=1e-12)
    # derivative of the transformed residual
    h = 1e-6 * max(1.0, abs(r))
    if abs(abs(r) - delta) > 2 * h:
        fp, _ = smooth_l1_transform(np.array([r + h]), delta)
        fm, _ = smooth_l1_transform(np.array([r - h]), delta)
        assert d[0] == pytest.approx((fp[0] - fm[0]) / (2 * h), rel=1e-4, abs=1e-6)


def test_robust_block_downweights_outlier():
    rng = np.random.default_rng(2)
    data = rng.normal(0, 0.01, size=50)
    data[:5] = 10.0
    plain = ResidualBlock("plain", [0], lambda x: x[0] - data, lambda x: np.ones((50, 1)))
    robust = ResidualBlock("robust", [0], lambda x: x[0] - data, lambda x: np.ones((50, 1)),
                           robust="smooth_l1", delta=0.05)
    xp, _ = solve([plain], [0.0])
    xr, _ = solve([robust], [0.0])
    assert abs(xp[0]) > 0.5
    assert abs(xr[0]) < 0.05


def test_fd_polynomial():
    block = ResidualBlock("sq", [0], lambda x: x ** 2)
    assert abs(finite_difference_jacobian(block, [3.0], h=1e-5)[0, 0] - 6.0) < 1e-8


def test_fd_linear_exact():
    A = np.array([[1.0, 2.0, -3.0], [0.5, 0.0, 4.0]])
    block = ResidualBlock("lin", [0, 1, 2], lambda x: A @ x, lambda x: A)
    np.testing.assert_allclose(finite_difference_jacobian(block, [0.3, -0.7, 2.0]), A, atol=1e-10)


def test_fd_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_difference_jacobian(ResidualBlock("x", [0], lambda x: x), [1.0], h=0.0)


@pytest.mark.parametrize("kw", [dict(max_iterations=0), dict(initial_lambda=-1), dict(lambda_up=0.9),
                                dict(lambda_down=1.0), dict(gradient_tol=0), dict(step_tol=-1)])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)
