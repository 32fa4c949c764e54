"""Damped nonlinear least squares (Levenberg-Marquardt) over residual blocks.

A problem is a list of `ResidualBlock` objects, each reading a slice of one
shared parameter vector. The total cost is::

    cost(x) = sum_b weight_b * 0.5 * || rho_b(r_b(x[idx_b])) ||^2

where ``rho_b`` is the identity or the smooth-L1 residual transform
(`smooth_l1_transform`), chosen so that ``0.5 * rho(r)^2`` equals the Huber
penalty of ``r``.

Block Jacobians may be dense arrays or scipy sparse matrices. The normal
equations are solved with a dense Cholesky factorization for small problems
and a sparse LU factorization for large ones.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

LAMBDA_MIN = 1e-12
LAMBDA_MAX = 1e12
DENSE_LIMIT = 1500


class SolverError(RuntimeError):
    """Raised when the solver cannot make progress or hits invalid values."""

    def __init__(self, message: str, block_costs: Optional[dict] = None):
        super().__init__(message)
        self.block_costs = block_costs or {}


class NonFiniteError(SolverError):
    pass


@dataclass
class ResidualBlock:
    """One term of the objective.

    Args:
        name: label used in reports and error messages.
        indices: positions of the block's parameters in the global vector.
        residual: ``f(x_slice) -> (m,)`` residual vector.
        jacobian: optional ``f(x_slice) -> (m, len(indices))`` dense or sparse
            matrix. When absent the solver differentiates numerically.
        robust: ``None`` or ``"smooth_l1"``.
        delta: smooth-L1 transition point, in residual units.
        weight: non-negative multiplier on the block cost.
    """

    name: str
    indices: np.ndarray
    residual: Callable[[np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray], object]] = None
    robust: Optional[str] = None
    delta: float = 1.0
    weight: float = 1.0

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if self.robust not in (None, "smooth_l1"):
            raise ValueError(f"unknown robustifier {self.robust!r}")
        if self.weight < 0:
            raise ValueError("block weight must be non-negative")
        if self.delta <= 0:
            raise ValueError("smooth-L1 delta must be positive")

    def raw(self, x_slice: np.ndarray) -> np.ndarray:
        return np.asarray(self.residual(x_slice), dtype=float).reshape(-1)

    def evaluate(self, x_slice: np.ndarray) -> np.ndarray:
        """Weighted and robustified residual."""
        r = self.raw(x_slice)
        if self.robust == "smooth_l1":
            r, _ = smooth_l1_transform(r, self.delta)
        return np.sqrt(self.weight) * r

    def raw_jacobian(self, x_slice: np.ndarray):
        if self.jacobian is None:
            return finite_difference_jacobian(self, x_slice, raw=True)
        J = self.jacobian(x_slice)
        return J if sp.issparse(J) else np.asarray(J, dtype=float)

    def linearize(self, x_slice: np.ndarray):
        """Return (weighted residual, weighted Jacobian)."""
        r = self.raw(x_slice)
        J = self.raw_jacobian(x_slice)
        scale = np.full(r.shape, np.sqrt(self.weight))
        if self.robust == "smooth_l1":
            r, dr = smooth_l1_transform(r, self.delta)
            scale = scale * dr
        r = np.sqrt(self.weight) * r
        if sp.issparse(J):
            J = sp.diags(scale) @ J
        else:
            J = scale[:, None] * J
        return r, J

    def cost(self, x_slice: np.ndarray) -> float:
        r = self.evaluate(x_slice)
        return 0.5 * float(r @ r)


def smooth_l1_transform(r: np.ndarray, delta: float):
    """Map residuals so that ``0.5 * out**2`` equals the Huber loss of ``r``.

    Returns the transformed residual and its elementwise derivative.
    """
    a = np.abs(r)
    outer = a > delta
    out = r.copy()
    d = np.ones_like(r)
    if np.any(outer):
        root = np.sqrt(2.0 * delta * a[outer] - delta * delta)
        out[outer] = np.sign(r[outer]) * root
        d[outer] = delta / root
    return out, d


@dataclass
class SolverConfig:
    max_iterations: int = 200
    initial_lambda: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    gradient_tol: float = 1e-8
    cost_tol: float = 1e-10
    step_tol: float = 1e-12

    def __post_init__(self):
        for name in ("max_iterations", "initial_lambda", "gradient_tol", "cost_tol", "step_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (self.lambda_up > 1.0 > self.lambda_down > 0.0):
            raise ValueError("need lambda_up > 1 > lambda_down > 0")


@dataclass
class SolveReport:
    initial_cost: float
    final_cost: float
    iterations: int
    reason: str
    block_costs: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.reason != "max_iterations"


def finite_difference_jacobian(block: ResidualBlock, params: np.ndarray, h: float = 1e-6,
                               raw: bool = True) -> np.ndarray:
    """Central-difference Jacobian of a block at ``params`` (the block's slice).

    With ``raw=True`` the unweighted, unrobustified residual is differentiated.
    """
    if not h > 0:
        raise ValueError("step must be positive")
    f = block.raw if raw else block.evaluate
    x = np.array(params, dtype=float)
    r0 = f(x)
    J = np.empty((r0.size, x.size))
    for k in range(x.size):
        step = h * max(1.0, abs(x[k]))
        xp = x.copy()
        xm = x.copy()
        xp[k] += step
        xm[k] -= step
        rp, rm = f(xp), f(xm)
        if not (np.all(np.isfinite(rp)) and np.all(np.isfinite(rm))):
            raise NonFiniteError(f"non-finite residual in block {block.name!r} during differencing")
        J[:, k] = (rp - rm) / (xp[k] - xm[k])
    return J


def _evaluate_all(blocks, x):
    res = []
    costs = {}
    for b in blocks:
        r = b.evaluate(x[b.indices])
        res.append(r)
        costs[b.name] = costs.get(b.name, 0.0) + 0.5 * float(r @ r)
    return res, costs


def _linearize_all(blocks, x, n):
    rows = []
    res = []
    for b in blocks:
        r, J = b.linearize(x[b.indices])
        if not (np.all(np.isfinite(r)) and (np.all(np.isfinite(J.data)) if sp.issparse(J) else np.all(np.isfinite(J)))):
            raise NonFiniteError(f"non-finite residual or Jacobian in block {b.name!r}")
        Jc = sp.coo_matrix(J)
        # scatter the block columns into global parameter positions
        rows.append(sp.csr_matrix((Jc.data, (Jc.row, b.indices[Jc.col])), shape=(r.size, n)))
        res.append(r)
    J = sp.vstack(rows, format="csr") if rows else sp.csr_matrix((0, n))
    r = np.concatenate(res) if res else np.zeros(0)
    return r, J


def solve(blocks: Sequence[ResidualBlock], initial_params, config: SolverConfig | None = None):
    """Minimize the summed block cost starting from ``initial_params``.

    Returns ``(params, SolveReport)``. Accepted steps never increase the cost.
    """
    config = config or SolverConfig()
    x = np.array(initial_params, dtype=float)
    n = x.size
    for b in blocks:
        if b.indices.size and (b.indices.min() < 0 or b.indices.max() >= n):
            raise IndexError(f"block {b.name!r} indexes outside the parameter vector")

    res, costs = _evaluate_all(blocks, x)
    for b, r in zip(blocks, res):
        if not np.all(np.isfinite(r)):
            raise NonFiniteError(f"non-finite residual in block {b.name!r} at the initial point", costs)
    cost = sum(costs.values())
    initial_cost = cost
    lam = config.initial_lambda
    history = [cost]
    reason = "max_iterations"
    it = 0

    while it < config.max_iterations:
        r, J = _linearize_all(blocks, x, n)
        g = J.T @ r
        if np.max(np.abs(g), initial=0.0) <= config.gradient_tol:
            reason = "gradient_tol"
            break
        H = (J.T @ J).tocsc()
        diag = H.diagonal()
        active = diag > 0
        idx = np.nonzero(active)[0]
        Ha = H[idx][:, idx]
        ga = g[idx]
        Da = diag[idx]
        it += 1
        accepted = False
        while True:
            delta = _solve_damped(Ha, Da, ga, lam)
            if delta is not None:
                step = np.zeros(n)
                step[idx] = delta
                if np.linalg.norm(step) <= config.step_tol * (np.linalg.norm(x) + config.step_tol):
                    reason = "step_tol"
                    break
                x_new = x + step
                res_new, costs_new = _evaluate_all(blocks, x_new)
                new_cost = sum(costs_new.values())
                if np.isfinite(new_cost) and new_cost < cost:
                    accepted = True
                    break
            lam *= config.lambda_up
            if lam > LAMBDA_MAX:
                raise SolverError(
                    f"damping exceeded {LAMBDA_MAX:g} without reducing the cost "
                    f"(cost={cost:.6g}, iteration={it})", costs)
        if not accepted:
            break
        decrease = cost - new_cost
        x, cost, costs = x_new, new_cost, costs_new
        history.append(cost)
        lam = max(lam * config.lambda_down, LAMBDA_MIN)
        if decrease <= config.cost_tol * max(cost, 1e-300) or cost == 0.0:
            reason = "cost_tol"
            break
    log.debug("LM finished: %s after %d iterations, cost %.6g -> %.6g", reason, it, initial_cost, cost)
    return x, SolveReport(initial_cost=initial_cost, final_cost=cost, iterations=it, reason=reason,
                          block_costs=costs, history=history)


def _solve_damped(H, D, g, lam):
    """Solve ``(H + lam * diag(D)) d = -g``; returns None on factorization failure."""
    m = H.shape[0]
    A = H + sp.diags(lam * D)
    try:
        if m <= DENSE_LIMIT:
            c, low = scipy.linalg.cho_factor(A.toarray(), check_finite=False)
            return -scipy.linalg.cho_solve((c, low), g, check_finite=False)
        # the damped normal matrix is symmetric positive definite: symmetric ordering, diagonal pivots
        lu = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
        d = -lu.solve(g)
        return d if np.all(np.isfinite(d)) else None
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, RuntimeError):
        return None


def total_cost(blocks: Sequence[ResidualBlock], x) -> float:
    x = np.asarray(x, dtype=float)
    return sum(b.cost(x[b.indices]) for b in blocks)
