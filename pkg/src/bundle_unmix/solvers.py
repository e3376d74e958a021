"""Bundle unmixing solvers.

Three ADMM drivers share one iteration framework:

* :func:`fcls` - simplex-constrained least squares (inter-group scheme
  with zero regularisation),
* :func:`solve_inter` - inter-group sparsity, ``lam * sum_l f(||a_Gl||_2)``,
* :func:`solve_swag` - sparsity within and across groups,
  ``lam * sum_l f(sum_{j in G_l} a_j)``.

All inputs are dense ``float64`` arrays: ``X`` is bands x pixels, ``B``
is bands x r and abundances are r x pixels.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .data import GroupStructure, validate_groups
from .prox import PenaltySpec, group_prox_columns, penalty_value, project_simplex, prox_scalar

log = logging.getLogger(__name__)

SOLVERS = ("fcls", "inter", "swag")


class SolverDivergence(RuntimeError):
    """An iterate became non-finite (usually rho too small for lam)."""


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 0.0
    rho: float = 1.0
    max_iters: int = 1000
    primal_tol: float = 0.0
    seed: int = 0
    track_objective: bool = False

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not self.rho > 0:
            raise ValueError(f"rho must be > 0, got {self.rho}")
        if int(self.max_iters) < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.primal_tol >= 0:
            raise ValueError(f"primal_tol must be >= 0, got {self.primal_tol}")


@dataclass
class SolverState:
    """Iterates of one ADMM run; ``U, C`` are k x n for SWAG, r x n otherwise."""

    A: np.ndarray
    U: np.ndarray
    V: np.ndarray
    C: np.ndarray
    D: np.ndarray
    iter: int = 0
    primal_residuals: list = field(default_factory=list)


@dataclass
class UnmixResult:
    A_hat: np.ndarray
    B: np.ndarray
    groups: GroupStructure
    iterations_run: int
    final_residual: float
    residuals: np.ndarray = None
    objective: Optional[np.ndarray] = None

    @property
    def M_hat(self) -> np.ndarray:
        return collapse_abundance(self.A_hat, self.groups)

    def endmembers(self, i: int) -> np.ndarray:
        return per_pixel_endmembers(self.A_hat, self.B, self.groups, i)

    @property
    def S_hat(self) -> np.ndarray:
        """w x k x n stack of per-pixel endmembers (computed on access)."""
        return endmember_stack(self.A_hat, self.B, self.groups)

    def reconstruct(self) -> np.ndarray:
        return reconstruct(self.A_hat, self.B)


# ------------------------------------------------------------ recovery maps


def collapse_abundance(A: np.ndarray, groups: GroupStructure) -> np.ndarray:
    if A.shape[0] != groups.r:
        raise ValueError(f"abundance has {A.shape[0]} rows, groups cover {groups.r}")
    return np.add.reduceat(A, groups.starts, axis=0)


def per_pixel_endmembers(A, B, groups: GroupStructure, i: int) -> np.ndarray:
    """Abundance-weighted mean signature of each group at pixel ``i`` (w x k).

    A group with (numerically) zero abundance falls back to the plain mean
    of its bundle columns.
    """
    a = A[:, i]
    S = np.empty((B.shape[0], groups.k))
    for l, rg in enumerate(groups.ranges()):
        w = a[rg.start:rg.stop]
        Bl = B[:, rg.start:rg.stop]
        total = w.sum()
        S[:, l] = Bl @ w / total if total >= 1e-12 else Bl.mean(axis=1)
    return S


def endmember_stack(A, B, groups: GroupStructure) -> np.ndarray:
    w, n = B.shape[0], A.shape[1]
    S = np.empty((w, groups.k, n))
    for l, rg in enumerate(groups.ranges()):
        Al = A[rg.start:rg.stop]
        Bl = B[:, rg.start:rg.stop]
        total = Al.sum(axis=0)
        ok = total >= 1e-12
        S[:, l, :] = Bl.mean(axis=1, keepdims=True)
        S[:, l, ok] = (Bl @ Al[:, ok]) / total[ok]
    return S


def reconstruct(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    if B.shape[1] != A.shape[0]:
        raise ValueError(f"B has {B.shape[1]} columns but A has {A.shape[0]} rows")
    return B @ A


# ------------------------------------------------------------------ drivers


def _check_shapes(X, B, groups: Optional[GroupStructure]):
    X = np.asarray(X, dtype=float)
    B = np.asarray(B, dtype=float)
    if X.ndim != 2 or B.ndim != 2:
        raise ValueError("X and B must be 2-D matrices")
    if X.shape[0] != B.shape[0]:
        raise ValueError(f"X has {X.shape[0]} bands but B has {B.shape[0]} rows")
    if groups is not None:
        validate_groups(groups, B)
    return X, B


def objective(X, B, A, groups: GroupStructure, f: Optional[PenaltySpec], lam: float, scheme: str) -> float:
    """Data fit plus penalty for ``A`` (constraints not included)."""
    fit = 0.5 * float(np.sum((X - B @ A) ** 2))
    if lam == 0 or f is None:
        return fit
    if scheme == "swag":
        reg = penalty_value(f, collapse_abundance(A, groups))
    else:
        norms = np.sqrt(np.add.reduceat(A * A, groups.starts, axis=0))
        reg = penalty_value(f, norms)
    return fit + lam * reg


def _finish(state: SolverState, X, B, groups, cfg, objective_trace) -> UnmixResult:
    A_hat = project_simplex(state.A)
    res = np.asarray(state.primal_residuals, dtype=float).reshape(-1, 2)
    final = float(res[-1].max() / np.sqrt(state.A.size)) if len(res) else 0.0
    return UnmixResult(
        A_hat=A_hat,
        B=B,
        groups=groups,
        iterations_run=state.iter,
        final_residual=final,
        residuals=res,
        objective=np.asarray(objective_trace) if objective_trace is not None else None,
    )


def spd_solver(K: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Factor the constant SPD system matrix once; return ``rhs -> K^{-1} rhs``.

    The inverse is formed from the Cholesky factor and applied as a dense
    product, which is several times faster than triangular solves for the
    wide right-hand sides used here.
    """
    factor = cho_factor(K)
    Kinv = cho_solve(factor, np.eye(K.shape[0]))
    Kinv = 0.5 * (Kinv + Kinv.T)
    return lambda rhs: Kinv @ rhs


def _check_finite(*mats):
    for m in mats:
        if not np.all(np.isfinite(m)):
            raise SolverDivergence("non-finite iterate; try a larger rho or smaller lambda")


def _run_inter(X, B, groups, f, cfg, A0, callback):
    r, n = B.shape[1], X.shape[1]
    rho, thresh = cfg.rho, cfg.lam / cfg.rho
    BtX = B.T @ X
    solve = spd_solver(B.T @ B + 2.0 * rho * np.eye(r))
    starts, sizes = groups.starts, list(groups.sizes)
    A = A0.copy()
    state = SolverState(A=A, U=A.copy(), V=A0.copy(), C=np.zeros((r, n)), D=np.zeros((r, n)))
    obj = [] if cfg.track_objective else None
    scale = np.sqrt(r * n)
    for it in range(int(cfg.max_iters)):
        s = state
        s.U = solve(BtX + rho * (s.A + s.V + s.C + s.D))
        W = s.U - s.C
        if cfg.lam == 0 or f is None:
            s.A = W
        else:
            s.A = group_prox_columns(W, starts, sizes, thresh, f)
        s.V = project_simplex(s.U - s.D)
        dA = s.A - s.U
        dV = s.V - s.U
        s.C = s.C + dA
        s.D = s.D + dV
        s.iter = it + 1
        r1, r2 = np.linalg.norm(dA), np.linalg.norm(dV)
        s.primal_residuals.append((r1, r2))
        _check_finite(s.U, s.A)
        if obj is not None:
            obj.append(objective(X, B, s.A, groups, f, cfg.lam, "inter"))
        if callback is not None:
            callback(s)
        if cfg.primal_tol > 0 and max(r1, r2) / scale <= cfg.primal_tol:
            break
    return state, obj


def _run_swag(X, B, groups, f, cfg, A0, callback):
    r, n, k = B.shape[1], X.shape[1], groups.k
    rho, thresh = cfg.rho, cfg.lam / cfg.rho
    Z = groups.summation_matrix()
    BtX = B.T @ X
    solve = spd_solver(B.T @ B + rho * (Z.T @ Z) + rho * np.eye(r))
    state = SolverState(
        A=A0.copy(), U=Z @ A0, V=A0.copy(), C=np.zeros((k, n)), D=np.zeros((r, n))
    )
    obj = [] if cfg.track_objective else None
    scale = np.sqrt(r * n)
    for it in range(int(cfg.max_iters)):
        s = state
        s.A = solve(BtX + rho * (Z.T @ (s.U + s.C)) + rho * (s.V + s.D))
        ZA = Z @ s.A
        W = ZA - s.C
        s.U = W if cfg.lam == 0 else prox_scalar(f, W, thresh)
        s.V = project_simplex(s.A - s.D)
        dU = s.U - ZA
        dV = s.V - s.A
        s.C = s.C + dU
        s.D = s.D + dV
        s.iter = it + 1
        r1, r2 = np.linalg.norm(dU), np.linalg.norm(dV)
        s.primal_residuals.append((r1, r2))
        _check_finite(s.A, s.U)
        if obj is not None:
            obj.append(objective(X, B, s.A, groups, f, cfg.lam, "swag"))
        if callback is not None:
            callback(s)
        if cfg.primal_tol > 0 and max(r1, r2) / scale <= cfg.primal_tol:
            break
    return state, obj


def fcls_init(X: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Starting point for FCLS: unconstrained least squares, projected."""
    A, *_ = np.linalg.lstsq(B, X, rcond=None)
    return project_simplex(A)


def fcls(X, B, cfg: SolverConfig = SolverConfig(), groups: Optional[GroupStructure] = None,
         callback: Optional[Callable] = None) -> UnmixResult:
    """Fully constrained least squares via the inter-group ADMM with ``lam = 0``."""
    X, B = _check_shapes(X, B, groups)
    if groups is None:
        groups = GroupStructure([1] * B.shape[1])
    cfg = replace(cfg, lam=0.0)
    state, obj = _run_inter(X, B, groups, None, cfg, fcls_init(X, B), callback)
    return _finish(state, X, B, groups, cfg, obj)


def _initial_abundance(X, B, groups, cfg, init):
    if init is not None:
        A0 = np.asarray(init, dtype=float)
        if A0.shape != (B.shape[1], X.shape[1]):
            raise ValueError(f"init has shape {A0.shape}, expected {(B.shape[1], X.shape[1])}")
        return A0
    return fcls(X, B, replace(cfg, track_objective=False), groups).A_hat


def solve_inter(X, B, groups: GroupStructure, f: PenaltySpec, cfg: SolverConfig = SolverConfig(),
                init: Optional[np.ndarray] = None, callback: Optional[Callable] = None) -> UnmixResult:
    """Inter-group sparse unmixing.

    ``init`` is the starting abundance; by default it is the FCLS solution
    computed with the same ``rho`` and iteration budget.
    """
    X, B = _check_shapes(X, B, groups)
    A0 = _initial_abundance(X, B, groups, cfg, init)
    state, obj = _run_inter(X, B, groups, f, cfg, A0, callback)
    return _finish(state, X, B, groups, cfg, obj)


def solve_swag(X, B, groups: GroupStructure, f: PenaltySpec, cfg: SolverConfig = SolverConfig(),
               init: Optional[np.ndarray] = None, callback: Optional[Callable] = None) -> UnmixResult:
    """Unmixing with sparsity within and across groups (penalty on group sums)."""
    X, B = _check_shapes(X, B, groups)
    A0 = _initial_abundance(X, B, groups, cfg, init)
    state, obj = _run_swag(X, B, groups, f, cfg, A0, callback)
    return _finish(state, X, B, groups, cfg, obj)


def unmix(solver: str, X, B, groups: GroupStructure, f: Optional[PenaltySpec],
          cfg: SolverConfig, init=None, callback=None) -> UnmixResult:
    if solver == "fcls":
        return fcls(X, B, cfg, groups, callback=callback)
    if solver == "inter":
        return solve_inter(X, B, groups, f, cfg, init=init, callback=callback)
    if solver == "swag":
        return solve_swag(X, B, groups, f, cfg, init=init, callback=callback)
    raise ValueError(f"unknown solver {solver!r}; expected one of {SOLVERS}")
