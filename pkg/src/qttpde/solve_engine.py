"""Alternating two-site solver for TT linear systems and the end-to-end pipeline.

Contents: a DMRG-style solver with rank adaptation by truncated SVD, a
rank-one update solver (Sherman-Morrison), the boundary-condition transfer
that rewrites an interior-Dirichlet system as a dyadic-Neumann one plus a
rank-one correction, and ``solve_perturbed``, which chains lifting,
transfer, preconditioning, and the solver into one call.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .bpx_precond import build_B
from .fem_assembly import ProblemSpec, RhsSpec, assemble_system
from .qtt_build import qtt_polynomial
from .tt_core import (
    RankProfile,
    TtCore,
    TtMatrix,
    TtVector,
    axpy,
    dot,
    matvec,
    norm,
    outer_product,
    scale,
    tt_basis_vector,
    tt_round,
    tt_zero,
)

_LOCAL_SOLVERS = ("direct-dense",)


class SolverError(RuntimeError):
    """Base class for solver failures."""


class RankCapError(SolverError):
    """Rank adaptation would exceed the configured cap."""


class SingularUpdateError(SolverError):
    """The rank-one update denominator is numerically zero."""


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and limits for the alternating solver.

    ``eps_tol`` doubles as the relative residual target and the accuracy
    parameter for every TT rounding performed inside a solve.
    """

    eps_tol: float = 1e-10
    max_sweeps: int = 50
    rank_cap: int = 200
    local_solver: str = "direct-dense"
    seed: int = 0

    def __post_init__(self) -> None:
        if not 1e-14 <= self.eps_tol <= 1e-2:
            raise ValueError(
                f"eps_tol must lie in [1e-14, 1e-2], got {self.eps_tol}"
            )
        if self.max_sweeps < 1:
            raise ValueError(f"max_sweeps must be positive, got {self.max_sweeps}")
        if self.rank_cap < 1:
            raise ValueError(f"rank_cap must be positive, got {self.rank_cap}")
        if self.local_solver not in _LOCAL_SOLVERS:
            raise ValueError(
                f"unknown local solver {self.local_solver!r}; "
                f"supported: {_LOCAL_SOLVERS}"
            )


@dataclass(frozen=True)
class SolveReport:
    """Outcome of one solve.

    ``residual_history`` holds the true relative residual measured in TT
    arithmetic after each full sweep; it is not necessarily monotone.
    ``n_dof`` counts the parameters of the representation the sweeping
    solver worked with: for a direct solve, the returned chain; for the
    mapped pipeline, the preconditioned unknown (the returned solution
    is recompressed afterwards, so its own parameter count understates
    the cost of computing it, while ``rank_profile`` always describes
    the returned chain).
    """

    converged: bool
    sweeps: int
    residual_history: tuple[float, ...]
    final_relative_residual: float
    rank_profile: RankProfile
    n_dof: int
    wall_time: float


# ---------- internal dense helpers on raw 3d/4d core arrays ----------


def _vec3(x: TtVector) -> list[np.ndarray]:
    return [c.entries[:, :, 0, :].copy() for c in x.cores]


def _op4(a: TtMatrix) -> list[np.ndarray]:
    return [c.entries for c in a.cores]


def _rebuild_vector(cores3: list[np.ndarray]) -> TtVector:
    return TtVector(tuple(TtCore(c[:, :, None, :]) for c in cores3))


def _right_orthogonalize3(cores3: list[np.ndarray]) -> list[np.ndarray]:
    out = list(cores3)
    for k in range(len(out) - 1, 0, -1):
        r, t, q = out[k].shape
        qmat, rmat = np.linalg.qr(out[k].reshape(r, t * q).T, mode="reduced")
        out[k] = qmat.T.reshape(-1, t, q)
        out[k - 1] = np.einsum("ptr,rs->pts", out[k - 1], rmat.T, optimize=True)
    return out


def _advance_left_op(env: np.ndarray, xk: np.ndarray, ak: np.ndarray) -> np.ndarray:
    # env (a, A, c); xk (c|a, 2, .); ak (A, i, j, B) -> (b, B, c2)
    t = np.tensordot(env, xk, axes=([2], [0]))  # (a, A, j, c2)
    t = np.tensordot(t, ak, axes=([1, 2], [0, 2]))  # (a, c2, i, B)
    t = np.tensordot(xk, t, axes=([0, 1], [0, 2]))  # (b, c2, B)
    return np.ascontiguousarray(t.transpose(0, 2, 1))


def _advance_right_op(env: np.ndarray, xk: np.ndarray, ak: np.ndarray) -> np.ndarray:
    # env (b, B, d); ak (A, i, j, B) -> (a, A, c)
    t = np.tensordot(xk, env, axes=([2], [2]))  # (c, j, b, B)
    t = np.tensordot(t, ak, axes=([1, 3], [2, 3]))  # (c, b, A, i)
    t = np.tensordot(t, xk, axes=([1, 3], [2, 1]))  # (c, A, a)
    return np.ascontiguousarray(t.transpose(2, 1, 0))


def _advance_left_rhs(env: np.ndarray, xk: np.ndarray, bk: np.ndarray) -> np.ndarray:
    t = np.tensordot(env, bk, axes=([1], [0]))  # (a, i, beta2)
    return np.tensordot(xk, t, axes=([0, 1], [0, 1]))  # (b, beta2)


def _advance_right_rhs(env: np.ndarray, xk: np.ndarray, bk: np.ndarray) -> np.ndarray:
    t = np.tensordot(bk, env, axes=([2], [1]))  # (beta, i, b)
    return np.tensordot(t, xk, axes=([1, 2], [1, 2])).T  # (a, beta)


def _local_operator(el: np.ndarray, ak: np.ndarray, ak1: np.ndarray,
                    er: np.ndarray) -> np.ndarray:
    t1 = np.tensordot(el, ak, axes=([1], [0]))  # (a, a2, i, j, B)
    t2 = np.tensordot(ak1, er, axes=([3], [1]))  # (B, m, n, b, b2)
    h = np.tensordot(t1, t2, axes=([4], [0]))  # (a, a2, i, j, m, n, b, b2)
    h = h.transpose(0, 2, 4, 6, 1, 3, 5, 7)
    d = h.shape[0] * 2 * 2 * h.shape[3]
    return np.ascontiguousarray(h.reshape(d, d))


def _local_rhs(el: np.ndarray, bk: np.ndarray, bk1: np.ndarray,
               er: np.ndarray) -> np.ndarray:
    t = np.tensordot(el, bk, axes=([1], [0]))  # (a, i, beta2)
    t = np.tensordot(t, bk1, axes=([2], [0]))  # (a, i, m, beta3)
    t = np.tensordot(t, er, axes=([3], [1]))  # (a, i, m, b)
    return np.ascontiguousarray(t).ravel()


def _solve_local(h: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    h = 0.5 * (h + h.T)
    try:
        c, low = scipy.linalg.cho_factor(h, check_finite=False)
        return scipy.linalg.cho_solve((c, low), rhs, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        return np.linalg.lstsq(h, rhs, rcond=None)[0]


def _split_rank(s: np.ndarray, budget: float) -> int:
    if s.size == 0:
        return 1
    tails = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]
    keep = int(np.searchsorted(-tails, -budget, side="right"))
    return max(keep, 1)


def _true_residual(a: TtMatrix, x: TtVector, b: TtVector, bnorm: float) -> float:
    return norm(axpy(-1.0, matvec(a, x), b)) / bnorm


def _count_parameters(x: TtVector) -> int:
    return int(sum(c.entries.size for c in x.cores))


def dmrg_solve(
    a: TtMatrix, b: TtVector, cfg: SolverConfig
) -> tuple[TtVector, SolveReport]:
    """Solve a x = b for a symmetric positive definite TT operator.

    Alternating two-site sweeps: each local problem is projected through
    the current orthogonal frames and solved by a dense direct
    factorization, and the merged core is split back by a truncated SVD
    whose tolerance is derived from ``cfg.eps_tol``.  Convergence is
    declared only when the independently evaluated TT residual satisfies
    ``||a x - b|| <= eps_tol * ||b||``; running out of sweeps returns
    ``converged=False`` rather than a silent wrong answer.  The algorithm
    is deterministic for fixed inputs and configuration.
    """
    t0 = time.perf_counter()
    if len(a.cores) != len(b.cores):
        raise ValueError(
            f"operator level {len(a.cores)} != right-hand side level {len(b.cores)}"
        )
    for k, core in enumerate(a.cores):
        if core.mode_rows != 2 or core.mode_cols != 2:
            raise ValueError(f"operator core {k} must have mode size 2x2")
    d = len(b.cores)
    bnorm = norm(b)
    if bnorm == 0.0:
        x = tt_zero(d)
        return x, SolveReport(
            converged=True,
            sweeps=0,
            residual_history=(),
            final_relative_residual=0.0,
            rank_profile=RankProfile.of(x),
            n_dof=_count_parameters(x),
            wall_time=time.perf_counter() - t0,
        )

    acores = _op4(a)
    bcores = _vec3(b)

    if d == 1:
        hd = acores[0][0, :, :, 0]
        xd = np.linalg.solve(0.5 * (hd + hd.T), bcores[0][0, :, 0])
        x = _rebuild_vector([xd.reshape(1, 2, 1)])
        res = _true_residual(a, x, b, bnorm)
        return x, SolveReport(
            converged=res <= cfg.eps_tol,
            sweeps=1,
            residual_history=(res,),
            final_relative_residual=res,
            rank_profile=RankProfile.of(x),
            n_dof=_count_parameters(x),
            wall_time=time.perf_counter() - t0,
        )

    # deterministic start: low-rank compression of the right-hand side
    xcores = _right_orthogonalize3(_vec3(tt_round(b, cfg.eps_tol, max_rank=2)))

    # environments: index k holds the contraction strictly left/right of core k
    env_a: list[np.ndarray | None] = [None] * (d + 1)
    env_b: list[np.ndarray | None] = [None] * (d + 1)
    env_a[0] = np.ones((1, 1, 1))
    env_b[0] = np.ones((1, 1))
    env_a[d] = np.ones((1, 1, 1))
    env_b[d] = np.ones((1, 1))
    for k in range(d - 1, 0, -1):
        env_a[k] = _advance_right_op(env_a[k + 1], xcores[k], acores[k])
        env_b[k] = _advance_right_rhs(env_b[k + 1], xcores[k], bcores[k])

    # distribute the rounding budget over the bonds touched in one sweep
    local_eps = cfg.eps_tol / (2.0 * math.sqrt(d - 1))

    def _update(k: int, to_right: bool) -> None:
        h = _local_operator(env_a[k], acores[k], acores[k + 1], env_a[k + 2])
        rhs = _local_rhs(env_b[k], bcores[k], bcores[k + 1], env_b[k + 2])
        w = _solve_local(h, rhs)
        rl = env_a[k].shape[0]
        rr = env_a[k + 2].shape[0]
        u, s, vt = np.linalg.svd(w.reshape(rl * 2, 2 * rr), full_matrices=False)
        r = _split_rank(s, local_eps * float(np.linalg.norm(s)))
        if r > cfg.rank_cap:
            raise RankCapError(
                f"bond {k + 1} requires rank {r} to meet the tolerance but the "
                f"cap is {cfg.rank_cap}; raise rank_cap or loosen eps_tol"
            )
        if to_right:
            xcores[k] = u[:, :r].reshape(rl, 2, r)
            xcores[k + 1] = (s[:r, None] * vt[:r]).reshape(r, 2, rr)
            env_a[k + 1] = _advance_left_op(env_a[k], xcores[k], acores[k])
            env_b[k + 1] = _advance_left_rhs(env_b[k], xcores[k], bcores[k])
        else:
            xcores[k + 1] = vt[:r].reshape(r, 2, rr)
            xcores[k] = (u[:, :r] * s[:r]).reshape(rl, 2, r)
            env_a[k + 1] = _advance_right_op(env_a[k + 2], xcores[k + 1],
                                             acores[k + 1])
            env_b[k + 1] = _advance_right_rhs(env_b[k + 2], xcores[k + 1],
                                              bcores[k + 1])

    history: list[float] = []
    converged = False
    sweeps = 0
    for sweep in range(cfg.max_sweeps):
        sweeps = sweep + 1
        for k in range(d - 1):
            _update(k, to_right=True)
        for k in range(d - 2, -1, -1):
            _update(k, to_right=False)
        x = _rebuild_vector([c.copy() for c in xcores])
        res = _true_residual(a, x, b, bnorm)
        history.append(res)
        if res <= cfg.eps_tol:
            converged = True
            break

    x = _rebuild_vector(xcores)
    return x, SolveReport(
        converged=converged,
        sweeps=sweeps,
        residual_history=tuple(history),
        final_relative_residual=history[-1],
        rank_profile=RankProfile.of(x),
        n_dof=_count_parameters(x),
        wall_time=time.perf_counter() - t0,
    )


def sherman_morrison_solve(
    solve: Callable[[TtVector], TtVector],
    u: TtVector,
    v: TtVector,
    y: TtVector,
    eps_tol: float = 1e-12,
) -> TtVector:
    """Solve (B + u v^T) x = y given a solver for B alone.

    Runs the base solver twice (on y and on u) and combines
    x = x1 - (v.x1)/(1 + v.x2) * x2, with a single TT rounding at
    ``eps_tol`` after the combination.
    """
    x1 = solve(y)
    x2 = solve(u)
    den = 1.0 + dot(v, x2)
    if abs(den) < 1e-12 * norm(v) * norm(x2):
        raise SingularUpdateError(
            f"rank-one update is singular: 1 + v.x2 = {den:.3e}"
        )
    coef = dot(v, x1) / den
    return tt_round(axpy(-coef, x2, x1), eps_tol)


@dataclass(frozen=True)
class ScaleMap:
    """Index-aligned correspondence between the two interior grids.

    Coefficient i of the unknown vector refers to node (i+1)*h_dd on the
    interior-Dirichlet grid and to node (i+1)*h_dn on the dyadic-Neumann
    grid; the algebraic vector is shared, only the geometric reading
    changes.  The effective parameters and the rank-one weight gamma
    record how the two operators are related.
    """

    level: int
    h_dd: float
    h_dn: float
    delta_eff: float
    c_eff: float
    gamma: float


def dd_to_dn_transfer(
    p: ProblemSpec,
) -> tuple[ProblemSpec, TtVector, TtVector, ScaleMap]:
    """Rewrite the two-sided Dirichlet operator in dyadic-Neumann form.

    With h_dn = 2^-L and h_dd = 1/(2^L + 1), scaling the diffusion by
    h_dn/h_dd and the reaction by h_dd/h_dn makes the interior rows of the
    two tridiagonal operators identical; the remaining mismatch sits in
    the last diagonal entry and is exactly the rank-one term
    gamma * e_n e_n^T with gamma = delta^2/h_dd + cbar*h_dd/3.  Returns
    the effective problem, the correction pair (u = gamma*e_n, v = e_n),
    and the index-alignment record.
    """
    if p.bc != "dirichlet-dirichlet":
        raise ValueError(
            f"transfer expects a dirichlet-dirichlet problem, got {p.bc!r}"
        )
    n = 2**p.L
    h_dn = 2.0**-p.L
    h_dd = 1.0 / (n + 1)
    delta_eff = p.delta * math.sqrt(h_dn / h_dd)
    if delta_eff > 1.0:
        raise ValueError(
            f"effective diffusion {delta_eff:.6f} leaves the supported range "
            "(0, 1]; the transfer needs delta*sqrt(1 + 2^-L) <= 1"
        )
    c_eff = p.cbar * h_dd / h_dn
    gamma = p.delta**2 / h_dd + p.cbar * h_dd / 3.0
    e_last = tt_basis_vector(p.L, n - 1)
    dn_spec = ProblemSpec(
        delta=delta_eff,
        cbar=c_eff,
        rhs=RhsSpec(),
        alpha0=0.0,
        alpha1=0.0,
        L=p.L,
        bc="dirichlet-neumann",
    )
    smap = ScaleMap(
        level=p.L,
        h_dd=h_dd,
        h_dn=h_dn,
        delta_eff=delta_eff,
        c_eff=c_eff,
        gamma=gamma,
    )
    return dn_spec, scale(e_last, gamma), e_last, smap


def _nodal_lift(p: ProblemSpec) -> tuple[float, float]:
    """Coefficients (constant, slope) of the boundary lift on the grid."""
    if p.bc == "dirichlet-dirichlet":
        return p.alpha0, p.alpha1 - p.alpha0
    return p.alpha0, 0.0


def _merge_reports(
    reports: list[SolveReport], x: TtVector, wall_time: float
) -> SolveReport:
    primary = reports[0]
    return SolveReport(
        converged=all(r.converged for r in reports),
        sweeps=sum(r.sweeps for r in reports),
        residual_history=primary.residual_history,
        final_relative_residual=primary.final_relative_residual,
        rank_profile=RankProfile.of(x),
        n_dof=primary.n_dof,
        wall_time=wall_time,
    )


def solve_perturbed(
    p: ProblemSpec, cfg: SolverConfig, precondition: bool = True
) -> tuple[TtVector, SolveReport]:
    """End-to-end solve returning the nodal solution on the problem's grid.

    Pipeline for a two-sided Dirichlet problem: lift the boundary data
    into the load, rewrite the operator in dyadic-Neumann form plus a
    symmetric rank-one correction, optionally conjugate with the
    multilevel symmetrizer (solve (B + gamma*(C e)(C e)^T) xbar = C f,
    then map back x = C xbar), undo the lift, and reinterpret the
    coefficients on the original interior grid.  The corrected operator
    stays symmetric positive definite, so it is solved directly in one
    sweep sequence; solving B alone and updating by the rank-one formula
    is avoided because the update solve has a point-load right-hand side
    whose solution amplification makes small relative residuals
    unreachable at extreme perturbation strengths.  A Neumann problem
    skips the transfer and correction.

    Inputs to the solver are rounded at ``cfg.eps_tol``; the solution map
    (multiplication by C, lift addition) is evaluated exactly and rounded
    once at ``cfg.eps_tol`` relative to the final physical solution.
    Rounding the intermediate C-image separately would truncate relative
    to the large-norm homogeneous bulk and wipe out boundary-layer detail
    sitting far below it.
    """
    t0 = time.perf_counter()
    ops = assemble_system(p)
    f = ops.f
    reports: list[SolveReport] = []

    def tracked(matrix: TtMatrix, rhs: TtVector) -> TtVector:
        sol, rep = dmrg_solve(matrix, rhs, cfg)
        reports.append(rep)
        return sol

    if p.bc == "dirichlet-dirichlet":
        dn_spec, u_corr, v_corr, smap = dd_to_dn_transfer(p)
        if precondition:
            pset = build_B(p.L, dn_spec.delta, dn_spec.cbar)
            rhs_bar = tt_round(matvec(pset.C, f), cfg.eps_tol)
            cv = tt_round(matvec(pset.C, v_corr), cfg.eps_tol)
            b_full = tt_round(
                axpy(smap.gamma, outer_product(cv, cv), pset.B), 1e-14
            )
            x_bar = tracked(b_full, rhs_bar)
            hom = matvec(pset.C, x_bar)
        else:
            atil = assemble_system(dn_spec).A
            full = tt_round(
                axpy(1.0, outer_product(u_corr, v_corr), atil), 1e-14
            )
            hom = tracked(full, f)
    else:
        if precondition:
            pset = build_B(p.L, p.delta, p.cbar)
            rhs_bar = tt_round(matvec(pset.C, f), cfg.eps_tol)
            x_bar = tracked(pset.B, rhs_bar)
            hom = matvec(pset.C, x_bar)
        else:
            hom = tracked(ops.A, f)

    const, slope = _nodal_lift(p)
    if const != 0.0 or slope != 0.0:
        lift = qtt_polynomial((const, slope), p.grid)
        hom = axpy(1.0, lift, hom)
    u = tt_round(hom, cfg.eps_tol)
    return u, _merge_reports(reports, u, time.perf_counter() - t0)
