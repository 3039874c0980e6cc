"""Empirical rank studies for quantized boundary-layer approximations.

This module produces the reference objects whose quantized ranks the
theory in this package is about:

* :func:`hp_solve` computes a high-order Galerkin solution of the
  boundary-layer model ``-delta^2 u'' + u = 0``, ``u(0)=0``, ``u(1)=1``
  on a three-element mesh whose inner breakpoints track the layer width.
* :func:`l2_project_to_p1` projects such a solution onto the uniform
  piecewise-linear space used by the quantized solver and returns the
  coefficient vector as a tensor chain.
* :func:`measure_ranks` and :func:`piecewise_poly_rank_check` measure
  bond ranks after rounding at a stated tolerance.
* :func:`rank_study` sweeps the polynomial degree and records the
  measured ranks together with the high-order energy errors.

The high-order element basis is the integrated-Legendre (bubble) basis,
chosen so that local matrices stay well conditioned up to degree 40.
All element integrals are evaluated exactly through Legendre-coefficient
algebra, never by sampled quadrature.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.linalg import solve as dense_solve
from scipy.linalg import solve_banded

from . import tt_core as tc
from .fem_assembly import assemble_mass
from .solve_engine import SolverConfig, SolverError, dmrg_solve

__all__ = [
    "HpSolution",
    "RankStudyRecord",
    "hp_solve",
    "l2_project_to_p1",
    "measure_ranks",
    "piecewise_poly_rank_check",
    "rank_study",
    "write_rank_study_csv",
]

_MAX_DEGREE = 40
_DENSE_PROJECTION_CAP = 14


def _layer_values(x: np.ndarray, delta: float) -> np.ndarray:
    """Closed-form model solution sinh(x/delta)/sinh(1/delta), evaluated
    through negative exponentials only so it stays finite for tiny delta."""
    x = np.asarray(x, dtype=np.float64)
    num = np.exp((x - 1.0) / delta) - np.exp(-(x + 1.0) / delta)
    return num / (1.0 - math.exp(-2.0 / delta))


def _layer_slopes(x: np.ndarray, delta: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    num = np.exp((x - 1.0) / delta) + np.exp(-(x + 1.0) / delta)
    return num / (delta * (1.0 - math.exp(-2.0 / delta)))


def _layer_boundary_flux(delta: float) -> float:
    """delta^2 u'(1) for the model solution, i.e. delta*coth(1/delta)."""
    e = math.exp(-2.0 / delta)
    return delta * (1.0 + e) / (1.0 - e)


def _shape_basis(p: int) -> np.ndarray:
    """Rows are Legendre coefficients of the local shape functions on
    [-1, 1]: two vertex hats, then bubbles (P_k - P_{k-2})/sqrt(2(2k-1))."""
    basis = np.zeros((p + 1, p + 1))
    basis[0, 0], basis[0, 1] = 0.5, -0.5
    basis[1, 0], basis[1, 1] = 0.5, 0.5
    for k in range(2, p + 1):
        s = 1.0 / math.sqrt(2.0 * (2.0 * k - 1.0))
        basis[k, k] = s
        basis[k, k - 2] = -s
    return basis


def _legendre_gram(n_coeffs: int) -> np.ndarray:
    return np.diag(2.0 / (2.0 * np.arange(n_coeffs) + 1.0))


@dataclass(frozen=True)
class HpSolution:
    """High-order Galerkin solution of the boundary-layer model.

    ``coeffs[j]`` holds the Legendre coefficients (reference coordinates
    on [-1, 1]) of the restriction to element ``j`` of the three-element
    mesh ``breakpoints``.  The inner breakpoints are placed at
    ``min(0.25, grading * degree * delta)`` from each endpoint.
    """

    degree: int
    breakpoints: tuple[float, float, float, float]
    coeffs: np.ndarray
    delta: float
    grading: float

    def __post_init__(self) -> None:
        if self.coeffs.shape != (3, self.degree + 1):
            raise ValueError(
                f"coefficient table has shape {self.coeffs.shape}, "
                f"expected (3, {self.degree + 1})"
            )

    def _element_of(self, x: np.ndarray) -> np.ndarray:
        inner = np.asarray(self.breakpoints[1:3])
        return np.clip(np.searchsorted(inner, x, side="right"), 0, 2)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Point values; vectorized over ``x`` in [0, 1]."""
        x = np.asarray(x, dtype=np.float64)
        out = np.empty_like(x)
        elem = self._element_of(x)
        bp = self.breakpoints
        for j in range(3):
            mask = elem == j
            if not np.any(mask):
                continue
            a, b = bp[j], bp[j + 1]
            t = (2.0 * x[mask] - (a + b)) / (b - a)
            out[mask] = npleg.legval(t, self.coeffs[j])
        return out

    def derivative(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.empty_like(x)
        elem = self._element_of(x)
        bp = self.breakpoints
        for j in range(3):
            mask = elem == j
            if not np.any(mask):
                continue
            a, b = bp[j], bp[j + 1]
            t = (2.0 * x[mask] - (a + b)) / (b - a)
            out[mask] = npleg.legval(t, npleg.legder(self.coeffs[j])) * (
                2.0 / (b - a)
            )
        return out

    def energy_norm(self) -> float:
        """sqrt(delta^2 |u|_1^2 + ||u||_0^2), exact from the coefficients."""
        quad = 0.0
        for j in range(3):
            length = self.breakpoints[j + 1] - self.breakpoints[j]
            c = self.coeffs[j]
            weights = 2.0 / (2.0 * np.arange(c.size) + 1.0)
            val = 0.5 * length * float(np.sum(c * c * weights))
            d = npleg.legder(c)
            der = 0.0
            if d.size:
                wd = 2.0 / (2.0 * np.arange(d.size) + 1.0)
                der = (2.0 / length) * float(np.sum(d * d * wd))
            quad += self.delta**2 * der + val
        return math.sqrt(quad)

    def energy_error(self) -> float:
        """Energy-norm distance to the closed-form model solution.

        Because the model has zero right-hand side, integrating the
        energy product against the exact solution by parts collapses it
        to the boundary flux delta^2 u'(1), so the squared error is
        exactly ``energy_norm()^2 - delta*coth(1/delta)``.  The value is
        clamped at zero against roundoff cancellation.
        """
        quad = self.energy_norm() ** 2 - _layer_boundary_flux(self.delta)
        return math.sqrt(max(quad, 0.0))


def hp_solve(delta: float, p: int, grading: float = 1.0) -> HpSolution:
    """Galerkin solution of -delta^2 u'' + u = 0, u(0)=0, u(1)=1 with
    degree-``p`` polynomials on the three-element layer-adapted mesh.

    ``grading`` scales the inner breakpoint distance
    ``min(0.25, grading * p * delta)``; values in [0.5, 2] give the same
    exponential convergence up to constants.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if not isinstance(p, (int, np.integer)) or p < 1:
        raise ValueError(f"degree must be a positive integer, got {p!r}")
    if p > _MAX_DEGREE:
        raise ValueError(
            f"degree {p} exceeds the conditioning cap {_MAX_DEGREE}"
        )
    if grading <= 0.0:
        raise ValueError(f"grading must be positive, got {grading}")

    width = min(0.25, grading * p * delta)
    bp = (0.0, width, 1.0 - width, 1.0)

    basis = _shape_basis(p)
    gram = _legendre_gram(p + 1)
    mass_ref = basis @ gram @ basis.T
    deriv = np.zeros((p + 1, p + 1))
    for a in range(p + 1):
        d = npleg.legder(basis[a])
        deriv[a, : d.size] = d
    stiff_ref = deriv @ gram @ deriv.T

    n_bub = p - 1
    n_dof = 4 + 3 * n_bub
    a_mat = np.zeros((n_dof, n_dof))
    for j in range(3):
        length = bp[j + 1] - bp[j]
        local = (
            delta**2 * (2.0 / length) * stiff_ref
            + 0.5 * length * mass_ref
        )
        idx = [j, j + 1] + [4 + j * n_bub + k for k in range(n_bub)]
        a_mat[np.ix_(idx, idx)] += local

    free = [i for i in range(n_dof) if i not in (0, 3)]
    rhs = -a_mat[free, 3] * 1.0
    sol = np.zeros(n_dof)
    sol[3] = 1.0
    sol[free] = dense_solve(
        a_mat[np.ix_(free, free)], rhs, assume_a="pos"
    )

    coeffs = np.zeros((3, p + 1))
    for j in range(3):
        idx = [j, j + 1] + [4 + j * n_bub + k for k in range(n_bub)]
        coeffs[j] = sol[idx] @ basis
    return HpSolution(
        degree=p, breakpoints=bp, coeffs=coeffs, delta=delta,
        grading=grading,
    )


def _hat_moments(u: HpSolution, L: int) -> np.ndarray:
    """Exact integrals of ``u`` against every interior hat of the uniform
    grid with spacing 1/(2^L + 1): per-cell Gauss with the two mesh
    breakpoints of ``u`` spliced in, so every panel is polynomial."""
    n = 2**L
    h = 1.0 / (n + 1)
    edges = np.arange(n + 2, dtype=np.float64) * h
    edges[-1] = 1.0
    inner = [b for b in u.breakpoints[1:3] if 0.0 < b < 1.0]
    points = np.union1d(edges, np.asarray(inner))
    lo, hi = points[:-1], points[1:]
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    cell = np.clip(np.searchsorted(edges, mid) - 1, 0, n)

    n_q = u.degree // 2 + 2
    nodes, weights = np.polynomial.legendre.leggauss(n_q)
    xs = mid[:, None] + half[:, None] * nodes[None, :]
    ws = half[:, None] * weights[None, :]
    vals = u.evaluate(xs.ravel()).reshape(xs.shape)

    ramp_up = (xs - edges[cell][:, None]) / h
    ramp_down = (edges[cell + 1][:, None] - xs) / h
    up = np.zeros(n + 1)
    down = np.zeros(n + 1)
    np.add.at(up, cell, np.sum(ws * vals * ramp_up, axis=1))
    np.add.at(down, cell, np.sum(ws * vals * ramp_down, axis=1))
    return up[:n] + down[1:]


def l2_project_to_p1(u: HpSolution, L: int) -> tc.TtVector:
    """L2 projection of ``u`` onto the span of the interior hats of the
    uniform grid at level ``L``, returned as a quantized chain.

    Hat moments are computed exactly; the tridiagonal mass system is
    solved densely up to level 14 and by the alternating solver on the
    quantized moment vector above that.  The result is rounded at 1e-13.
    """
    if not isinstance(L, (int, np.integer)) or L < 1:
        raise ValueError(f"level must be a positive integer, got {L!r}")
    if L > tc.dense_cap():
        raise ValueError(
            f"level {L} exceeds the dense cap {tc.dense_cap()} for the "
            "moment-integral stage"
        )
    v = _hat_moments(u, L)
    n = 2**L
    h = 1.0 / (n + 1)
    if L <= _DENSE_PROJECTION_CAP:
        band = np.zeros((3, n))
        band[0, 1:] = h / 6.0
        band[1, :] = 4.0 * h / 6.0
        band[2, :-1] = h / 6.0
        w = solve_banded((1, 1), band, v)
        return tc.quantize(w, 1e-13)
    v_tt = tc.quantize(v, 1e-13)
    mass = assemble_mass(L, "dirichlet-dirichlet")
    w_tt, report = dmrg_solve(mass, v_tt, SolverConfig(eps_tol=1e-13))
    if not report.converged:
        raise SolverError(
            "mass solve for the projection did not converge: residual "
            f"{report.final_relative_residual:.3e} at level {L}"
        )
    return w_tt


def measure_ranks(x: tc.TtVector, eps: float) -> tc.RankProfile:
    """Bond ranks and parameter count of ``x`` after rounding a copy at
    ``eps``; the input chain is left untouched."""
    if not eps > 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    return tc.RankProfile.of(tc.tt_round(x, eps))


def piecewise_poly_rank_check(
    breaks: tuple[int, ...], degrees: tuple[int, ...], L: int
) -> tc.RankProfile:
    """Quantize a piecewise polynomial sampled on the integer grid and
    check its ranks against the bound max-degree + number-of-pieces.

    ``breaks`` holds ``M + 1`` strictly increasing integers from 0 to
    ``2^L`` delimiting the ``M`` pieces; piece ``m`` covers indices
    ``breaks[m] <= i < breaks[m+1]`` and carries a deterministic
    pseudorandom polynomial of degree ``degrees[m]``.  Raises
    ``RuntimeError`` if the measured ranks exceed the bound.
    """
    n = 2**L
    breaks = tuple(int(b) for b in breaks)
    degrees = tuple(int(d) for d in degrees)
    if len(breaks) != len(degrees) + 1:
        raise ValueError(
            f"{len(breaks)} breakpoints cannot delimit {len(degrees)} pieces"
        )
    if breaks[0] != 0 or breaks[-1] != n:
        raise ValueError(
            f"breakpoints must run from 0 to 2^L = {n}, got {breaks}"
        )
    if any(b2 <= b1 for b1, b2 in zip(breaks, breaks[1:])):
        raise ValueError(f"breakpoints must be strictly increasing: {breaks}")
    if any(d < 0 for d in degrees):
        raise ValueError(f"degrees must be nonnegative, got {degrees}")

    rng = np.random.default_rng(181045)
    values = np.empty(n)
    for m, deg in enumerate(degrees):
        a, b = breaks[m], breaks[m + 1]
        c = rng.uniform(-1.0, 1.0, deg + 1)
        span = max(b - 1 - a, 1)
        t = (2.0 * (np.arange(a, b) - a) - span) / span
        values[a:b] = npleg.legval(t, c)

    profile = tc.RankProfile.of(tc.quantize(values, 1e-13))
    bound = max(degrees) + len(degrees)
    if profile.max_rank > bound:
        raise RuntimeError(
            f"measured max rank {profile.max_rank} exceeds the piecewise "
            f"bound {bound} (degrees {degrees}, {len(degrees)} pieces)"
        )
    return profile


@dataclass(frozen=True)
class RankStudyRecord:
    """One row of a degree sweep: measured ranks of the projected
    high-order solution plus its own energy error."""

    p: int
    delta: float
    L: int
    eps: float
    max_rank: int
    n_parameters: int
    hp_energy_error: float


def rank_study(
    p_values,
    delta: float = 1e-4,
    L: int = 14,
    eps: float = 1e-10,
    grading: float = 1.0,
) -> list[RankStudyRecord]:
    """Sweep the polynomial degree: solve, project to level ``L``, round
    at ``eps``, and record the measured ranks."""
    records = []
    for p in p_values:
        u = hp_solve(delta, int(p), grading)
        w = l2_project_to_p1(u, L)
        profile = measure_ranks(w, eps)
        records.append(
            RankStudyRecord(
                p=int(p),
                delta=delta,
                L=L,
                eps=eps,
                max_rank=profile.max_rank,
                n_parameters=profile.n_parameters,
                hp_energy_error=u.energy_error(),
            )
        )
    return records


def write_rank_study_csv(records, path: str | os.PathLike) -> None:
    """Write sweep records with full floating-point round-trip precision."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["p", "delta", "L", "eps", "max_rank", "n_parameters",
             "hp_energy_error"]
        )
        for r in records:
            writer.writerow(
                [r.p, repr(r.delta), r.L, repr(r.eps), r.max_rank,
                 r.n_parameters, repr(r.hp_energy_error)]
            )
