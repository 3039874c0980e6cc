"""Tests for P1 finite-element assembly, loads, liftings, and error metrics."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from qttpde import tt_core as tc
from qttpde.fem_assembly import (
    FemOperators,
    ProblemSpec,
    RhsSpec,
    _half_minus_full_weight,
    _log_hat_weight,
    _registered_exact_nodal,
    assemble_mass,
    assemble_stiffness,
    assemble_system,
    discrete_error,
    energy_norm,
    model_energy_error,
    model_interpolation_gap,
    reaction_diffusion_operator,
)
from qttpde.qtt_build import GridSpec


def _dd_exact_nodal_dense(delta, cbar, alpha0, alpha1, L):
    """Exact solution of the two-sided layer problem, dense nodal values."""
    g = GridSpec(level=L, kind="interior-dirichlet")
    xs = np.array([g.node(i) for i in range(g.n_nodes)])
    mu = math.sqrt(cbar) / delta
    denom = -math.expm1(-2.0 * mu)
    return (
        alpha1 * (np.exp(mu * (xs - 1.0)) - np.exp(-mu * (xs + 1.0)))
        + alpha0 * (np.exp(-mu * xs) - np.exp(mu * (xs - 2.0)))
    ) / denom


def _dn_exact_nodal_dense(delta, cbar, c1, L):
    """Exact solution of the linear-forcing flux problem, dense nodal values."""
    g = GridSpec(level=L, kind="dyadic-neumann")
    xs = np.array([g.node(i) for i in range(g.n_nodes)])
    mu = math.sqrt(cbar) / delta
    pref = c1 / (mu * cbar * (1.0 + math.exp(-2.0 * mu)))
    return (c1 / cbar) * xs - pref * (
        np.exp(mu * (xs - 1.0)) - np.exp(-mu * (xs + 1.0))
    )


def _interior_grid(L):
    return GridSpec(level=L, kind="interior-dirichlet")


class TestStiffness:
    def test_explicit_level_two_interior(self):
        # h = 1/5, so the matrix is 5 * tridiag(-1, 2, -1)
        s = assemble_stiffness(2, "dirichlet-dirichlet")
        dense = oracles.dense_of_matrix(s)
        ref = 5.0 * (
            2.0 * np.eye(4) - np.diag(np.ones(3), 1) - np.diag(np.ones(3), -1)
        )
        np.testing.assert_allclose(dense, ref, rtol=0.0, atol=1e-14)

    @pytest.mark.parametrize("L", [2, 3, 5])
    def test_matches_dense_oracle_interior(self, L):
        dense = oracles.dense_of_matrix(assemble_stiffness(L, "dirichlet-dirichlet"))
        np.testing.assert_allclose(
            dense, oracles.dirichlet_stiffness(L), rtol=0.0, atol=1e-11
        )

    @pytest.mark.parametrize("L", [2, 3, 5])
    def test_matches_dense_oracle_flux(self, L):
        dense = oracles.dense_of_matrix(assemble_stiffness(L, "dirichlet-neumann"))
        np.testing.assert_allclose(
            dense, oracles.neumann_stiffness(L), rtol=0.0, atol=1e-11
        )

    @pytest.mark.parametrize("L", [8, 10])
    @pytest.mark.parametrize("bc", ["dirichlet-dirichlet", "dirichlet-neumann"])
    def test_matches_dense_oracle_large(self, L, bc):
        dense = tc.to_dense_matrix(assemble_stiffness(L, bc))
        ref = (
            oracles.dirichlet_stiffness(L)
            if bc == "dirichlet-dirichlet"
            else oracles.neumann_stiffness(L)
        )
        assert np.max(np.abs(dense - ref)) <= 1e-8  # entries are O(2^L)

    def test_flux_end_diagonal_is_halved(self):
        # L = 2 flux grid has h = 1/4: interior diagonal 8, last diagonal 4
        dense = oracles.dense_of_matrix(assemble_stiffness(2, "dirichlet-neumann"))
        assert dense[-1, -1] == pytest.approx(4.0, abs=1e-14)
        assert dense[0, 0] == pytest.approx(8.0, abs=1e-14)

    def test_interior_row_sums_vanish(self):
        dense = oracles.dense_of_matrix(assemble_stiffness(4, "dirichlet-dirichlet"))
        sums = dense.sum(axis=1)
        np.testing.assert_allclose(sums[1:-1], 0.0, atol=1e-12)

    @pytest.mark.parametrize("bc,cap", [("dirichlet-dirichlet", 3), ("dirichlet-neumann", 4)])
    def test_rank_budget(self, bc, cap):
        s = assemble_stiffness(12, bc)
        assert tc.RankProfile.of(s).max_rank <= cap


class TestMass:
    @pytest.mark.parametrize("L", [2, 3, 5])
    @pytest.mark.parametrize("bc", ["dirichlet-dirichlet", "dirichlet-neumann"])
    def test_matches_dense_oracle(self, L, bc):
        dense = oracles.dense_of_matrix(assemble_mass(L, bc))
        ref = (
            oracles.dirichlet_mass(L)
            if bc == "dirichlet-dirichlet"
            else oracles.neumann_mass(L)
        )
        np.testing.assert_allclose(dense, ref, rtol=0.0, atol=1e-15)

    def test_symmetric(self):
        dense = tc.to_dense_matrix(assemble_mass(6, "dirichlet-neumann"))
        np.testing.assert_allclose(dense, dense.T, rtol=0.0, atol=1e-18)

    @pytest.mark.parametrize(
        "bc,total",
        [
            # sum_ij M_ij = measure covered by full hats: 1 - 4h/3 or 1 - 2h/3
            ("dirichlet-dirichlet", lambda h: 1.0 - 4.0 * h / 3.0),
            ("dirichlet-neumann", lambda h: 1.0 - 2.0 * h / 3.0),
        ],
    )
    def test_total_mass_closed_form(self, bc, total):
        for L in (3, 6, 10):
            m = assemble_mass(L, bc)
            ones = tc.tt_ones(L)
            h = GridSpec(level=L, kind="interior-dirichlet" if bc == "dirichlet-dirichlet" else "dyadic-neumann").h
            got = tc.bilinear_form(ones, m, ones)
            assert got == pytest.approx(total(h), rel=1e-12)

    def test_flux_end_diagonal_is_halved(self):
        dense = oracles.dense_of_matrix(assemble_mass(2, "dirichlet-neumann"))
        # h = 1/4: interior diagonal 4h/6 = 1/6, last diagonal 2h/6 = 1/12
        assert dense[-1, -1] == pytest.approx(1.0 / 12.0, abs=1e-16)
        assert dense[0, 0] == pytest.approx(1.0 / 6.0, abs=1e-16)


class TestReactionDiffusionOperator:
    @pytest.mark.parametrize("delta,cbar", [(1.0, 1.0), (0.1, 2.5), (1e-3, 1.0), (1e-6, 0.5)])
    @pytest.mark.parametrize("bc", ["dirichlet-dirichlet", "dirichlet-neumann"])
    def test_matches_weighted_sum_of_oracles(self, delta, cbar, bc):
        L = 5
        a = reaction_diffusion_operator(L, bc, delta, cbar)
        dense = oracles.dense_of_matrix(a)
        if bc == "dirichlet-dirichlet":
            ref = delta**2 * oracles.dirichlet_stiffness(L) + cbar * oracles.dirichlet_mass(L)
        else:
            ref = delta**2 * oracles.neumann_stiffness(L) + cbar * oracles.neumann_mass(L)
        # rounding at 1e-14 relative to the chain norm (~5e2) leaves ~1e-12 noise
        np.testing.assert_allclose(dense, ref, rtol=0.0, atol=1e-11)

    @pytest.mark.parametrize("bc", ["dirichlet-dirichlet", "dirichlet-neumann"])
    @pytest.mark.parametrize("L", [4, 10])
    def test_positive_definite(self, bc, L):
        a = reaction_diffusion_operator(L, bc, 1e-3, 1.0)
        dense = tc.to_dense_matrix(a)
        np.linalg.cholesky(dense)  # raises LinAlgError if not SPD


class TestSpecValidation:
    def test_problem_requires_rhs_spec(self):
        with pytest.raises(TypeError):
            ProblemSpec(delta=0.1, cbar=1.0, rhs=(0.0, 1.0), alpha0=0.0, alpha1=0.0, L=3, bc="dirichlet-dirichlet")

    def test_rhs_rejects_runaway_growth(self):
        with pytest.raises(ValueError):
            RhsSpec(exps=((1.0, -701.0),))

    def test_rhs_rejects_non_finite(self):
        with pytest.raises(ValueError):
            RhsSpec(poly=(math.nan,))

    @pytest.mark.parametrize("delta", [0.0, -1.0, 1.5])
    def test_problem_rejects_bad_delta(self, delta):
        with pytest.raises(ValueError):
            ProblemSpec(delta=delta, cbar=1.0, rhs=RhsSpec(), alpha0=0.0, alpha1=1.0, L=3, bc="dirichlet-dirichlet")

    def test_problem_rejects_bad_bc(self):
        with pytest.raises(ValueError):
            ProblemSpec(delta=0.1, cbar=1.0, rhs=RhsSpec(), alpha0=0.0, alpha1=1.0, L=3, bc="periodic")

    def test_problem_rejects_shallow_level(self):
        with pytest.raises(ValueError):
            ProblemSpec(delta=0.1, cbar=1.0, rhs=RhsSpec(), alpha0=0.0, alpha1=1.0, L=1, bc="dirichlet-dirichlet")


class TestAssembledSystem:
    def test_reference_problem_round_trip(self):
        # delta = 1, cbar = 1, f = 0, u(0) = 0, u(1) = 1 on the interior grid:
        # lifting g = x turns the load into the integrals of -x.
        spec = ProblemSpec(
            delta=1.0, cbar=1.0, rhs=RhsSpec(), alpha0=0.0, alpha1=1.0, L=3,
            bc="dirichlet-dirichlet",
        )
        ops = assemble_system(spec)
        assert isinstance(ops, FemOperators)
        a_ref = oracles.dirichlet_stiffness(3) + oracles.dirichlet_mass(3)
        np.testing.assert_allclose(
            oracles.dense_of_matrix(ops.A), a_ref, rtol=0.0, atol=1e-13
        )
        f_ref = oracles.load_vector_quadrature(lambda x: -x, 3, "interior-dirichlet")
        np.testing.assert_allclose(
            oracles.dense_of_vector(ops.f), f_ref, rtol=0.0, atol=1e-14
        )

    def test_zero_problem_gives_zero_load(self):
        spec = ProblemSpec(
            delta=0.5, cbar=2.0, rhs=RhsSpec(), alpha0=0.0, alpha1=0.0, L=4,
            bc="dirichlet-dirichlet",
        )
        ops = assemble_system(spec)
        assert tc.norm(ops.f) == 0.0

    def test_flux_problem_linear_forcing(self):
        # f(x) = 2x with homogeneous data: load is exactly the integrals of 2x.
        spec = ProblemSpec(
            delta=0.1, cbar=1.0, rhs=RhsSpec(poly=(0.0, 2.0)), alpha0=0.0,
            alpha1=0.0, L=4, bc="dirichlet-neumann",
        )
        ops = assemble_system(spec)
        f_ref = oracles.load_vector_quadrature(lambda x: 2.0 * x, 4, "dyadic-neumann")
        np.testing.assert_allclose(
            oracles.dense_of_vector(ops.f), f_ref, rtol=0.0, atol=1e-14
        )

    @pytest.mark.parametrize("bc", ["dirichlet-dirichlet", "dirichlet-neumann"])
    def test_mixed_load_with_lifting(self, bc):
        rhs = RhsSpec(poly=(0.3, -1.2, 0.7, 0.05), exps=((1.5, 3.0), (-0.4, -2.0)))
        spec = ProblemSpec(
            delta=0.05, cbar=2.0, rhs=rhs, alpha0=0.2, alpha1=-0.3, L=5, bc=bc,
        )
        ops = assemble_system(spec)

        def f(x):
            return (
                0.3 - 1.2 * x + 0.7 * x**2 + 0.05 * x**3
                + 1.5 * np.exp(-3.0 * x) - 0.4 * np.exp(2.0 * x)
            )

        if bc == "dirichlet-dirichlet":
            def lifted(x):
                return f(x) - 2.0 * (0.2 + (-0.3 - 0.2) * x)
            f_ref = oracles.load_vector_quadrature(lifted, 5, "interior-dirichlet")
        else:
            def lifted(x):
                return f(x) - 2.0 * 0.2
            f_ref = oracles.load_vector_quadrature(lifted, 5, "dyadic-neumann")
            f_ref[-1] += 0.05**2 * (-0.3)  # Neumann flux enters the last entry
        np.testing.assert_allclose(
            oracles.dense_of_vector(ops.f), f_ref, rtol=0.0, atol=1e-12
        )

    def test_steep_exponential_load(self):
        spec = ProblemSpec(
            delta=0.1, cbar=1.0, rhs=RhsSpec(exps=((1.0, 200.0),)), alpha0=0.0,
            alpha1=0.0, L=6, bc="dirichlet-neumann",
        )
        ops = assemble_system(spec)
        f_ref = oracles.load_vector_quadrature(
            lambda x: np.exp(-200.0 * x), 6, "dyadic-neumann"
        )
        np.testing.assert_allclose(
            oracles.dense_of_vector(ops.f), f_ref, rtol=0.0, atol=1e-15
        )

    @settings(max_examples=25, deadline=None)
    @given(
        coeffs=st.lists(st.floats(-2.0, 2.0), min_size=0, max_size=5),
        amp=st.floats(-2.0, 2.0),
        rate=st.floats(-30.0, 50.0),
        alpha0=st.floats(-1.0, 1.0),
        alpha1=st.floats(-1.0, 1.0),
        bc=st.sampled_from(["dirichlet-dirichlet", "dirichlet-neumann"]),
    )
    def test_load_matches_quadrature(self, coeffs, amp, rate, alpha0, alpha1, bc):
        rhs = RhsSpec(poly=tuple(coeffs), exps=((amp, rate),))
        spec = ProblemSpec(
            delta=0.3, cbar=1.5, rhs=rhs, alpha0=alpha0, alpha1=alpha1, L=4, bc=bc,
        )
        ops = assemble_system(spec)

        def f(x):
            out = amp * np.exp(-rate * x)
            for k, c in enumerate(coeffs):
                out = out + c * x**k
            return out

        if bc == "dirichlet-dirichlet":
            def lifted(x):
                return f(x) - 1.5 * (alpha0 + (alpha1 - alpha0) * x)
            f_ref = oracles.load_vector_quadrature(lifted, 4, "interior-dirichlet")
        else:
            def lifted(x):
                return f(x) - 1.5 * alpha0
            f_ref = oracles.load_vector_quadrature(lifted, 4, "dyadic-neumann")
            f_ref[-1] += 0.3**2 * alpha1
        scale = max(1.0, float(np.max(np.abs(f_ref))))
        np.testing.assert_allclose(
            oracles.dense_of_vector(ops.f), f_ref, rtol=0.0, atol=1e-12 * scale
        )


class TestHatWeights:
    def test_log_weight_branches_agree_at_switch(self):
        # branch switch sits at z = 700; sinh stays finite well past it,
        # so the direct formula is a valid reference on both sides
        for z in (690.0, 699.9, 700.1, 710.0, 1390.0):
            w = z / 2.0
            direct = 2.0 * math.log(math.sinh(w) / w)
            assert _log_hat_weight(z) == pytest.approx(direct, rel=1e-13)

    def test_log_weight_small_argument(self):
        assert _log_hat_weight(0.0) == 0.0
        assert _log_hat_weight(1.0) == pytest.approx(
            2.0 * math.log(math.sinh(0.5) / 0.5), rel=1e-14
        )
        assert _log_hat_weight(-1.0) == _log_hat_weight(1.0)

    def test_half_weight_series_matches_closed_form(self):
        for z in (0.49, -0.49, 0.3, -0.3, 0.05):
            closed = -(z + math.expm1(-z)) / (z * z)
            assert _half_minus_full_weight(z) == pytest.approx(closed, rel=1e-12)

    def test_half_weight_limit(self):
        assert _half_minus_full_weight(0.0) == pytest.approx(-0.5, abs=1e-15)


class TestEnergyNorm:
    def test_zero_vector(self):
        assert energy_norm(tc.tt_zero(4), 0.5, 4, "dirichlet-dirichlet") == 0.0

    def test_mass_only_ones(self):
        L = 5
        h = 1.0 / (2**L + 1)
        got = energy_norm(tc.tt_ones(L), 0.0, L, "dirichlet-dirichlet")
        assert got == pytest.approx(math.sqrt(1.0 - 4.0 * h / 3.0), rel=1e-12)

    def test_matches_dense_quadratic_form(self):
        rng = np.random.default_rng(7)
        L = 8
        cores = oracles.random_tt_vector(rng, L, [2, 3, 4, 4, 3, 3, 2])
        v = tc.TtVector(tuple(tc.TtCore(c) for c in cores))
        dense = tc.dequantize(v)
        delta = 0.02
        s = oracles.dirichlet_stiffness(L)
        m = oracles.dirichlet_mass(L)
        ref = math.sqrt(delta**2 * dense @ s @ dense + dense @ m @ dense)
        got = energy_norm(v, delta, L, "dirichlet-dirichlet")
        assert got == pytest.approx(ref, rel=1e-11)

    def test_level_mismatch_raises(self):
        with pytest.raises(ValueError):
            energy_norm(tc.tt_zero(4), 0.5, 5, "dirichlet-dirichlet")

    def test_negative_delta_raises(self):
        with pytest.raises(ValueError):
            energy_norm(tc.tt_zero(4), -0.1, 4, "dirichlet-dirichlet")


class TestDiscreteError:
    @pytest.mark.parametrize(
        "delta,cbar,alpha0,alpha1,L",
        [(0.05, 1.0, 0.7, 1.0, 6), (1e-6, 2.0, 0.0, 1.0, 8)],
    )
    def test_interpolant_has_zero_error_two_sided(self, delta, cbar, alpha0, alpha1, L):
        spec = ProblemSpec(
            delta=delta, cbar=cbar, rhs=RhsSpec(), alpha0=alpha0, alpha1=alpha1,
            L=L, bc="dirichlet-dirichlet",
        )
        dense = _dd_exact_nodal_dense(delta, cbar, alpha0, alpha1, L)
        v = tc.quantize(dense, 1e-14)
        assert discrete_error(v, spec) <= 1e-12

    @pytest.mark.parametrize(
        "delta,cbar,c1,L", [(1e-3, 1.0, 2.0, 8), (0.1, 3.0, -0.8, 7)]
    )
    def test_interpolant_has_zero_error_flux(self, delta, cbar, c1, L):
        spec = ProblemSpec(
            delta=delta, cbar=cbar, rhs=RhsSpec(poly=(0.0, c1)), alpha0=0.0,
            alpha1=0.0, L=L, bc="dirichlet-neumann",
        )
        dense = _dn_exact_nodal_dense(delta, cbar, c1, L)
        v = tc.quantize(dense, 1e-14)
        assert discrete_error(v, spec) <= 1e-12

    def test_error_scale_matches_dense_norm(self):
        spec = ProblemSpec(
            delta=0.2, cbar=1.0, rhs=RhsSpec(), alpha0=0.0, alpha1=1.0, L=5,
            bc="dirichlet-dirichlet",
        )
        exact = _dd_exact_nodal_dense(0.2, 1.0, 0.0, 1.0, 5)
        u = tc.quantize(exact * 0.9, 1e-14)  # 10% off everywhere
        d = exact - 0.9 * exact
        s = oracles.dirichlet_stiffness(5)
        m = oracles.dirichlet_mass(5)
        ref = math.sqrt(0.2**2 * d @ s @ d + d @ m @ d)
        assert discrete_error(u, spec) == pytest.approx(ref, rel=1e-10)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(rhs=RhsSpec(poly=(1.0,)), alpha0=0.0, alpha1=1.0, bc="dirichlet-dirichlet"),
            dict(rhs=RhsSpec(exps=((1.0, 2.0),)), alpha0=0.0, alpha1=0.0, bc="dirichlet-dirichlet"),
            dict(rhs=RhsSpec(poly=(0.0, 1.0)), alpha0=0.5, alpha1=0.0, bc="dirichlet-neumann"),
            dict(rhs=RhsSpec(poly=(0.0, 1.0, 1.0)), alpha0=0.0, alpha1=0.0, bc="dirichlet-neumann"),
        ],
    )
    def test_unregistered_problem_raises(self, kwargs):
        spec = ProblemSpec(delta=0.1, cbar=1.0, L=4, **kwargs)
        with pytest.raises(ValueError):
            discrete_error(tc.tt_zero(4), spec)

    def test_level_mismatch_raises(self):
        spec = ProblemSpec(
            delta=0.1, cbar=1.0, rhs=RhsSpec(), alpha0=0.0, alpha1=1.0, L=5,
            bc="dirichlet-dirichlet",
        )
        with pytest.raises(ValueError):
            discrete_error(tc.tt_zero(4), spec)


def _dense_true_error(spec, u_dense, n_quad=40):
    """Quadrature reference for the non-surrogate error metric."""
    from qttpde.fem_assembly import _registered_exact_terms

    a0, a1, terms, mu = _registered_exact_terms(spec)
    g = spec.grid
    h = g.h
    n = g.n_nodes

    def v(x):
        out = a0 + a1 * x
        for s, sg, gg in terms:
            out = out + s * np.exp(np.clip(gg + sg * mu * x, -745.0, 50.0))
        return out

    def dv(x):
        out = np.full_like(x, a1)
        for s, sg, gg in terms:
            out = out + s * sg * mu * np.exp(np.clip(gg + sg * mu * x, -745.0, 50.0))
        return out

    n_el = n + 1 if spec.bc == "dirichlet-dirichlet" else n
    vals = np.zeros(n_el + 1)
    vals[0] = spec.alpha0
    vals[1 : n + 1] = u_dense
    if spec.bc == "dirichlet-dirichlet":
        vals[n_el] = spec.alpha1
    xq, wq = np.polynomial.legendre.leggauss(n_quad)
    xq = 0.5 * (xq + 1.0)
    wq = 0.5 * wq
    total = 0.0
    for e in range(n_el):
        xl = e * h
        xs = xl + h * xq
        lin = vals[e] + (xs - xl) / h * (vals[e + 1] - vals[e])
        slope = (vals[e + 1] - vals[e]) / h
        total += h * np.sum(
            wq * (spec.delta**2 * (dv(xs) - slope) ** 2 + (v(xs) - lin) ** 2)
        )
    return math.sqrt(total)


class TestModelEnergyError:
    # interpolation gaps frozen from 30-point Gauss quadrature of
    # ||v - I_L v||_delta^2 element by element
    @pytest.mark.parametrize(
        "delta,cbar,alpha0,alpha1,L,expected_sq",
        [
            (0.5, 1.0, 0.0, 1.0, 4, 2.551874431787e-04),
            (0.1, 1.0, 0.3, -0.7, 5, 2.217804287911e-04),
            (0.02, 1.0, 1.0, 1.0, 6, 9.857467797838e-04),
        ],
    )
    def test_gap_two_sided_frozen(self, delta, cbar, alpha0, alpha1, L, expected_sq):
        spec = ProblemSpec(
            delta=delta, cbar=cbar, rhs=RhsSpec(), alpha0=alpha0, alpha1=alpha1,
            L=L, bc="dirichlet-dirichlet",
        )
        assert model_interpolation_gap(spec) == pytest.approx(
            math.sqrt(expected_sq), rel=1e-11
        )

    @pytest.mark.parametrize(
        "delta,cbar,c1,L,expected_sq",
        [
            (0.3, 1.0, 1.0, 5, 1.196909135811e-05),
            (0.05, 2.0, 1.3, 6, 3.009886926648e-07),
        ],
    )
    def test_gap_flux_frozen(self, delta, cbar, c1, L, expected_sq):
        spec = ProblemSpec(
            delta=delta, cbar=cbar, rhs=RhsSpec(poly=(0.0, c1)), alpha0=0.0,
            alpha1=0.0, L=L, bc="dirichlet-neumann",
        )
        assert model_interpolation_gap(spec) == pytest.approx(
            math.sqrt(expected_sq), rel=1e-11
        )

    @pytest.mark.parametrize(
        "bc,delta,cbar,alpha0,alpha1,c1,L",
        [
            ("dirichlet-dirichlet", 0.5, 1.0, 0.0, 1.0, 0.0, 4),
            ("dirichlet-dirichlet", 0.1, 1.0, 0.3, -0.7, 0.0, 6),
            ("dirichlet-neumann", 0.3, 1.0, 0.0, 0.0, 1.0, 5),
            ("dirichlet-neumann", 0.05, 2.0, 0.0, 0.0, -0.8, 6),
        ],
    )
    def test_galerkin_error_matches_quadrature(self, bc, delta, cbar, alpha0, alpha1, c1, L):
        rhs = RhsSpec() if bc == "dirichlet-dirichlet" else RhsSpec(poly=(0.0, c1))
        spec = ProblemSpec(
            delta=delta, cbar=cbar, rhs=rhs, alpha0=alpha0, alpha1=alpha1, L=L, bc=bc,
        )
        ops = assemble_system(spec)
        hom = np.linalg.solve(tc.to_dense_matrix(ops.A), tc.dequantize(ops.f))
        xs = np.array([spec.grid.node(i) for i in range(spec.grid.n_nodes)])
        lift = alpha0 + (alpha1 - alpha0) * xs if bc == "dirichlet-dirichlet" else alpha0
        u_dense = hom + lift
        u = tc.quantize(u_dense, 1e-14)
        got = model_energy_error(u, spec)
        ref = _dense_true_error(spec, u_dense)
        assert got == pytest.approx(ref, rel=1e-10)

    def test_interpolant_error_equals_gap(self):
        spec = ProblemSpec(
            delta=0.05, cbar=1.0, rhs=RhsSpec(), alpha0=0.7, alpha1=1.0, L=6,
            bc="dirichlet-dirichlet",
        )
        v = _registered_exact_nodal(spec)
        assert model_energy_error(v, spec) == pytest.approx(
            model_interpolation_gap(spec), rel=1e-10
        )

    def test_gap_halves_per_level_once_resolved(self):
        gaps = []
        for L in (8, 9, 10):
            spec = ProblemSpec(
                delta=0.1, cbar=1.0, rhs=RhsSpec(), alpha0=0.0, alpha1=1.0, L=L,
                bc="dirichlet-dirichlet",
            )
            gaps.append(model_interpolation_gap(spec))
        assert gaps[0] / gaps[1] == pytest.approx(2.0, rel=0.02)
        assert gaps[1] / gaps[2] == pytest.approx(2.0, rel=0.02)

    def test_unresolved_layer_gap_quarter_rate(self):
        # in the under-resolved regime the gap only decays like sqrt(h)
        gaps = []
        for L in (4, 5, 6):
            spec = ProblemSpec(
                delta=1e-6, cbar=1.0, rhs=RhsSpec(), alpha0=0.0, alpha1=1.0, L=L,
                bc="dirichlet-dirichlet",
            )
            gaps.append(model_interpolation_gap(spec))
        assert gaps[0] / gaps[1] == pytest.approx(math.sqrt(2.0), rel=0.05)
        assert gaps[1] / gaps[2] == pytest.approx(math.sqrt(2.0), rel=0.05)

    def test_perturbed_solution_error_exceeds_galerkin(self):
        spec = ProblemSpec(
            delta=0.1, cbar=1.0, rhs=RhsSpec(), alpha0=0.0, alpha1=1.0, L=6,
            bc="dirichlet-dirichlet",
        )
        ops = assemble_system(spec)
        xs = np.array([spec.grid.node(i) for i in range(spec.grid.n_nodes)])
        u_dense = np.linalg.solve(tc.to_dense_matrix(ops.A), tc.dequantize(ops.f)) + xs
        clean = model_energy_error(tc.quantize(u_dense, 1e-14), spec)
        noisy_dense = u_dense + 1e-3 * np.sin(np.arange(u_dense.size))
        noisy = model_energy_error(tc.quantize(noisy_dense, 1e-14), spec)
        assert noisy > clean

    @settings(max_examples=20, deadline=None)
    @given(
        delta=st.floats(1e-6, 1.0),
        cbar=st.floats(0.5, 4.0),
        alpha0=st.floats(-2.0, 2.0),
        alpha1=st.floats(-2.0, 2.0),
        L=st.integers(3, 8),
    )
    def test_interpolant_identity_property(self, delta, cbar, alpha0, alpha1, L):
        spec = ProblemSpec(
            delta=delta, cbar=cbar, rhs=RhsSpec(), alpha0=alpha0, alpha1=alpha1,
            L=L, bc="dirichlet-dirichlet",
        )
        v = _registered_exact_nodal(spec)
        gap = model_interpolation_gap(spec)
        err = model_energy_error(v, spec)
        assert err == pytest.approx(gap, rel=1e-8, abs=1e-13)
