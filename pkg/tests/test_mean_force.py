import numpy as np
import pytest
from scipy.integrate import quad

from effdyn.mean_force import (MeanForceTable, build_table, c_alpha,
                               check_f_bound, conditional_f_mean,
                               conditional_law, f_l2, fluctuation, free_energy,
                               kappa_sq, marginal_density, mean_force,
                               one_sided_lipschitz, poincare_constant,
                               theory_constants)
from effdyn.potentials import (Decoupled, DoubleWell, ModelError,
                               QuadraticCoupled, TrackingBath)

GC = QuadraticCoupled(1.0, 1.0, 2.0, beta=1.0)
TR = TrackingBath("x^2/2", k=1.0, n=2, beta=1.0)
DW = DoubleWell(1.0, 2, beta=1.0)
DEC = Decoupled("x^2/2", "x^2/2", beta=1.0)


# -- conditional laws --------------------------------------------------------

def test_gc_conditional_is_gaussian_with_derived_moments():
    # complete the square in exp(-beta(k_b x2^2/2 + k_c xi x2)):
    # mean -k_c xi / k_b = -0.5, variance 1/(beta k_b) = 0.5 at xi = 1
    law = conditional_law(GC, 1.0)
    assert law.gaussian
    assert law.mean_vector() == pytest.approx([-0.5])
    assert law.var_vector() == pytest.approx([0.5])


def test_tr_conditional_tracks_slow_coordinate():
    law = conditional_law(TR, 0.0)
    assert law.mean_vector() == pytest.approx([0.0])
    assert law.var_vector() == pytest.approx([1.0])
    law2 = conditional_law(TR, 2.5)
    assert law2.mean_vector() == pytest.approx([2.5])


def test_dec_conditional_is_xi_independent():
    law_a = conditional_law(DEC, -1.0)
    law_b = conditional_law(DEC, 3.0)
    assert law_a.mean_vector() == pytest.approx(law_b.mean_vector())
    assert law_a.var_vector() == pytest.approx(law_b.var_vector())
    assert law_a.var_vector() == pytest.approx([1.0], rel=1e-6)


def test_conditional_law_mass_normalized():
    for model, xi in ((GC, 0.7), (DEC, 0.0)):
        law = conditional_law(model, xi)
        assert law.mass() == pytest.approx(1.0, abs=1e-8)


# -- mean force, marginal, free energy ---------------------------------------

def test_mean_force_closed_forms():
    assert mean_force(GC, 1.0) == pytest.approx(0.5, abs=1e-12)
    # E(x2 | x1 = xi) = xi kills the coupling term for any k
    for k in (1.0, 5.0):
        model = TrackingBath("x^4/4", k=k, n=2, beta=1.0)
        for xi in (-1.5, 0.3, 2.0):
            assert mean_force(model, xi) == pytest.approx(xi**3, rel=1e-12, abs=1e-12)
    # decoupled: b is exactly the confining derivative
    assert mean_force(DEC, 0.8) == pytest.approx(0.8, abs=1e-15)


def test_marginal_density_normalization():
    for model in (GC, DW):
        z, _ = quad(lambda y: marginal_density(model, y), -12, 12, limit=200)
        assert z == pytest.approx(1.0, abs=1e-8)


def test_free_energy_derivative_is_mean_force():
    for model in (GC, DW):
        h = 1e-6
        for xi in (-1.0, 0.4, 1.3):
            fd = (free_energy(model, xi + h) - free_energy(model, xi - h)) / (2 * h)
            assert fd == pytest.approx(mean_force(model, xi), rel=1e-5, abs=1e-5)


# -- table construction ------------------------------------------------------

def test_gc_table_matches_linear_mean_force():
    table = build_table(GC)
    assert np.max(np.abs(table.b - table.xi / 2)) < 1e-8
    assert table.m == 241


def test_dw_table_matches_quartic_mean_force():
    table = build_table(DW)
    assert np.max(np.abs(table.b - (4 * table.xi**3 - 4 * table.xi))) < 1e-6


def test_table_invariants():
    for model in (GC, TR, DW, DEC):
        table = build_table(model)
        assert np.all(table.phi > 0)
        assert table.mass() == pytest.approx(1.0, abs=1e-4)
        assert table.tail_mass < 1e-6
        # thermodynamic consistency on interior points; the discrete
        # derivative carries an h^2 F''' / 6 floor, visible for the quartic
        fp = np.gradient(table.F, table.xi)
        rel = np.abs(table.b - fp)[1:-1] / (1.0 + np.abs(table.b[1:-1]))
        floor = table.h**2 * np.max(np.abs(np.gradient(np.gradient(
            table.b, table.xi), table.xi))) / 6.0
        assert np.max(rel) < max(1e-4, 1.2 * floor)


def test_table_consistency_at_fine_grid():
    # the 1e-4 consistency target is met once the grid resolves F'''
    table = build_table(DW, m=2401)
    fp = np.gradient(table.F, table.xi)
    rel = np.abs(table.b - fp)[1:-1] / (1.0 + np.abs(table.b[1:-1]))
    assert np.max(rel) < 1e-4


def test_grid_refinement_stability():
    for model in (GC, TR, DW):
        t1 = build_table(model)
        # nested refinement: odd point count keeps the coarse nodes shared
        t2 = build_table(model, float(t1.xi[0]), float(t1.xi[-1]), 2 * t1.m - 1)
        assert np.max(np.abs(t2.b[::2] - t1.b)) < 1e-6


def test_table_interpolation_and_extrapolation():
    table = build_table(GC)
    xs = np.array([0.123, -2.456, 5.0])
    assert table.interp_b(xs) == pytest.approx(xs / 2, abs=1e-7)
    hi = float(table.xi[-1])
    # linear continuation beyond the grid with the edge slope (~1/2)
    far = table.interp_b(hi + 3.0)
    assert far == pytest.approx((hi + 3.0) / 2, rel=1e-5)


def test_table_csv_round_trip(tmp_path):
    table = build_table(GC, m=33)
    path = tmp_path / "table.csv"
    table.to_csv(path, header_lines=["provenance"])
    loaded = MeanForceTable.from_csv(path)
    for name in ("xi", "b", "F", "phi"):
        np.testing.assert_array_equal(getattr(loaded, name), getattr(table, name))


def test_build_table_argument_guards():
    with pytest.raises(ModelError, match="m >= 16"):
        build_table(GC, m=8)
    with pytest.raises(ModelError, match="xi_min"):
        build_table(GC, xi_min=2.0, xi_max=-2.0)


# -- fluctuation --------------------------------------------------------------

def test_fluctuation_closed_forms():
    table_tr = build_table(TR)
    x = np.array([0.4, -1.1])
    assert fluctuation(TR, table_tr, x) == pytest.approx(1.0 * (x[1] - x[0]))
    table_gc = build_table(GC)
    assert fluctuation(GC, table_gc, x) == pytest.approx(-(x[1] + x[0] / 2))
    table_dec = build_table(DEC)
    assert fluctuation(DEC, table_dec, x) == 0.0


def test_fluctuation_zero_conditional_mean():
    for model in (GC, TR, DW):
        table = build_table(model)
        for xi in table.xi[:: table.m // 8]:
            assert abs(conditional_f_mean(model, table, float(xi))) < 1e-6


# -- constants ----------------------------------------------------------------

def test_kappa_sq_values():
    assert kappa_sq(QuadraticCoupled(1.0, 1.5, 3.0)) == pytest.approx(2.25)
    assert kappa_sq(TrackingBath("x^2/2", k=2.0, n=4)) == pytest.approx(12.0)
    assert kappa_sq(DEC) == 0.0


def test_kappa_sq_monte_carlo_cross_check():
    # independent check of the closed form against equilibrium sampling
    from effdyn.sde import NoisePlan, equilibrium_start

    model = QuadraticCoupled(1.0, 1.0, 2.0)
    sampler = equilibrium_start(model)
    plan = NoisePlan(master_seed=5, T=1.0, dt=0.5)
    vals = []
    for i in range(2000):
        x = sampler(plan.initial_rng(i))
        vals.append(float(np.sum(model.cross(x) ** 2)))
    est = np.mean(vals)
    se = np.std(vals, ddof=1) / np.sqrt(len(vals))
    assert abs(est - kappa_sq(model)) <= max(4 * se, 1e-12)


def test_poincare_constants():
    rho, method = poincare_constant(GC)
    assert rho == 2.0 and method == "exact-gaussian"
    rho, method = poincare_constant(TrackingBath("x^2/2", k=3.0, n=2, beta=2.0))
    assert rho == pytest.approx(6.0) and method == "exact-gaussian"
    rho, method = poincare_constant(DEC)
    assert rho == pytest.approx(1.0) and method == "convexity-lower-bound"


def test_poincare_rejects_nonconvex_bath():
    model = Decoupled("x^2/2", "(x^2-1)^2", beta=1.0)
    with pytest.raises(ModelError, match="not convex"):
        poincare_constant(model)


def test_one_sided_lipschitz():
    assert one_sided_lipschitz(build_table(GC)) == 0.0
    lb = one_sided_lipschitz(build_table(DW))
    assert lb == pytest.approx(4.0, abs=0.01)
    # hand-built decreasing drift on a bounded grid: b = -xi -> L_b = 1
    xi = np.linspace(-2, 2, 41)
    table = MeanForceTable(xi=xi, b=-xi, F=xi**2 / 2, phi=np.ones_like(xi) / 4)
    assert one_sided_lipschitz(table) == pytest.approx(1.0)


def test_c_alpha_constant_slope_cases():
    assert c_alpha(GC, build_table(GC)) == pytest.approx(0.25, abs=1e-6)
    assert c_alpha(DEC, build_table(DEC)) == pytest.approx(1.0, abs=1e-6)


def test_c_alpha_dw_against_independent_quadrature():
    # oracle: alpha(|x|) = max(4, 12x^2-4) for the quartic drift, integrated
    # against the normalized marginal by adaptive quadrature
    z = quad(lambda y: np.exp(-(y * y - 1) ** 2), -6, 6, limit=200)[0]
    oracle = quad(lambda y: np.maximum(4.0, 12 * y * y - 4) ** 2
                  * np.exp(-(y * y - 1) ** 2) / z, -6, 6, limit=200)[0]
    val = c_alpha(DW, build_table(DW))
    assert val == pytest.approx(oracle, rel=5e-3)


def test_c_alpha_higher_moment():
    # p = 1.5 -> exponent 6; constant |b'| = 1/2 integrates to (1/2)^6
    val = c_alpha(GC, build_table(GC), p=1.5)
    assert val == pytest.approx(0.5**6, rel=1e-6)
    with pytest.raises(ModelError, match="p must lie"):
        c_alpha(GC, build_table(GC), p=2.0)


def test_f_l2_saturates_for_linear_fluctuations():
    # TR: int f^2 psi = k/beta and kappa^2/rho = k/beta -- equality
    for k, beta in ((1.0, 1.0), (2.0, 0.5)):
        model = TrackingBath("x^2/2", k=k, n=2, beta=beta)
        table = build_table(model)
        val = f_l2(model, table)
        assert val == pytest.approx(k / beta, rel=1e-3)
        rho, _ = poincare_constant(model)
        assert val == pytest.approx(kappa_sq(model) / rho, rel=1e-3)
    # GC oracle: E[(x2 + x1/2)^2] = 0.5 under covariance [[2,-1],[-1,1]]
    assert f_l2(GC, build_table(GC)) == pytest.approx(0.5, abs=1e-4)
    assert f_l2(DEC, build_table(DEC)) == 0.0


def test_f_l2_bound_entries():
    for model in (GC, TR, DW, DEC):
        entry = check_f_bound(model)
        assert entry.satisfied
        rho, _ = poincare_constant(model)
        assert entry.rhs == pytest.approx(kappa_sq(model) / rho)
        # linear-fluctuation families saturate the inequality
        if model.family in ("GC", "TR", "DW"):
            assert entry.lhs == pytest.approx(entry.rhs, rel=1e-3)


def test_quadrature_requires_conditional_structure():
    from effdyn.mean_force import QuadratureError
    from effdyn.potentials import PotentialModel

    class Opaque(PotentialModel):
        family = "OPAQUE"

        def grad(self, x):
            return np.asarray(x, dtype=float)

        def energy(self, x):
            x = np.asarray(x, dtype=float)
            return 0.5 * np.sum(x * x, axis=-1)

        def marginal(self):
            raise NotImplementedError

    model = Opaque(4, beta=1.0)
    with pytest.raises(QuadratureError):
        conditional_law(model, 0.0)
    with pytest.raises(QuadratureError):
        mean_force(model, 0.0)


def test_theory_constants_assembly():
    cons = theory_constants(GC, p=1.5)
    assert cons.kappa_sq == 1.0
    assert cons.rho == 2.0
    assert cons.rho_method == "exact-gaussian"
    assert cons.l_b == 0.0
    assert cons.c_alpha == pytest.approx(0.25, abs=1e-6)
    assert cons.c_alpha_p == pytest.approx(0.5**6, rel=1e-6)
    assert cons.as_dict()["p"] == 1.5
