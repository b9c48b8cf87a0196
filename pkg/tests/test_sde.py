import numpy as np
import pytest

from effdyn.mean_force import build_table
from effdyn.potentials import (Decoupled, DoubleWell, ModelError,
                               PotentialModel, QuadraticCoupled, TrackingBath)
from effdyn.sde import (CoupledEnsemble, NoisePlan, SamplingError,
                        SimulationError, TwoScaleConfig, coupled_ensemble,
                        equilibrium_start, fixed_start, mala_start,
                        sample_equilibrium, simulate_coupled, simulate_full,
                        simulate_two_scale, terminal_states)

GC = QuadraticCoupled(1.0, 1.0, 2.0, beta=1.0)
TR = TrackingBath("x^2/2", k=1.0, n=2, beta=1.0)


class FreeDiffusion(PotentialModel):
    """Zero-potential test model: pure Brownian motion."""

    family = "FREE"

    def energy(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    def grad(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def cross(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.n - 1,))


# -- noise plans ---------------------------------------------------------------

def test_plan_steps_and_guards():
    plan = NoisePlan(master_seed=1, T=1.0, dt=5e-4)
    assert plan.steps == 2000
    with pytest.raises(ModelError, match="divide"):
        NoisePlan(master_seed=1, T=1.0, dt=0.0003)
    with pytest.raises(ModelError, match="positive"):
        NoisePlan(master_seed=1, T=-1.0, dt=0.1)


def test_increments_are_pure_functions_of_seed_path():
    plan = NoisePlan(master_seed=7, T=0.1, dt=0.01)
    a = plan.increments(3, 2)
    b = plan.increments(3, 2)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(plan.increments(4, 2), a)
    assert not np.array_equal(NoisePlan(master_seed=8, T=0.1, dt=0.01).increments(3, 2), a)


def test_initial_stream_is_independent_of_increments():
    plan = NoisePlan(master_seed=7, T=0.1, dt=0.01)
    before = plan.increments(0, 2)
    plan.initial_rng(0).standard_normal(100)
    np.testing.assert_array_equal(plan.increments(0, 2), before)


def test_refined_plan_follows_same_brownian_path():
    plan = NoisePlan(master_seed=3, T=1.0, dt=0.01)
    fine = plan.refine()
    assert fine.steps == 2 * plan.steps
    G = plan.increments(0, 2)
    Gf = fine.increments(0, 2)
    # pairwise sums reproduce the coarse increments (sqrt(2) normalization)
    np.testing.assert_allclose((Gf[0::2] + Gf[1::2]) / np.sqrt(2.0), G, atol=1e-12)


# -- basic integrators ----------------------------------------------------------

def test_drift_free_path_is_cumulative_noise():
    model = FreeDiffusion(2, beta=2.0)
    plan = NoisePlan(master_seed=2, T=1.0, dt=0.01)
    x0 = np.array([1.0, -2.0])
    traj = simulate_full(model, x0, plan, path=5)
    G = plan.increments(5, 2)
    expected = x0.copy()
    for j in range(plan.steps):
        expected = expected + np.sqrt(plan.dt) * G[j]  # sqrt(2 dt / beta) = sqrt(dt)
        np.testing.assert_allclose(traj.states[j + 1], expected, atol=1e-14)


def test_ou_mean_decay():
    # each coordinate is an independent unit-rate OU process
    model = Decoupled("x^2/2", "x^2/2", beta=1.0)
    plan = NoisePlan(master_seed=11, T=1.0, dt=5e-4)
    X = terminal_states(model, plan, 4096, start=fixed_start([1.0, 1.0]))
    est = X[:, 0].mean()
    se = X[:, 0].std(ddof=1) / np.sqrt(len(X))
    assert abs(est - np.exp(-1.0)) < 3 * se + 2e-4  # 2e-4 Euler bias allowance


def test_strong_order_one_refinement():
    plan = NoisePlan(master_seed=4, T=1.0, dt=0.01)
    half = plan.refine()
    quarter = half.refine()
    errs = {}
    for label, p in (("dt", plan), ("dt2", half)):
        diffs = []
        for i in range(48):
            x0 = sample_equilibrium(GC, plan.initial_rng(i))
            ref = simulate_full(GC, x0, quarter, path=i)
            cur = simulate_full(GC, x0, p, path=i)
            diffs.append(abs(cur.states[-1, 0] - ref.states[-1, 0]))
        errs[label] = np.mean(diffs)
    ratio = errs["dt"] / errs["dt2"]
    assert 1.5 < ratio < 2.8  # strong order 1 at fixed noise


def test_explosion_guard():
    # negative curvature: drift pushes outward, guard must trip
    class Unstable(PotentialModel):
        family = "BAD"

        def grad(self, x):
            return -40.0 * np.asarray(x, dtype=float)

        def energy(self, x):
            x = np.asarray(x, dtype=float)
            return -20.0 * np.sum(x * x, axis=-1)

    model = Unstable(2, beta=1.0)
    plan = NoisePlan(master_seed=1, T=2.0, dt=0.01)
    with pytest.raises(SimulationError) as err:
        simulate_full(model, np.array([1.0, 1.0]), plan)
    assert err.value.step is not None


# -- equilibrium sampling --------------------------------------------------------

def test_gc_equilibrium_covariance():
    plan = NoisePlan(master_seed=21, T=1.0, dt=1.0)
    sampler = equilibrium_start(GC)
    draws = np.array([sampler(plan.initial_rng(i)) for i in range(100_000)])
    cov = np.cov(draws.T)
    target = np.array([[2.0, -1.0], [-1.0, 1.0]])
    for a in range(2):
        for b in range(2):
            se = np.sqrt((cov[a, a] * cov[b, b] + cov[a, b] ** 2) / len(draws))
            assert abs(cov[a, b] - target[a, b]) < 4 * se


def test_dec_equilibrium_variances():
    model = Decoupled("x^2/2", "x^2/2", beta=2.0)
    plan = NoisePlan(master_seed=22, T=1.0, dt=1.0)
    sampler = equilibrium_start(model)
    draws = np.array([sampler(plan.initial_rng(i)) for i in range(20_000)])
    for c in range(2):
        var = draws[:, c].var(ddof=1)
        assert var == pytest.approx(0.5, abs=0.02)
    corr = np.corrcoef(draws.T)[0, 1]
    assert abs(corr) < 0.03


def test_dw_equilibrium_matches_quadrature_moments():
    from scipy.integrate import quad

    model = DoubleWell(1.0, 2, beta=1.0)
    z = quad(lambda y: np.exp(-(y * y - 1) ** 2), -6, 6)[0]
    m2 = quad(lambda y: y * y * np.exp(-(y * y - 1) ** 2) / z, -6, 6)[0]
    plan = NoisePlan(master_seed=23, T=1.0, dt=1.0)
    sampler = equilibrium_start(model)
    draws = np.array([sampler(plan.initial_rng(i)) for i in range(20_000)])
    x1 = draws[:, 0]
    se = x1.std(ddof=1) ** 2 / np.sqrt(len(x1)) * np.sqrt(2)
    assert abs((x1**2).mean() - m2) < 5 * se
    # bath tracks x1 with conditional variance 1/(beta k) = 1
    z2 = draws[:, 1] - draws[:, 0]
    assert z2.var(ddof=1) == pytest.approx(1.0, abs=0.05)


def test_fixed_start_passthrough():
    x0 = np.array([0.25, -0.75])
    sampler = fixed_start(x0)
    plan = NoisePlan(master_seed=1, T=1.0, dt=1.0)
    np.testing.assert_array_equal(sampler(plan.initial_rng(0)), x0)


def test_stationarity_of_full_dynamics():
    # started at equilibrium, X_T keeps the equilibrium moments
    plan = NoisePlan(master_seed=31, T=1.0, dt=5e-4)
    X = terminal_states(GC, plan, 4096)
    target = np.array([[2.0, -1.0], [-1.0, 1.0]])
    cov = np.cov(X.T)
    for a in range(2):
        for b in range(2):
            se = np.sqrt((cov[a, a] * cov[b, b] + cov[a, b] ** 2) / len(X))
            assert abs(cov[a, b] - target[a, b]) < 4 * se + 4 * plan.dt


def test_mala_diagnostic_trips_at_default_window():
    # at the default step the chain accepts ~99% of proposals, far above the
    # diagnostic window, so the guard must fire
    model = DoubleWell(1.0, 2, beta=1.0)
    sampler = mala_start(model, n_steps=400)
    plan = NoisePlan(master_seed=41, T=1.0, dt=1.0)
    with pytest.raises(SamplingError, match="acceptance rate"):
        sampler(plan.initial_rng(0))


def test_mala_marginal_moments_with_relaxed_window():
    model = QuadraticCoupled(1.0, 1.0, 2.0, beta=1.0)
    sampler = mala_start(model, n_steps=3000, step=0.05,
                         acceptance_window=(0.4, 1.0))
    plan = NoisePlan(master_seed=42, T=1.0, dt=1.0)
    draws = np.array([sampler(plan.initial_rng(i)) for i in range(64)])
    # loose check: marginal variances within 35% of (2, 1)
    assert abs(draws[:, 0].var(ddof=1) - 2.0) < 0.7
    assert abs(draws[:, 1].var(ddof=1) - 1.0) < 0.35


# -- coupled simulation ----------------------------------------------------------

def test_coupled_shares_slow_increments_bitwise():
    table = build_table(GC)
    plan = NoisePlan(master_seed=51, T=0.05, dt=0.005)
    x0 = sample_equilibrium(GC, plan.initial_rng(0))
    pair = simulate_coupled(GC, table, x0, plan, path=0)
    G = plan.increments(0, 2)
    sig = np.sqrt(2.0 * plan.dt)
    # replay both recursions with the same increments
    x = x0.copy()
    xi = x0[0]
    for j in range(plan.steps):
        x = x - GC.grad(x) * plan.dt + sig * G[j]
        xi = xi - GC.mean_force_exact(xi) * plan.dt + sig * G[j, 0]
        np.testing.assert_array_equal(pair.full.states[j + 1], x)
        assert pair.eff.states[j + 1] == xi


def test_coupled_starts_at_slow_coordinate():
    table = build_table(GC)
    plan = NoisePlan(master_seed=52, T=0.05, dt=0.005)
    x0 = np.array([0.3, 1.4])
    pair = simulate_coupled(GC, table, x0, plan)
    assert pair.eff.states[0] == x0[0]
    assert pair.fluct_integral[0] == 0.0


def test_dec_coupling_is_exact_bitwise():
    for model in (Decoupled("x^2/2", "x^2/2", beta=1.0),
                  Decoupled("x^4/4 + x^2/2", "x^2", beta=1.0)):
        table = build_table(model)
        plan = NoisePlan(master_seed=53, T=0.5, dt=5e-4)
        for n_paths in (3, 64):
            ens = coupled_ensemble(model, table, plan, n_paths)
            assert np.all(ens.sup_abs_diff == 0.0)
            assert np.all(ens.sup_abs_fluct == 0.0)


def test_fluct_integral_against_trapezoid():
    table = build_table(TR)
    plan = NoisePlan(master_seed=54, T=1.0, dt=1e-3)
    x0 = sample_equilibrium(TR, plan.initial_rng(0))
    pair = simulate_coupled(TR, table, x0, plan)
    f_vals = 1.0 * (pair.full.states[:, 1] - pair.full.states[:, 0])
    trapz = np.concatenate([[0.0], np.cumsum(0.5 * (f_vals[1:] + f_vals[:-1]) * plan.dt)])
    # left-endpoint vs trapezoid quadrature on the same path differ at O(dt)
    assert np.max(np.abs(pair.fluct_integral - trapz)) < 10 * plan.dt


def test_ensemble_matches_pair_reduction():
    table = build_table(GC)
    plan = NoisePlan(master_seed=55, T=0.2, dt=2e-3)
    ens = coupled_ensemble(GC, table, plan, 8)
    pairs = [simulate_coupled(GC, table,
                              sample_equilibrium(GC, plan.initial_rng(i)), plan, path=i)
             for i in range(8)]
    rebuilt = CoupledEnsemble.from_pairs(pairs)
    np.testing.assert_allclose(ens.sup_abs_diff, rebuilt.sup_abs_diff, atol=1e-12)
    np.testing.assert_allclose(ens.sup_abs_fluct, rebuilt.sup_abs_fluct, atol=1e-12)


def test_ensemble_reproducible_across_threads():
    table = build_table(GC)
    plan = NoisePlan(master_seed=56, T=0.5, dt=5e-4)
    runs = [coupled_ensemble(GC, table, plan, 2100, threads=th) for th in (1, 2, 4)]
    for other in runs[1:]:
        np.testing.assert_array_equal(runs[0].sup_abs_diff, other.sup_abs_diff)
        np.testing.assert_array_equal(runs[0].sup_abs_fluct, other.sup_abs_fluct)


def test_spline_drift_route():
    # forcing the tabulated drift exercises spline evaluation + extrapolation
    table = build_table(GC)
    plan = NoisePlan(master_seed=57, T=0.2, dt=2e-3)
    exact = coupled_ensemble(GC, table, plan, 16, use_table=False)
    spl = coupled_ensemble(GC, table, plan, 16, use_table=True)
    np.testing.assert_allclose(spl.sup_abs_diff, exact.sup_abs_diff, atol=1e-5)


# -- two-scale simulation ---------------------------------------------------------

def test_two_scale_at_unit_epsilon_equals_full_bitwise():
    plan = NoisePlan(master_seed=61, T=0.5, dt=5e-4)
    x0 = sample_equilibrium(TR, plan.initial_rng(0))
    full = simulate_full(TR, x0, plan, path=0)
    ts = simulate_two_scale(TR, x0, plan, TwoScaleConfig(1.0), method="euler", path=0)
    np.testing.assert_array_equal(full.states, ts.states)


def test_two_scale_stiffness_guard():
    plan = NoisePlan(master_seed=62, T=0.5, dt=5e-4)
    with pytest.raises(SimulationError, match="too large"):
        simulate_two_scale(TR, np.zeros(2), plan, TwoScaleConfig(0.01), method="euler")


def test_two_scale_stationary_variance_epsilon_independent():
    # Var(x2 - x1) = 1/(beta k) under the invariant law for every epsilon
    plan = NoisePlan(master_seed=63, T=2.0, dt=5e-4)
    for eps in (0.2, 0.05):
        X = terminal_states(TR, plan, 2048, two_scale=TwoScaleConfig(eps),
                            method="splitting")
        z = X[:, 1] - X[:, 0]
        se = np.sqrt(2.0 / len(z))  # relative SE of a Gaussian variance
        assert z.var(ddof=1) == pytest.approx(1.0, abs=5 * se)


def test_splitting_agrees_with_euler():
    # dt = eps/200 satisfies the plain-integrator guard; terminal means agree
    eps = 0.05
    plan = NoisePlan(master_seed=64, T=1.0, dt=eps / 200.0)
    Xs = terminal_states(TR, plan, 1024, two_scale=TwoScaleConfig(eps),
                         method="splitting")
    Xe = terminal_states(TR, plan, 1024, two_scale=TwoScaleConfig(eps),
                         method="euler")
    se = np.sqrt(Xs[:, 0].var(ddof=1) / len(Xs) + Xe[:, 0].var(ddof=1) / len(Xe))
    assert abs(Xs[:, 0].mean() - Xe[:, 0].mean()) < 3 * se


def test_two_scale_vector_epsilon():
    model = TrackingBath("x^2/2", k=1.0, n=3, beta=1.0)
    plan = NoisePlan(master_seed=65, T=0.2, dt=2e-3)
    x0 = sample_equilibrium(model, plan.initial_rng(0))
    traj = simulate_two_scale(model, x0, plan, TwoScaleConfig(np.array([0.1, 0.02])),
                              method="splitting")
    assert traj.states.shape == (plan.steps + 1, 3)
    with pytest.raises(ModelError, match="positive"):
        TwoScaleConfig(np.array([0.1, -0.1])).rates_vector(2)


def test_trajectory_csv_dump(tmp_path):
    plan = NoisePlan(master_seed=66, T=0.02, dt=0.01)
    traj = simulate_full(GC, np.zeros(2), plan)
    path = tmp_path / "traj.csv"
    traj.to_csv(path, header_lines=["run"])
    lines = path.read_text().splitlines()
    assert lines[1] == "t,x1,x2"
    assert len(lines) == 2 + plan.steps + 1
    # effective paths dump under a scalar column
    table = build_table(GC)
    pair = simulate_coupled(GC, table, np.zeros(2), plan)
    eff_path = tmp_path / "eff.csv"
    pair.eff.to_csv(eff_path)
    assert eff_path.read_text().splitlines()[0] == "t,xi"
