"""Path simulation: full, effective, coupled and two-timescale dynamics.

The full model follows the overdamped dynamics
``dX = -grad V(X) dt + sqrt(2/beta) dW`` discretized with Euler-Maruyama;
the closed scalar dynamics ``dxi = -b(xi) dt + sqrt(2/beta) dW1`` consumes
bitwise the same first-coordinate increments, which makes pathwise
differences between the two meaningful.  The running fluctuation integral
``e_t = int_0^t f(X_s) ds`` is accumulated with the left-endpoint rule so all
discrete objects share one time grid.

Noise is organized around counter-based Philox streams: the increment for
(path i, step j, coordinate c) is a pure function of (master_seed, i, j, c),
independent of scheduling and of worker count.  Plans can be refined in a
strong sense (Brownian-bridge midpoints), so halved-step runs follow the same
Brownian path as their parent — the tool for discretization-sensitivity
reports.

Ensembles are embarrassingly parallel over paths: fixed-size path blocks are
simulated vectorized (optionally across a thread pool) and reduced in path
order, so results are byte-identical at any thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bounds import fmt
from .potentials import ModelError

_EXPLOSION = 1.0e6
_BLOCK = 1024

_STREAM_INCREMENTS = 0
_STREAM_INITIAL = 1
_STREAM_BRIDGE = 2  # + refinement level


class SimulationError(RuntimeError):
    """Integration failure; carries the offending step when known."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class SamplingError(RuntimeError):
    """Equilibrium sampling diagnostic failure."""


@dataclass(frozen=True)
class NoisePlan:
    """Reproducible noise source on a fixed time grid."""

    master_seed: int
    T: float
    dt: float
    level: int = 0

    def __post_init__(self):
        if self.T <= 0 or self.dt <= 0:
            raise ModelError("T and dt must be positive")
        if abs(self.steps * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ModelError(f"dt={self.dt} does not divide T={self.T}")

    @property
    def steps(self):
        return int(round(self.T / self.dt))

    def _stream(self, path, tag):
        bg = np.random.Philox(counter=[0, 0, 0, tag],
                              key=[self.master_seed, int(path)])
        return np.random.Generator(bg)

    def increments(self, path, ncoords):
        """Standard-normal array of shape (steps, ncoords) for one path."""
        return self._stream(path, _STREAM_INCREMENTS).standard_normal((self.steps, ncoords))

    def initial_rng(self, path):
        """Generator reserved for the initial condition of one path."""
        return self._stream(path, _STREAM_INITIAL)

    def refine(self):
        """Plan at dt/2 following the same Brownian path (bridge midpoints)."""
        return _RefinedNoisePlan(master_seed=self.master_seed, T=self.T,
                                 dt=self.dt / 2.0, level=self.level + 1,
                                 parent=self)


@dataclass(frozen=True)
class _RefinedNoisePlan(NoisePlan):
    parent: NoisePlan = None

    def increments(self, path, ncoords):
        coarse = self.parent.increments(path, ncoords)
        bridge = self._stream(path, _STREAM_BRIDGE + self.level - 1) \
            .standard_normal(coarse.shape)
        fine = np.empty((2 * coarse.shape[0], ncoords))
        inv = 1.0 / np.sqrt(2.0)
        fine[0::2] = (coarse + bridge) * inv
        fine[1::2] = (coarse - bridge) * inv
        return fine

    def initial_rng(self, path):
        return self.parent.initial_rng(path)


@dataclass
class Trajectory:
    """Time grid plus states; states are (steps+1, n) or (steps+1,) scalars."""

    t: np.ndarray
    states: np.ndarray

    def to_csv(self, path, header_lines=()):
        states = self.states if self.states.ndim == 2 else self.states[:, None]
        cols = ["t"] + ([f"x{i + 1}" for i in range(states.shape[1])]
                        if self.states.ndim == 2 else ["xi"])
        with open(path, "w", newline="\n") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write(",".join(cols) + "\n")
            for ti, row in zip(self.t, states):
                fh.write(",".join(fmt(float(v)) for v in (ti, *row)) + "\n")


@dataclass
class CoupledPair:
    """Full and effective trajectories driven by the same slow noise."""

    full: Trajectory
    eff: Trajectory
    fluct_integral: np.ndarray


@dataclass(frozen=True)
class TwoScaleConfig:
    """Timescale separation of the bath coordinates (scalar or per-coordinate)."""

    epsilon: float | np.ndarray

    def rates_vector(self, nbath):
        eps = np.asarray(self.epsilon, dtype=float)
        if eps.ndim == 0:
            eps = np.full(nbath, float(eps))
        if eps.shape != (nbath,):
            raise ModelError(f"epsilon must be scalar or length {nbath}")
        if np.any(eps <= 0):
            raise ModelError("epsilon entries must be positive")
        return eps


# ---------------------------------------------------------------------------
# equilibrium sampling


def _inverse_cdf_table(pot, beta, width_sigmas=10.0, npts=20001):
    from .mean_force import _gibbs1d_stats

    _, mean, std, ref = _gibbs1d_stats(pot, beta)
    grid = np.linspace(mean - width_sigmas * std, mean + width_sigmas * std, npts)
    pdf = np.exp(-beta * (np.asarray(pot.value(grid), dtype=float) - ref))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(grid))])
    return grid, cdf / cdf[-1]


def equilibrium_start(model):
    """Exact equilibrium sampler: rng -> point in R^n.

    Joint-Gaussian models draw from the closed-form covariance; tracking-bath
    models draw the slow coordinate by inverse CDF of the marginal and the
    bath from its Gaussian conditional; decoupled models draw every
    coordinate by inverse CDF.
    """
    jg = model.joint_gaussian()
    if jg is not None:
        mean, cov = jg
        chol = np.linalg.cholesky(cov)

        def sample(rng):
            return mean + chol @ rng.standard_normal(model.n)

        return sample

    pots = model.coordinate_potentials()
    if pots is not None:
        tables = [_inverse_cdf_table(p, model.beta) for p in pots]

        def sample(rng):
            u = rng.random(model.n)
            return np.array([np.interp(u[i], tables[i][1], tables[i][0])
                             for i in range(model.n)])

        return sample

    facts = model.analytic_facts
    kind, info = model.marginal()
    if facts is not None and kind == "gibbs1d":
        grid, cdf = _inverse_cdf_table(info, model.beta)
        sigma = np.sqrt(facts.sigma2)

        def sample(rng):
            x1 = np.interp(rng.random(), cdf, grid)
            bath = facts.conditional_mean(x1) + sigma * rng.standard_normal(model.n - 1)
            return np.concatenate([[x1], bath])

        return sample

    return mala_start(model)


def fixed_start(x0):
    """Deterministic mode: every path starts at x0."""
    x0 = np.asarray(x0, dtype=float)

    def sample(rng):
        return x0.copy()

    return sample


@dataclass(frozen=True)
class NonEquilibriumStart:
    """User initial sampler plus its declared density-ratio bound.

    ``density_ratio_bound`` is the sup of (initial density / equilibrium
    density); it rescales the pathwise bound for non-equilibrium starts.
    """

    sampler: object
    density_ratio_bound: float


def mala_start(model, n_steps=10_000, step=None, acceptance_window=(0.4, 0.8)):
    """Metropolis-adjusted Langevin fallback for models without closed samplers.

    Runs an accept/reject-corrected chain per draw and raises when the
    acceptance rate leaves ``acceptance_window``.  Registered families never
    reach this path (they all carry exact samplers).
    """
    step = 1e-2 / model.beta if step is None else step

    def sample(rng):
        x = rng.standard_normal(model.n) * 0.1
        sig = np.sqrt(2.0 * step / model.beta)
        accepted = 0
        for _ in range(n_steps):
            g = model.grad(x)
            prop = x - g * step + sig * rng.standard_normal(model.n)
            gp = model.grad(prop)
            loga = (-model.beta * (model.energy(prop) - model.energy(x))
                    - model.beta / (4.0 * step) * float(np.sum((x - prop + gp * step) ** 2))
                    + model.beta / (4.0 * step) * float(np.sum((prop - x + g * step) ** 2)))
            if np.log(rng.random()) < loga:
                x = prop
                accepted += 1
        rate = accepted / n_steps
        if not acceptance_window[0] <= rate <= acceptance_window[1]:
            raise SamplingError(
                f"MALA acceptance rate {rate:.3f} outside {acceptance_window}")
        return x

    return sample


def sample_equilibrium(model, rng):
    """One equilibrium draw (convenience wrapper around the sampler factory)."""
    return equilibrium_start(model)(rng)


# ---------------------------------------------------------------------------
# drift helpers


def effective_drift(model, table=None, use_table=False):
    """Closed drift of the scalar dynamics: exact b when available, else spline."""
    if not use_table:
        try:
            model.mean_force_exact(0.0)
            return model.mean_force_exact
        except NotImplementedError:
            pass
    if table is None:
        raise ModelError("no mean-force table available for the effective drift")
    return table.interp_b


def _check_explosion(x, step):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > _EXPLOSION:
        raise SimulationError(f"state left |x| <= {_EXPLOSION:g} at step {step}", step=step)


# ---------------------------------------------------------------------------
# single-trajectory integrators


def simulate_full(model, x0, plan, path=0, increments=None):
    """Euler-Maruyama path of the full dynamics."""
    steps, dt = plan.steps, plan.dt
    G = plan.increments(path, model.n) if increments is None else increments
    sig = np.sqrt(2.0 * dt / model.beta)
    states = np.empty((steps + 1, model.n))
    x = np.asarray(x0, dtype=float).copy()
    states[0] = x
    for j in range(steps):
        x = x - model.grad(x) * dt + sig * G[j]
        _check_explosion(x, j)
        states[j + 1] = x
    return Trajectory(t=np.arange(steps + 1) * dt, states=states)


def simulate_coupled(model, table, x0, plan, path=0, use_table=False):
    """Full and effective paths on shared slow noise, plus the running e_t."""
    from .mean_force import fluctuation

    steps, dt = plan.steps, plan.dt
    G = plan.increments(path, model.n)
    b = effective_drift(model, table, use_table=use_table)
    sig = np.sqrt(2.0 * dt / model.beta)
    full = np.empty((steps + 1, model.n))
    eff = np.empty(steps + 1)
    fluct = np.empty(steps + 1)
    x = np.asarray(x0, dtype=float).copy()
    xi = x[0]
    full[0], eff[0], fluct[0] = x, xi, 0.0
    e = 0.0
    for j in range(steps):
        e = e + float(fluctuation(model, table, x)) * dt
        x = x - model.grad(x) * dt + sig * G[j]
        xi = xi - b(xi) * dt + sig * G[j, 0]
        _check_explosion(x, j)
        full[j + 1], eff[j + 1], fluct[j + 1] = x, xi, e
    t = np.arange(steps + 1) * dt
    return CoupledPair(full=Trajectory(t, full), eff=Trajectory(t, eff),
                       fluct_integral=fluct)


def simulate_two_scale(model, x0, plan, cfg, method="auto", dt_factor=0.01,
                       path=0, increments=None):
    """Two-timescale path: slow coordinate unscaled, bath sped up by 1/eps.

    ``method="euler"`` integrates everything explicitly and requires
    ``dt <= min(eps) * dt_factor``; ``method="splitting"`` performs an exact
    Ornstein-Uhlenbeck bath substep (available when the bath drift is linear
    in the bath coordinate given x1) followed by an Euler step of the slow
    coordinate, with no step restriction.
    """
    steps, dt = plan.steps, plan.dt
    eps = cfg.rates_vector(model.n - 1)
    if method == "auto":
        method = "splitting" if model.bath_ou() is not None else "euler"
    G = plan.increments(path, model.n) if increments is None else increments
    states = np.empty((steps + 1, model.n))
    x = np.asarray(x0, dtype=float).copy()
    states[0] = x

    if method == "euler":
        if dt > np.min(eps) * dt_factor + 1e-15:
            raise SimulationError(
                f"dt={dt:g} too large for the plain integrator at min(eps)={np.min(eps):g}; "
                f"need dt <= {np.min(eps) * dt_factor:g} or the splitting integrator")
        dtvec = np.concatenate([[dt], dt / eps])
        sigvec = np.sqrt(2.0 * dtvec / model.beta)
        for j in range(steps):
            x = x - model.grad(x) * dtvec + sigvec * G[j]
            _check_explosion(x, j)
            states[j + 1] = x
    elif method == "splitting":
        ou = model.bath_ou()
        if ou is None:
            raise SimulationError("splitting integrator needs a linear bath drift")
        rates, mean_fn = ou
        decay = np.exp(-rates * dt / eps)
        bstd = np.sqrt((1.0 - decay**2) / (model.beta * rates))
        sig = np.sqrt(2.0 * dt / model.beta)
        for j in range(steps):
            m = mean_fn(x[0])
            x[1:] = m + (x[1:] - m) * decay + bstd * G[j, 1:]
            x[0] = x[0] - model.d1v(x) * dt + sig * G[j, 0]
            _check_explosion(x, j)
            states[j + 1] = x
    else:
        raise ModelError(f"unknown integrator {method!r}")
    return Trajectory(t=np.arange(steps + 1) * dt, states=states)


# ---------------------------------------------------------------------------
# vectorized ensembles


@dataclass
class CoupledEnsemble:
    """Per-path reductions of a coupled ensemble, in fixed path order."""

    sup_abs_diff: np.ndarray    # max over the grid of |X^1 - xi| per path
    sup_abs_fluct: np.ndarray   # max over the grid of |e_t| per path
    n_paths: int
    plan: NoisePlan
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_pairs(cls, pairs, plan=None, **meta):
        sup_d = np.array([np.max(np.abs(p.full.states[:, 0] - p.eff.states))
                          for p in pairs])
        sup_e = np.array([np.max(np.abs(p.fluct_integral)) for p in pairs])
        return cls(sup_abs_diff=sup_d, sup_abs_fluct=sup_e, n_paths=len(sup_d),
                   plan=plan, meta=dict(meta))


def _as_ensemble(obj):
    if hasattr(obj, "sup_abs_diff"):
        return obj
    return CoupledEnsemble.from_pairs(list(obj))


def _block_coupled(model, table, plan, paths, start, use_table, two_scale, method):
    """Vectorized coupled simulation of one block of paths."""
    steps, dt = plan.steps, plan.dt
    nb = len(paths)
    n = model.n
    X = np.empty((nb, n))
    for r, i in enumerate(paths):
        X[r] = start(plan.initial_rng(i))
    G = np.empty((nb, steps, n))
    for r, i in enumerate(paths):
        G[r] = plan.increments(i, n)

    b = effective_drift(model, table, use_table=use_table)

    def fluct_vals(X):
        return b(X[:, 0]) - model.d1v(X)

    xi = X[:, 0].copy()
    e = np.zeros(nb)
    sup_d = np.zeros(nb)
    sup_e = np.zeros(nb)
    sig = np.sqrt(2.0 * dt / model.beta)

    if two_scale is None:
        for j in range(steps):
            e += fluct_vals(X) * dt
            X = X - model.grad(X) * dt + sig * G[:, j, :]
            xi = xi - b(xi) * dt + sig * G[:, j, 0]
            if j % 64 == 0:
                _check_explosion(X, j)
            np.maximum(sup_d, np.abs(X[:, 0] - xi), out=sup_d)
            np.maximum(sup_e, np.abs(e), out=sup_e)
        _check_explosion(X, steps - 1)
        return sup_d, sup_e

    eps = two_scale.rates_vector(n - 1)
    if method == "auto":
        method = "splitting" if model.bath_ou() is not None else "euler"
    if method == "euler":
        if dt > np.min(eps) * 0.01 + 1e-15:
            raise SimulationError(
                f"dt={dt:g} too large for the plain two-scale integrator; "
                "use the splitting integrator")
        dtvec = np.concatenate([[dt], dt / eps])
        sigvec = np.sqrt(2.0 * dtvec / model.beta)
        for j in range(steps):
            e += fluct_vals(X) * dt
            X = X - model.grad(X) * dtvec + sigvec * G[:, j, :]
            xi = xi - b(xi) * dt + sig * G[:, j, 0]
            if j % 64 == 0:
                _check_explosion(X, j)
            np.maximum(sup_d, np.abs(X[:, 0] - xi), out=sup_d)
            np.maximum(sup_e, np.abs(e), out=sup_e)
        _check_explosion(X, steps - 1)
        return sup_d, sup_e
    if method != "splitting":
        raise ModelError(f"unknown integrator {method!r}")
    ou = model.bath_ou()
    if ou is None:
        raise SimulationError("splitting integrator needs a linear bath drift")
    rates, mean_fn = ou
    decay = np.exp(-rates * dt / eps)
    bstd = np.sqrt((1.0 - decay**2) / (model.beta * rates))
    for j in range(steps):
        e += fluct_vals(X) * dt
        m = mean_fn(X[:, 0])
        X[:, 1:] = m + (X[:, 1:] - m) * decay + bstd * G[:, j, 1:]
        X[:, 0] = X[:, 0] - model.d1v(X) * dt + sig * G[:, j, 0]
        xi = xi - b(xi) * dt + sig * G[:, j, 0]
        if j % 64 == 0:
            _check_explosion(X, j)
        np.maximum(sup_d, np.abs(X[:, 0] - xi), out=sup_d)
        np.maximum(sup_e, np.abs(e), out=sup_e)
    _check_explosion(X, steps - 1)
    return sup_d, sup_e


def coupled_ensemble(model, table, plan, n_paths, start=None, use_table=False,
                     two_scale=None, method="auto", threads=1):
    """Reduced coupled ensemble over ``n_paths`` independent paths.

    ``start`` defaults to the exact equilibrium sampler.  ``two_scale`` (a
    :class:`TwoScaleConfig`) couples the sped-up bath system against the
    epsilon-independent effective dynamics on shared slow noise.  ``threads``
    affects speed only: paths are processed in fixed-size blocks and reduced
    in path order.
    """
    start = equilibrium_start(model) if start is None else start
    sup_d = np.empty(n_paths)
    sup_e = np.empty(n_paths)
    blocks = [range(lo, min(lo + _BLOCK, n_paths)) for lo in range(0, n_paths, _BLOCK)]

    def run_block(blk):
        return _block_coupled(model, table, plan, blk, start, use_table,
                              two_scale, method)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_block, blocks))
    else:
        results = [run_block(blk) for blk in blocks]
    for blk, (d, ev) in zip(blocks, results):
        sup_d[blk.start:blk.stop] = d
        sup_e[blk.start:blk.stop] = ev
    meta = {"model": model.label(), "T": plan.T, "dt": plan.dt,
            "master_seed": plan.master_seed, "n_paths": n_paths}
    if two_scale is not None:
        meta["epsilon"] = np.asarray(two_scale.epsilon).tolist()
        meta["method"] = method
    return CoupledEnsemble(sup_abs_diff=sup_d, sup_abs_fluct=sup_e,
                           n_paths=n_paths, plan=plan, meta=meta)


def terminal_states(model, plan, n_paths, start=None, threads=1,
                    two_scale=None, method="auto"):
    """X_T over an ensemble of full (or two-scale) paths.

    Used by moment and stationarity checks; the two-scale variant verifies
    that the invariant measure does not depend on the timescale separation.
    """
    start = equilibrium_start(model) if start is None else start
    out = np.empty((n_paths, model.n))
    dt = plan.dt
    sig = np.sqrt(2.0 * dt / model.beta)
    if two_scale is not None:
        eps = two_scale.rates_vector(model.n - 1)
        if method == "auto":
            method = "splitting" if model.bath_ou() is not None else "euler"

    def run_block(blk):
        nb = len(blk)
        X = np.empty((nb, model.n))
        for r, i in enumerate(blk):
            X[r] = start(plan.initial_rng(i))
        G = np.empty((nb, plan.steps, model.n))
        for r, i in enumerate(blk):
            G[r] = plan.increments(i, model.n)
        if two_scale is None:
            for j in range(plan.steps):
                X = X - model.grad(X) * dt + sig * G[:, j, :]
                if j % 64 == 0:
                    _check_explosion(X, j)
        elif method == "euler":
            if dt > np.min(eps) * 0.01 + 1e-15:
                raise SimulationError("dt too large for the plain two-scale integrator")
            dtvec = np.concatenate([[dt], dt / eps])
            sigvec = np.sqrt(2.0 * dtvec / model.beta)
            for j in range(plan.steps):
                X = X - model.grad(X) * dtvec + sigvec * G[:, j, :]
                if j % 64 == 0:
                    _check_explosion(X, j)
        else:
            ou = model.bath_ou()
            if ou is None:
                raise SimulationError("splitting integrator needs a linear bath drift")
            rates, mean_fn = ou
            decay = np.exp(-rates * dt / eps)
            bstd = np.sqrt((1.0 - decay**2) / (model.beta * rates))
            for j in range(plan.steps):
                m = mean_fn(X[:, 0])
                X[:, 1:] = m + (X[:, 1:] - m) * decay + bstd * G[:, j, 1:]
                X[:, 0] = X[:, 0] - model.d1v(X) * dt + sig * G[:, j, 0]
                if j % 64 == 0:
                    _check_explosion(X, j)
        _check_explosion(X, plan.steps - 1)
        return X

    blocks = [range(lo, min(lo + _BLOCK, n_paths)) for lo in range(0, n_paths, _BLOCK)]
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_block, blocks))
    else:
        results = [run_block(blk) for blk in blocks]
    for blk, X in zip(blocks, results):
        out[blk.start:blk.stop] = X
    return out
