"""Conditional quantities along the slow coordinate and the theory constants.

For a model V with inverse temperature beta this module computes

* the conditional law of the bath coordinates given x1 = xi,
* the mean force b(xi) = E[d1V | x1 = xi], the marginal density phi and the
  free energy F = -ln(phi)/beta, tabulated on a uniform grid,
* the fluctuation f(x) = b(x1) - d1V(x),
* the constants entering the error bounds: the coupling strength
  kappa^2 = int |cross(x)|^2 psi, the conditional spectral-gap constant rho,
  the one-sided Lipschitz constant L_b of -b, and the running-maximum
  integrability constants C_alpha / C_{alpha,p}.

Gaussian conditionals are integrated with 64-node Gauss-Hermite quadrature
(exact for the polynomial integrands of the registered families); everything
else uses adaptive quadrature on a truncated domain.  All outputs are pure
functions of the model, so tables may be shared freely across workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad, simpson
from scipy.interpolate import CubicSpline

from .bounds import BoundEntry, fmt
from .potentials import ModelError

_GH_NODES = 64


class QuadratureError(RuntimeError):
    """Conditional or marginal integration failed to converge."""


@lru_cache(maxsize=8)
def _hermgauss(npts):
    t, w = np.polynomial.hermite.hermgauss(npts)
    return t, w / np.sqrt(np.pi)


def gauss_expect(fn, mean, sigma, npts=_GH_NODES):
    """E[fn(Y)] for Y ~ N(mean, sigma^2); fn must accept arrays."""
    t, w = _hermgauss(npts)
    return np.sum(fn(mean + np.sqrt(2.0) * sigma * t) * w)


@dataclass(frozen=True)
class Law1D:
    """Tabulated one-dimensional Gibbs law exp(-beta*W)/Z on a truncation."""

    grid: np.ndarray
    pdf: np.ndarray

    def mass(self):
        return float(simpson(self.pdf, x=self.grid))

    def mean(self):
        return float(simpson(self.grid * self.pdf, x=self.grid))

    def var(self):
        m = self.mean()
        return float(simpson((self.grid - m) ** 2 * self.pdf, x=self.grid))

    def expect(self, fn):
        return float(simpson(fn(self.grid) * self.pdf, x=self.grid))


def _gibbs1d_stats(pot, beta):
    """(Z, mean, std) of exp(-beta*pot)/Z via adaptive quadrature."""
    ref = float(pot.value(0.0))
    half = 8.0
    prev = None
    for _ in range(12):
        dens = lambda y: np.exp(-beta * (pot.value(y) - ref))
        z, _ = quad(dens, -half, half, limit=200)
        if z <= 0 or not np.isfinite(z):
            raise QuadratureError("marginal normalization is not finite")
        if prev is not None and abs(z - prev) <= 1e-13 * z:
            break
        prev = z
        half *= 2.0
    else:
        raise QuadratureError("marginal normalization did not converge")
    m1, _ = quad(lambda y: y * dens(y), -half, half, limit=200)
    m2, _ = quad(lambda y: y * y * dens(y), -half, half, limit=200)
    mean = m1 / z
    var = m2 / z - mean * mean
    if var <= 0:
        raise QuadratureError("marginal variance is not positive")
    return z, mean, np.sqrt(var), ref

def _build_law1d(pot, beta, width_sigmas=8.0, npts=2001):
    _, mean, std, ref = _gibbs1d_stats(pot, beta)
    grid = np.linspace(mean - width_sigmas * std, mean + width_sigmas * std, npts)
    raw = np.exp(-beta * (np.asarray(pot.value(grid), dtype=float) - ref))
    # normalize with the adaptive integrator so the tabulated mass is an
    # honest cross-check of the two quadrature routes
    z, _ = quad(lambda y: np.exp(-beta * (pot.value(y) - ref)),
                grid[0], grid[-1], limit=200)
    return Law1D(grid=grid, pdf=raw / z)


@dataclass(frozen=True)
class ConditionalLaw:
    """Law of the bath coordinates given x1 = xi.

    Either a closed-form Gaussian (``sigma2`` plus per-coordinate means) or,
    for decoupled models, a product of tabulated one-dimensional laws.
    """

    xi: float
    means: np.ndarray | None = None
    sigma2: float | None = None
    factors: tuple[Law1D, ...] | None = None

    @property
    def gaussian(self):
        return self.sigma2 is not None

    def mean_vector(self):
        if self.gaussian:
            return self.means
        return np.array([f.mean() for f in self.factors])

    def var_vector(self):
        if self.gaussian:
            return np.full(self.means.shape, self.sigma2)
        return np.array([f.var() for f in self.factors])

    def mass(self):
        """Integral of the density over the truncation domain (should be ~1)."""
        if self.gaussian:
            from scipy.special import erf

            return float(erf(8.0 / np.sqrt(2.0)) ** len(self.means))
        return float(np.prod([f.mass() for f in self.factors]))


def conditional_law(model, xi):
    """Conditional bath law at x1 = xi; Gaussian closed form when available."""
    facts = model.analytic_facts
    if facts is not None:
        return ConditionalLaw(xi=float(xi), means=facts.conditional_mean(float(xi)),
                              sigma2=facts.sigma2)
    pots = model.coordinate_potentials()
    if pots is None:
        if model.n > 2:
            raise QuadratureError("generic conditional quadrature supports bath dimension 1 only")
        raise QuadratureError("no conditional structure available for this model")
    laws = tuple(_build_law1d(p, model.beta) for p in pots[1:])
    return ConditionalLaw(xi=float(xi), factors=laws)


def _bath_affine(model):
    """d1V is affine in the bath coordinates iff the cross derivative is constant."""
    return model.cross_constant is not None


def mean_force(model, xi):
    """b(xi) = E[d1V | x1 = xi] by quadrature against the conditional law."""
    xi = float(xi)
    if model.coordinate_potentials() is not None:
        # decoupled: d1V carries no bath dependence
        return float(model.mean_force_exact(xi))
    facts = model.analytic_facts
    if facts is None:
        raise QuadratureError("no conditional structure available for this model")
    if model.n == 2:
        mean = float(facts.conditional_mean(xi)[..., 0])
        fn = lambda y: model.d1v(np.stack([np.full_like(y, xi), y], axis=-1))
        return float(gauss_expect(fn, mean, np.sqrt(facts.sigma2)))
    if _bath_affine(model):
        # affine integrand: the expectation only needs the conditional mean
        point = np.concatenate([[xi], facts.conditional_mean(xi)])
        return float(model.d1v(point))
    raise QuadratureError("conditional quadrature for bath dimension > 1 "
                          "requires an affine slow force")


def marginal_logdensity(model, xi):
    """log phi(xi); exact in the tails where phi itself underflows."""
    kind, info = model.marginal()
    xi = np.asarray(xi, dtype=float)
    if kind == "gaussian":
        return -0.5 * xi * xi / info - 0.5 * np.log(2.0 * np.pi * info)
    z, _, _, ref = _marginal_stats_cached(model)
    return -model.beta * (np.asarray(info.value(xi), dtype=float) - ref) - np.log(z)


def marginal_density(model, xi):
    """Marginal density phi(xi) of the slow coordinate, normalized on R."""
    return np.exp(marginal_logdensity(model, xi))


def free_energy(model, xi):
    """F(xi) = -log(phi)/beta (additive constant not fixed here)."""
    return -marginal_logdensity(model, xi) / model.beta


def _marginal_stats_cached(model):
    cached = getattr(model, "_marginal_cache", None)
    if cached is None:
        kind, info = model.marginal()
        if kind == "gaussian":
            cached = (np.sqrt(2.0 * np.pi * info), 0.0, np.sqrt(info), 0.0)
        else:
            _, mean, std, ref = _gibbs1d_stats(info, model.beta)
            zref = quad(lambda y: np.exp(-model.beta * (info.value(y) - ref)),
                        mean - 16 * std, mean + 16 * std, limit=200)[0]
            cached = (zref, mean, std, ref)
        model._marginal_cache = cached
    return cached


def marginal_stats(model):
    """(mean, std) of the slow-coordinate marginal."""
    _, mean, std, _ = _marginal_stats_cached(model)
    return mean, std


@dataclass
class MeanForceTable:
    """Uniform grid of the mean force b, free energy F and marginal phi.

    Interpolation of b is a natural cubic spline inside the grid and a linear
    continuation of the edge values and slopes outside it.
    """

    xi: np.ndarray
    b: np.ndarray
    F: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        self._spline = None

    @property
    def m(self):
        return len(self.xi)

    @property
    def h(self):
        return float(self.xi[1] - self.xi[0])

    def _ensure_spline(self):
        if self._spline is None:
            self._spline = CubicSpline(self.xi, self.b, bc_type="natural")
        return self._spline

    def interp_b(self, x):
        """Spline inside [xi_min, xi_max], linear continuation outside."""
        sp = self._ensure_spline()
        x = np.asarray(x, dtype=float)
        lo, hi = self.xi[0], self.xi[-1]
        out = sp(np.clip(x, lo, hi))
        dlo, dhi = float(sp(lo, 1)), float(sp(hi, 1))
        out = np.where(x < lo, self.b[0] + dlo * (x - lo), out)
        out = np.where(x > hi, self.b[-1] + dhi * (x - hi), out)
        return out if out.ndim else float(out)

    def b_prime(self):
        """Centered-difference derivative of b (one-sided at the edges)."""
        return np.gradient(self.b, self.xi)

    def mass(self):
        return float(simpson(self.phi, x=self.xi))

    @property
    def tail_mass(self):
        return max(0.0, 1.0 - self.mass())

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="\n") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write("xi,b,F,phi\n")
            for row in zip(self.xi, self.b, self.F, self.phi):
                fh.write(",".join(fmt(float(v)) for v in row) + "\n")

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
        names = lines[0].split(",")
        cols = {name: [] for name in names}
        for ln in lines[1:]:
            for name, cell in zip(names, ln.split(",")):
                cols[name].append(float(cell))
        return cls(xi=np.array(cols["xi"]), b=np.array(cols["b"]),
                   F=np.array(cols["F"]), phi=np.array(cols["phi"]))


def build_table(model, xi_min=None, xi_max=None, m=241):
    """Tabulate b, F, phi on a uniform grid.

    The default grid spans mean +- 6 marginal standard deviations, which
    carries all but ~1e-9 of the marginal mass for the registered families.
    """
    if m < 16:
        raise ModelError("mean-force grid needs m >= 16")
    if xi_min is None or xi_max is None:
        mu, sigma = marginal_stats(model)
        if abs(mu) <= 1e-9 * sigma:
            mu = 0.0
        lo = mu - 6.0 * sigma
        hi = mu + 6.0 * sigma
        # keep phi representable on the grid: restrict to the window where the
        # log-density stays within 500 of its maximum (fast-decaying tails)
        probe = np.linspace(lo, hi, 2001)
        lp = marginal_logdensity(model, probe)
        keep = lp >= lp.max() - 500.0
        lo2, hi2 = float(probe[keep][0]), float(probe[keep][-1])
        xi_min = max(lo, lo2) if xi_min is None else xi_min
        xi_max = min(hi, hi2) if xi_max is None else xi_max
    if not xi_min < xi_max:
        raise ModelError("xi_min must be below xi_max")
    grid = np.linspace(float(xi_min), float(xi_max), int(m))

    facts = model.analytic_facts
    if model.coordinate_potentials() is not None:
        b = np.asarray(model.v1.d1(grid), dtype=float)
    elif facts is not None and model.n == 2:
        t, w = _hermgauss(_GH_NODES)
        means = facts.conditional_mean(grid)[..., 0]
        ys = means[:, None] + np.sqrt(2.0 * facts.sigma2) * t[None, :]
        pts = np.stack([np.broadcast_to(grid[:, None], ys.shape), ys], axis=-1)
        b = np.asarray(model.d1v(pts), dtype=float) @ w
    elif facts is not None and _bath_affine(model):
        pts = np.concatenate([grid[:, None], facts.conditional_mean(grid)], axis=-1)
        b = np.asarray(model.d1v(pts), dtype=float)
    else:
        raise QuadratureError("no quadrature route for this model")

    logphi = np.asarray(marginal_logdensity(model, grid), dtype=float)
    phi = np.exp(logphi)
    F = -logphi / model.beta
    F = F - F[0]
    return MeanForceTable(xi=grid, b=b, F=F, phi=phi)


def fluctuation(model, table, x):
    """f(x) = b(x1) - d1V(x); closed-form b when the model provides one."""
    x = np.asarray(x, dtype=float)
    x1 = x[..., 0]
    try:
        b = model.mean_force_exact(x1)
    except NotImplementedError:
        b = table.interp_b(x1)
    return b - model.d1v(x)


def kappa_sq(model):
    """Coupling constant kappa^2 = int |cross|^2 psi.

    Exact for the registered families, whose cross-derivative vector is
    constant; state-dependent cross derivatives would need a Monte Carlo
    estimate against equilibrium samples.
    """
    c = model.cross_constant
    if c is None:
        raise ModelError("state-dependent cross derivative: no closed form")
    return float(np.dot(c, c))


def poincare_constant(model):
    """(rho, method): exact Gaussian gap or the convexity lower bound."""
    facts = model.analytic_facts
    if facts is not None:
        return facts.rho, "exact-gaussian"
    pots = model.coordinate_potentials()
    if pots is None:
        raise ModelError("no spectral-gap route for this model")
    inf_curv = np.inf
    for p in pots[1:]:
        law = _build_law1d(p, model.beta, npts=4001)
        inf_curv = min(inf_curv, float(np.min(p.d2(law.grid))))
    if inf_curv <= 0.0:
        raise ModelError("bath potential is not convex on the sampling domain; "
                         "no spectral-gap lower bound available")
    return model.beta * inf_curv, "convexity-lower-bound"


def one_sided_lipschitz(table):
    """L_b = max(0, sup over interior grid points of -b')."""
    bp = table.b_prime()
    return float(max(0.0, np.max(-bp[1:-1])))


def c_alpha(model, table, p=1.0):
    """Integral of the running maximum of |b'| against the marginal.

    alpha(|xi|) is the maximum of |b'| over grid points with |xi_j| <= |xi|,
    accumulated outward from 0; the result is
    int alpha(|xi|)^(2p/(2-p)) phi(xi) dxi over the table grid.  p = 1 gives
    the squared-maximum integrability constant.
    """
    if not 1.0 <= p < 2.0:
        raise ModelError("moment exponent p must lie in [1, 2)")
    absbp = np.abs(table.b_prime())
    order = np.argsort(np.abs(table.xi), kind="stable")
    alpha = np.empty_like(absbp)
    running = 0.0
    for idx in order:
        running = max(running, absbp[idx])
        alpha[idx] = running
    expo = 2.0 * p / (2.0 - p)
    return float(simpson(alpha**expo * table.phi, x=table.xi))


def _conditional_f_sq(model, table, grid):
    """E[f^2 | xi] on the grid, by quadrature or the affine reduction."""
    facts = model.analytic_facts
    if model.cross_constant is not None and not np.any(model.cross_constant):
        # f carries no bath dependence (decoupled models)
        pts = np.concatenate([grid[:, None], np.zeros((len(grid), model.n - 1))], axis=-1)
        return (table.b - np.asarray(model.d1v(pts), dtype=float)) ** 2
    if facts is not None and model.n == 2:
        t, w = _hermgauss(_GH_NODES)
        means = facts.conditional_mean(grid)[..., 0]
        ys = means[:, None] + np.sqrt(2.0 * facts.sigma2) * t[None, :]
        pts = np.stack([np.broadcast_to(grid[:, None], ys.shape), ys], axis=-1)
        f = table.b[:, None] - np.asarray(model.d1v(pts), dtype=float)
        return (f * f) @ w
    if facts is not None and _bath_affine(model):
        c = model.cross_constant
        return np.full(len(grid), float(np.dot(c, c)) * facts.sigma2)
    raise QuadratureError("no quadrature route for conditional second moments")


def f_l2(model, table):
    """int f^2 psi over the table grid."""
    inner = _conditional_f_sq(model, table, table.xi)
    return float(simpson(inner * table.phi, x=table.xi))


def conditional_f_mean(model, table, xi):
    """E[f | xi]; should vanish by construction of the mean force."""
    facts = model.analytic_facts
    xi = float(xi)
    idx = int(np.argmin(np.abs(table.xi - xi)))
    bxi = table.b[idx] if abs(table.xi[idx] - xi) < 1e-12 else float(table.interp_b(xi))
    if model.cross_constant is not None and not np.any(model.cross_constant):
        pt = np.concatenate([[xi], np.zeros(model.n - 1)])
        return bxi - float(model.d1v(pt))
    if facts is not None and model.n == 2:
        mean = float(facts.conditional_mean(xi)[..., 0])
        fn = lambda y: bxi - model.d1v(np.stack([np.full_like(y, xi), y], axis=-1))
        return float(gauss_expect(fn, mean, np.sqrt(facts.sigma2)))
    if facts is not None and _bath_affine(model):
        pt = np.concatenate([[xi], facts.conditional_mean(xi)])
        return bxi - float(model.d1v(pt))
    raise QuadratureError("no quadrature route for conditional means")


def check_f_bound(model, table=None):
    """Fluctuation second moment against the coupling/gap ratio."""
    if table is None:
        table = build_table(model)
    rho, _ = poincare_constant(model)
    return BoundEntry.check("fluctuation-l2", f_l2(model, table), kappa_sq(model) / rho,
                            note="int f^2 psi <= kappa^2/rho")


@dataclass(frozen=True)
class TheoryConstants:
    """Every constant entering the quantitative bounds."""

    kappa_sq: float
    rho: float
    rho_method: str
    l_b: float
    c_alpha: float
    beta: float
    c_alpha_p: float | None = None
    p: float | None = None

    def as_dict(self):
        out = {
            "kappa_sq": self.kappa_sq,
            "rho": self.rho,
            "rho_method": self.rho_method,
            "L_b": self.l_b,
            "c_alpha": self.c_alpha,
            "beta": self.beta,
        }
        if self.c_alpha_p is not None:
            out["c_alpha_p"] = self.c_alpha_p
            out["p"] = self.p
        return out


def theory_constants(model, table=None, p=None):
    """Assemble kappa^2, rho, L_b and C_alpha for a model."""
    if table is None:
        table = build_table(model)
    rho, method = poincare_constant(model)
    cons = dict(
        kappa_sq=kappa_sq(model),
        rho=rho,
        rho_method=method,
        l_b=one_sided_lipschitz(table),
        c_alpha=c_alpha(model, table, 1.0),
        beta=model.beta,
    )
    if p is not None:
        cons["c_alpha_p"] = c_alpha(model, table, p)
        cons["p"] = p
    return TheoryConstants(**cons)
