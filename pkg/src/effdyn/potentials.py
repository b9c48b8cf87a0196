"""Catalog of confining potentials V : R^n -> R with analytic structure.

Four registered families:

``GC(a, k_c, k_b)``
    V = a*x1^2/2 + k_c*x1*x2 + k_b*x2^2/2 on R^2, requires a*k_b > k_c^2.
``TR(V1, k, n)``
    V = V1(x1) + (k/2) * sum_{i>=2} (x_i - x1)^2, bath tracks the slow
    coordinate; V1 is a one-dimensional expression potential.
``DW(k, n)``
    TR with the double well V1(x) = (x^2 - 1)^2.
``DEC(V1, W_2..W_n)``
    Fully decoupled V = V1(x1) + sum W_i(x_i); the zero-coupling reference.

Every family exposes batch evaluators (``x`` shaped ``(..., n)``) for the
energy, the gradient, the first partial ``d1v`` and the cross-derivative
vector ``cross`` = (d2 d1 V, ..., dn d1 V).  GC/TR/DW carry closed-form
Gaussian conditional facts; all four carry a closed-form mean force.
Instances are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expr import ExprPotential1D


class ModelError(ValueError):
    """Invalid model construction or evaluation."""


@dataclass(frozen=True)
class GaussianConditionalFacts:
    """Closed-form facts for bath conditionals that are Gaussian given x1.

    The bath coordinates are conditionally independent with common variance
    ``sigma2`` (independent of x1).  ``kappa_sq`` is the squared L2(psi) norm
    of the cross-derivative vector and ``rho`` the exact spectral-gap
    constant 1/sigma2 of the conditional measures.
    """

    sigma2: float
    kappa_sq: float
    rho: float

    def conditional_mean(self, xi):
        raise NotImplementedError


def _as_points(x, n):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (n,):
        raise ModelError(f"point has dimension {x.shape[-1] if x.ndim else 0}, model has n={n}")
    return x


def _check_confining(pot, label):
    # crude growth test: at least ~quadratic growth at +-1e3
    v0 = float(pot.value(0.0))
    for r in (1e3,):
        lo, hi = float(pot.value(-r)), float(pot.value(r))
        if min(lo, hi) - v0 < 1e-6 * r * r:
            raise ModelError(f"{label} = {pot.text!r} does not grow quadratically at infinity")


def _is_quadratic(pot):
    """Detect V(x) = c2*x^2/2 + c1*x + c0 numerically; return (c2, c1) or None."""
    pts = np.array([-7.3, -1.1, 0.0, 0.7, 3.9])
    d2 = np.asarray(pot.d2(pts), dtype=float)
    d2 = np.broadcast_to(d2, pts.shape)
    if d2.max() - d2.min() > 1e-10 * (1.0 + np.abs(d2).max()):
        return None
    c2 = float(d2[2])
    c1 = float(pot.d1(0.0))
    # confirm d1 is affine with that slope
    d1 = np.asarray(pot.d1(pts), dtype=float)
    if np.max(np.abs(d1 - (c2 * pts + c1))) > 1e-10 * (1.0 + np.abs(d1).max()):
        return None
    return c2, c1


class PotentialModel:
    """Base class; concrete families fill in the evaluators."""

    family = "?"

    def __init__(self, n, beta):
        if n < 2:
            raise ModelError("dimension n must be >= 2")
        if beta <= 0:
            raise ModelError("beta must be positive")
        self.n = int(n)
        self.beta = float(beta)

    # -- evaluators ------------------------------------------------------
    def energy(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def d1v(self, x):
        """First partial dV/dx1."""
        return self.grad(x)[..., 0]

    def cross(self, x):
        """Cross-derivative vector (d2 d1 V, ..., dn d1 V)."""
        raise NotImplementedError

    # -- analytic structure ---------------------------------------------
    #: GaussianConditionalFacts when the bath conditionals are Gaussian
    #: with x1-independent curvature (GC, TR, DW), else None.
    analytic_facts = None

    #: constant cross-derivative vector, or None if state dependent
    cross_constant = None

    def mean_force_exact(self, xi):
        """Closed-form mean force b(xi); available for every family."""
        raise NotImplementedError

    def marginal(self):
        """("gaussian", variance) or ("gibbs1d", pot) with phi ~ exp(-beta*pot)."""
        raise NotImplementedError

    def joint_gaussian(self):
        """(mean, covariance) of the full equilibrium if Gaussian, else None."""
        return None

    def coordinate_potentials(self):
        """Per-coordinate 1-D potentials when V is fully decoupled, else None."""
        return None

    def bath_ou(self):
        """(rates, mean_fn) when every bath drift is linear in x_i given x1.

        ``rates`` has shape (n-1,) and ``mean_fn(x1)`` returns the bath
        fixed point given the slow coordinate, shape (..., n-1).
        """
        return None

    def with_params(self, **kwargs):
        """Rebuild the model with some parameters replaced (sweep support)."""
        raise NotImplementedError

    def label(self):
        return f"{self.family}(n={self.n}, beta={self.beta:g})"


class _GCFacts(GaussianConditionalFacts):
    def __init__(self, k_c, k_b, beta):
        super().__init__(sigma2=1.0 / (beta * k_b), kappa_sq=k_c * k_c, rho=beta * k_b)
        object.__setattr__(self, "_ratio", k_c / k_b)

    def conditional_mean(self, xi):
        xi = np.asarray(xi, dtype=float)
        return (-self._ratio * xi)[..., None]


class QuadraticCoupled(PotentialModel):
    """GC family: quadratic energy with linear slow-bath coupling, n = 2."""

    family = "GC"

    def __init__(self, a, k_c, k_b, beta=1.0):
        super().__init__(2, beta)
        if a <= 0 or k_b <= 0:
            raise ModelError("GC requires a > 0 and k_b > 0")
        if a * k_b <= k_c * k_c:
            raise ModelError("GC not positive definite: requires a*k_b > k_c^2")
        self.a, self.k_c, self.k_b = float(a), float(k_c), float(k_b)
        self.a_eff = self.a - self.k_c**2 / self.k_b
        self.analytic_facts = _GCFacts(self.k_c, self.k_b, self.beta)
        self.cross_constant = np.array([self.k_c])

    def energy(self, x):
        x = _as_points(x, 2)
        x1, x2 = x[..., 0], x[..., 1]
        return 0.5 * self.a * x1 * x1 + self.k_c * x1 * x2 + 0.5 * self.k_b * x2 * x2

    def grad(self, x):
        x = _as_points(x, 2)
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([self.a * x1 + self.k_c * x2, self.k_c * x1 + self.k_b * x2], axis=-1)

    def cross(self, x):
        x = _as_points(x, 2)
        return np.broadcast_to(self.cross_constant, x.shape[:-1] + (1,)).copy()

    def mean_force_exact(self, xi):
        return self.a_eff * np.asarray(xi, dtype=float)

    def marginal(self):
        return ("gaussian", 1.0 / (self.beta * self.a_eff))

    def joint_gaussian(self):
        prec = self.beta * np.array([[self.a, self.k_c], [self.k_c, self.k_b]])
        return np.zeros(2), np.linalg.inv(prec)

    def bath_ou(self):
        ratio = self.k_c / self.k_b

        def mean_fn(x1):
            return (-ratio * np.asarray(x1, dtype=float))[..., None]

        return np.array([self.k_b]), mean_fn

    def with_params(self, **kw):
        args = {"a": self.a, "k_c": self.k_c, "k_b": self.k_b, "beta": self.beta}
        args.update(kw)
        return QuadraticCoupled(**args)

    def label(self):
        return f"GC(a={self.a:g}, k_c={self.k_c:g}, k_b={self.k_b:g}, beta={self.beta:g})"


class _TRFacts(GaussianConditionalFacts):
    def __init__(self, k, n, beta):
        super().__init__(sigma2=1.0 / (beta * k), kappa_sq=(n - 1) * k * k, rho=beta * k)
        object.__setattr__(self, "_nbath", n - 1)

    def conditional_mean(self, xi):
        xi = np.asarray(xi, dtype=float)
        return np.repeat(xi[..., None], self._nbath, axis=-1)


class TrackingBath(PotentialModel):
    """TR family: user confining part plus a bath tracking x1 harmonically."""

    family = "TR"

    def __init__(self, v1, k, n=2, beta=1.0, _check=True):
        super().__init__(n, beta)
        if k <= 0:
            raise ModelError("TR requires coupling k > 0")
        if isinstance(v1, str):
            v1 = ExprPotential1D(v1)
        if _check:
            _check_confining(v1, "V1")
        self.v1 = v1
        self.k = float(k)
        self.analytic_facts = _TRFacts(self.k, self.n, self.beta)
        self.cross_constant = np.full(self.n - 1, -self.k)

    def energy(self, x):
        x = _as_points(x, self.n)
        x1 = x[..., 0]
        z = x[..., 1:] - x1[..., None]
        return self.v1.value(x1) + 0.5 * self.k * np.sum(z * z, axis=-1)

    def grad(self, x):
        x = _as_points(x, self.n)
        x1 = x[..., 0]
        z = x[..., 1:] - x1[..., None]
        g = np.empty_like(x)
        g[..., 0] = self.v1.d1(x1) - self.k * np.sum(z, axis=-1)
        g[..., 1:] = self.k * z
        return g

    def cross(self, x):
        x = _as_points(x, self.n)
        return np.broadcast_to(self.cross_constant, x.shape[:-1] + (self.n - 1,)).copy()

    def mean_force_exact(self, xi):
        return self.v1.d1(xi)

    def marginal(self):
        return ("gibbs1d", self.v1)

    def joint_gaussian(self):
        quad = _is_quadratic(self.v1)
        if quad is None or quad[0] <= 0:
            return None
        c2, c1 = quad
        nb = self.n - 1
        prec = np.full((self.n, self.n), 0.0)
        prec[0, 0] = c2 + nb * self.k
        prec[0, 1:] = prec[1:, 0] = -self.k
        prec[np.arange(1, self.n), np.arange(1, self.n)] = self.k
        mean = np.full(self.n, -c1 / c2)
        return mean, np.linalg.inv(self.beta * prec)

    def bath_ou(self):
        def mean_fn(x1):
            x1 = np.asarray(x1, dtype=float)
            return np.repeat(x1[..., None], self.n - 1, axis=-1)

        return np.full(self.n - 1, self.k), mean_fn

    def with_params(self, **kw):
        args = {"v1": self.v1, "k": self.k, "n": self.n, "beta": self.beta}
        args.update(kw)
        return TrackingBath(**args)

    def label(self):
        return f"TR(V1={self.v1.text!r}, k={self.k:g}, n={self.n}, beta={self.beta:g})"


class DoubleWell(TrackingBath):
    """DW family: tracking bath around the double well (x^2-1)^2."""

    family = "DW"

    def __init__(self, k, n=2, beta=1.0):
        super().__init__(ExprPotential1D("(x^2-1)^2"), k, n, beta, _check=False)

    def with_params(self, **kw):
        args = {"k": self.k, "n": self.n, "beta": self.beta}
        args.update(kw)
        return DoubleWell(**args)

    def label(self):
        return f"DW(k={self.k:g}, n={self.n}, beta={self.beta:g})"


class Decoupled(PotentialModel):
    """DEC family: fully separable energy, the exact-closure reference."""

    family = "DEC"

    def __init__(self, v1, *baths, beta=1.0):
        if not baths:
            raise ModelError("DEC needs at least one bath potential")
        super().__init__(1 + len(baths), beta)
        pots = []
        for i, p in enumerate((v1,) + tuple(baths)):
            if isinstance(p, str):
                p = ExprPotential1D(p)
            _check_confining(p, "V1" if i == 0 else f"W{i + 1}")
            pots.append(p)
        self.pots = tuple(pots)
        self.v1 = self.pots[0]
        self.cross_constant = np.zeros(self.n - 1)

    def energy(self, x):
        x = _as_points(x, self.n)
        return sum(p.value(x[..., i]) for i, p in enumerate(self.pots))

    def grad(self, x):
        x = _as_points(x, self.n)
        g = np.empty_like(x)
        for i, p in enumerate(self.pots):
            g[..., i] = p.d1(x[..., i])
        return g

    def d1v(self, x):
        x = _as_points(x, self.n)
        return self.v1.d1(x[..., 0])

    def cross(self, x):
        x = _as_points(x, self.n)
        return np.zeros(x.shape[:-1] + (self.n - 1,))

    def mean_force_exact(self, xi):
        return self.v1.d1(xi)

    def marginal(self):
        return ("gibbs1d", self.v1)

    def joint_gaussian(self):
        quads = [_is_quadratic(p) for p in self.pots]
        if any(q is None or q[0] <= 0 for q in quads):
            return None
        c2 = np.array([q[0] for q in quads])
        c1 = np.array([q[1] for q in quads])
        return -c1 / c2, np.diag(1.0 / (self.beta * c2))

    def coordinate_potentials(self):
        return self.pots

    def bath_ou(self):
        quads = [_is_quadratic(p) for p in self.pots[1:]]
        if any(q is None or q[0] <= 0 for q in quads):
            return None
        rates = np.array([q[0] for q in quads])
        means = np.array([-q[1] / q[0] for q in quads])

        def mean_fn(x1):
            x1 = np.asarray(x1, dtype=float)
            return np.broadcast_to(means, x1.shape + (self.n - 1,))

        return rates, mean_fn

    def with_params(self, **kw):
        args = {"v1": self.pots[0], "beta": self.beta}
        args.update(kw)
        return Decoupled(args["v1"], *self.pots[1:], beta=args["beta"])

    def label(self):
        parts = ", ".join(p.text for p in self.pots)
        return f"DEC({parts}, beta={self.beta:g})"


def make_model(family, beta=1.0, **params):
    """Build a registered model from its family tag and parameters."""
    family = family.upper()
    if family == "GC":
        return QuadraticCoupled(params["a"], params["k_c"], params["k_b"], beta)
    if family == "TR":
        return TrackingBath(params["v1"], params["k"], int(params.get("n", 2)), beta)
    if family == "DW":
        return DoubleWell(params["k"], int(params.get("n", 2)), beta)
    if family == "DEC":
        baths = params.get("baths")
        if not baths:
            raise ModelError("DEC requires bath potentials")
        return Decoupled(params["v1"], *baths, beta=beta)
    raise ModelError(f"unknown family {family!r}")
