"""Drift operators A(t, v) and jump coefficients f(t, v, z).

Every drift carries the constants of its standing hypotheses
(alpha, beta, theta, C, F, rho) so that they can be audited
(see :mod:`ldplab.audits`) and fed into the a priori bounds of the
skeleton solver.

Drifts work on batches: ``v`` may have shape ``(..., dim)``.
"""
import numpy as np
import scipy.integrate

from .errors import ConfigurationError, NumericalError
from .spaces import DualVector, GalerkinSpace

__all__ = [
    "DriftOperator",
    "ScalarLinearDrift",
    "PLaplaceDrift",
    "BurgersDrift",
    "CallableDrift",
    "NoiseCoefficient",
    "AffineNoise",
    "SineNoise",
]


def _as_function(F):
    if callable(F):
        return F
    value = float(F)
    if value < 0:
        raise ConfigurationError("F must be nonnegative")
    return lambda t: value + 0.0 * np.asarray(t, dtype=float)


class DriftOperator:
    """Base class.  Subclasses implement ``_dual(t, v)`` (batched V* coordinates)."""

    name = "drift"
    linear_matrix = None  # H-representation of a linear, time-independent drift

    def __init__(self, space, *, alpha, beta, theta, c_growth, F=0.0, rho=None):
        if not isinstance(space, GalerkinSpace):
            raise ConfigurationError("space must be a GalerkinSpace")
        if not alpha > 1:
            raise ConfigurationError("alpha must exceed 1")
        if beta < 0:
            raise ConfigurationError("beta must be nonnegative")
        if not theta > 0:
            raise ConfigurationError("theta must be positive")
        if not c_growth > 0:
            raise ConfigurationError("growth constant C must be positive")
        self.space = space
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.theta = float(theta)
        self.c_growth = float(c_growth)
        self.F = _as_function(F)
        self._rho = rho

    @property
    def params(self):
        return {"alpha": self.alpha, "beta": self.beta, "theta": self.theta, "C": self.c_growth}

    def rho(self, v):
        v = np.asarray(v, dtype=float)
        if self._rho is None:
            return np.zeros(v.shape[:-1])
        return self._rho(v)

    def integral_F(self, a, b):
        if b <= a:
            return 0.0
        value, _ = scipy.integrate.quad(lambda s: float(self.F(s)), a, b, limit=200)
        return value

    def _dual(self, t, v):
        raise NotImplementedError

    def apply(self, t, v):
        """A(t, v) as an element of V*."""
        v = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(v)) or not np.isfinite(t):
            raise ConfigurationError("drift_apply requires finite t and v")
        return DualVector(self._dual(t, v))

    def vector_field(self, t, v):
        """H-representative of A(t, v), batched."""
        return self.space.riesz(self._dual(t, np.asarray(v, dtype=float)))

    def jacobian(self, t, v):
        """Derivative of ``vector_field`` in v, shape (..., dim, dim).  Forward differences by default."""
        v = np.asarray(v, dtype=float)
        base = self.vector_field(t, v)
        d = self.space.dim
        jac = np.empty(v.shape + (d,))
        for k in range(d):
            step = 1e-7 * np.maximum(1.0, np.abs(v[..., k]))
            vp = v.copy()
            vp[..., k] += step
            jac[..., :, k] = (self.vector_field(t, vp) - base) / step[..., None]
        return jac

    def implicit_solve(self, t, h, rhs, *, tol=1e-12, max_iter=50):
        """Solve ``z - h * vector_field(t, z) = rhs`` (backward Euler stage), batched over rows.

        ``h`` is a scalar or an array matching the leading shape of ``rhs``.
        Nonlinear drifts use damped Newton started from ``rhs``.
        """
        rhs = np.asarray(rhs, dtype=float)
        h = np.asarray(h, dtype=float)
        d = self.space.dim
        if self.linear_matrix is not None:
            L = self.linear_matrix
            if d == 1:
                return rhs / (1.0 - h[..., None] * L[0, 0]) if h.ndim else rhs / (1.0 - h * L[0, 0])
            if h.ndim == 0:
                return np.linalg.solve(np.eye(d) - h * L, rhs.reshape(-1, d).T).T.reshape(rhs.shape)
            mats = np.eye(d) - h[..., None, None] * L
            return np.linalg.solve(mats, rhs[..., None])[..., 0]
        shape = rhs.shape
        b = rhs.reshape(-1, d)
        hv = np.broadcast_to(h, shape[:-1]).reshape(-1)
        tv = np.broadcast_to(np.asarray(t, dtype=float), shape[:-1]).reshape(-1)
        tt = tv if np.ndim(t) else t
        z = b.copy()
        scale = 1.0 + np.linalg.norm(b, axis=-1)
        res = z - hv[:, None] * self.vector_field(tt, z) - b
        rnorm = np.linalg.norm(res, axis=-1)
        for _ in range(max_iter):
            active = rnorm > tol * scale
            if not np.any(active):
                return z.reshape(shape)
            mats = np.eye(d) - hv[:, None, None] * self.jacobian(tt, z)
            delta = np.linalg.solve(mats, res[..., None])[..., 0]
            step = active.astype(float)
            for _ in range(40):
                trial = z - step[:, None] * delta
                tres = trial - hv[:, None] * self.vector_field(tt, trial) - b
                tnorm = np.linalg.norm(tres, axis=-1)
                worse = active & (tnorm >= rnorm) & (step > 1e-10)
                if not np.any(worse):
                    break
                step = np.where(worse, 0.5 * step, step)
            z, res, rnorm = trial, tres, tnorm
        if np.any(rnorm > 1e3 * tol * scale):
            raise NumericalError(
                f"{self.name}: Newton did not converge in implicit step at t={float(np.max(t)):.6g}",
                {"residual": float(np.max(rnorm)), "h": float(np.max(h)), "iterations": max_iter},
            )
        return z.reshape(shape)


class ScalarLinearDrift(DriftOperator):
    """A(t, v) = -a v on V = H (any dimension); closed-form oracle problems."""

    name = "scalar_linear"

    def __init__(self, a=1.0, dim=1, *, theta=None, F=1.0, c_growth=None, space=None):
        space = space or GalerkinSpace(dim)
        if space.v_norm_spec.kind != "h" or space.alpha != 2:
            raise ConfigurationError("scalar_linear requires V = H with alpha = 2")
        self.a = float(a)
        theta = 2.0 * self.a if theta is None else theta
        c_growth = max(self.a ** 2, 1e-12) if c_growth is None else c_growth
        super().__init__(space, alpha=2.0, beta=0.0, theta=theta, c_growth=c_growth, F=F)
        self.linear_matrix = -self.a * np.eye(space.dim)

    def _dual(self, t, v):
        return self.space.embed(-self.a * v).coords

    def vector_field(self, t, v):
        return -self.a * np.asarray(v, dtype=float)

    def jacobian(self, t, v):
        v = np.asarray(v)
        return np.broadcast_to(self.linear_matrix, v.shape + (self.space.dim,)).copy()


class PLaplaceDrift(DriftOperator):
    """Periodic 1D p-Laplacian with absorption: ∂x(|∂x u|^{p-2}∂x u) - κ|u|^{p-2}u.

    Nodal values on ``n`` points of a circle of given length; V-norm is the
    discrete W^{1,p} norm, so alpha = p.  With κ = 0 the operator is monotone
    but coercive only for p = 2.
    """

    name = "p_laplace"

    def __init__(self, n=32, p=2.0, *, length=1.0, kappa=1.0, F=1.0, theta=None, c_growth=None):
        if n < 3:
            raise ConfigurationError("p_laplace needs at least 3 grid points")
        if not p > 1:
            raise ConfigurationError("p must exceed 1")
        if kappa < 0:
            raise ConfigurationError("absorption kappa must be nonnegative")
        space = GalerkinSpace.periodic_grid(n, length, alpha=p)
        self.p = float(p)
        self.kappa = float(kappa)
        self.h = length / n
        if theta is None:
            theta = min(1.0, kappa) if kappa > 0 else 1.0
        if c_growth is None:
            c_growth = max(1.0, kappa) ** (p / (p - 1.0))
        super().__init__(space, alpha=p, beta=0.0, theta=theta, c_growth=c_growth, F=F)
        if p == 2.0:
            lap = (np.roll(np.eye(n), 1, axis=1) + np.roll(np.eye(n), -1, axis=1) - 2 * np.eye(n)) / self.h ** 2
            self.linear_matrix = lap - kappa * np.eye(n)

    def _phi(self, s):
        return np.abs(s) ** (self.p - 2.0) * s if self.p != 2.0 else s

    def _field(self, v):
        flux = self._phi((np.roll(v, -1, axis=-1) - v) / self.h)
        return (flux - np.roll(flux, 1, axis=-1)) / self.h - self.kappa * self._phi(v)

    def _dual(self, t, v):
        return self.h * self._field(v)

    def vector_field(self, t, v):
        return self._field(np.asarray(v, dtype=float))

    def jacobian(self, t, v):
        v = np.asarray(v, dtype=float)
        n = self.space.dim
        p = self.p
        grad = (np.roll(v, -1, axis=-1) - v) / self.h
        dphi = (p - 1.0) * np.maximum(np.abs(grad), 1e-300) ** (p - 2.0) if p != 2.0 else np.ones_like(grad)
        dphi_prev = np.roll(dphi, 1, axis=-1)
        absorb = self.kappa * ((p - 1.0) * np.maximum(np.abs(v), 1e-300) ** (p - 2.0) if p != 2.0 else np.ones_like(v))
        jac = np.zeros(v.shape + (n,))
        idx = np.arange(n)
        jac[..., idx, idx] = -(dphi + dphi_prev) / self.h ** 2 - absorb
        jac[..., idx, (idx + 1) % n] += dphi / self.h ** 2
        jac[..., idx, (idx - 1) % n] += dphi_prev / self.h ** 2
        return jac


class BurgersDrift(DriftOperator):
    """Periodic 1D viscous Burgers: ν ∂²u - u ∂u, energy-conserving skew form.

    The convection term is (1/3)(u D_c u + D_c(u²)) with centered D_c, which
    is orthogonal to u in the discrete L² pairing.  The local monotonicity
    function is the rigorous discrete bound
    ``rho(v) = (2/3)||D_c v||_inf + ||v||_inf² / (18 ν)`` and C covers both the
    growth and the rho bound with beta = 2.
    """

    name = "burgers"

    def __init__(self, n=32, nu=0.1, *, length=1.0, F=1.0, theta=None, c_growth=None):
        if n < 3:
            raise ConfigurationError("burgers needs at least 3 grid points")
        if not nu > 0:
            raise ConfigurationError("viscosity must be positive")
        space = GalerkinSpace.periodic_grid(n, length, alpha=2.0)
        self.nu = float(nu)
        self.h = length / n
        h = self.h
        theta = self.nu if theta is None else theta
        F = max(float(F), self.nu) if not callable(F) else F
        if c_growth is None:
            c_growth = max(2.0 * nu ** 2, 8.0 / (9.0 * h), h ** -1.5 / 3.0 + 1.0 / (18.0 * nu * h))
        super().__init__(space, alpha=2.0, beta=2.0, theta=theta, c_growth=c_growth, F=F, rho=self._rho_bound)

    def _rho_bound(self, v):
        dc = (np.roll(v, -1, axis=-1) - np.roll(v, 1, axis=-1)) / (2 * self.h)
        return (2.0 / 3.0) * np.max(np.abs(dc), axis=-1) + np.max(np.abs(v), axis=-1) ** 2 / (18.0 * self.nu)

    def _field(self, v):
        h = self.h
        vp = np.roll(v, -1, axis=-1)
        vm = np.roll(v, 1, axis=-1)
        lap = (vp - 2 * v + vm) / h ** 2
        conv = (v * (vp - vm) + (vp ** 2 - vm ** 2)) / (6 * h)
        return self.nu * lap - conv

    def _dual(self, t, v):
        return self.h * self._field(v)

    def vector_field(self, t, v):
        return self._field(np.asarray(v, dtype=float))

    def jacobian(self, t, v):
        v = np.asarray(v, dtype=float)
        n = self.space.dim
        h = self.h
        vp = np.roll(v, -1, axis=-1)
        vm = np.roll(v, 1, axis=-1)
        idx = np.arange(n)
        jac = np.zeros(v.shape + (n,))
        jac[..., idx, idx] = -2 * self.nu / h ** 2 - (vp - vm) / (6 * h)
        jac[..., idx, (idx + 1) % n] += self.nu / h ** 2 - (v + 2 * vp) / (6 * h)
        jac[..., idx, (idx - 1) % n] += self.nu / h ** 2 + (v + 2 * vm) / (6 * h)
        return jac


class CallableDrift(DriftOperator):
    """User-supplied drift given by a function returning V* coordinates."""

    name = "callable"

    def __init__(self, space, dual_fn, **params):
        self._fn = dual_fn
        super().__init__(space, **params)

    def _dual(self, t, v):
        return np.asarray(self._fn(t, v), dtype=float)


class NoiseCoefficient:
    """Jump coefficient f(t, v, z_j) on the mark atoms, with its bounds L_f and G_f.

    ``fn(t, v, j)`` must accept batched ``v`` of shape (..., dim); ``l_f`` and
    ``g_f`` map (t, j) to nonnegative reals.
    """

    name = "noise"

    def __init__(self, space, n_marks, fn, l_f, g_f):
        self.space = space
        self.n_marks = int(n_marks)
        self._fn = fn
        self._l_f = l_f
        self._g_f = g_f

    def eval(self, t, v, j):
        return self._fn(t, np.asarray(v, dtype=float), j)

    def l_f(self, t, j):
        return float(self._l_f(t, j))

    def g_f(self, t, j):
        return float(self._g_f(t, j))

    def l_f_table(self, times):
        return np.array([[self.l_f(t, j) for j in range(self.n_marks)] for t in np.atleast_1d(times)])

    def g_f_table(self, times):
        return np.array([[self.g_f(t, j) for j in range(self.n_marks)] for t in np.atleast_1d(times)])

    def mix(self, t, v, weights):
        """Σ_j weights[..., j] f(t, v, z_j); weights broadcast against the leading axes of v."""
        v = np.asarray(v, dtype=float)
        weights = np.asarray(weights, dtype=float)
        out = np.zeros(np.broadcast_shapes(v.shape, weights.shape[:-1] + (1,)))
        for j in range(self.n_marks):
            w = weights[..., j]
            if np.all(w == 0):
                continue
            out = out + w[..., None] * self.eval(t, v, j)
        return out

    @property
    def state_independent(self):
        return False


class AffineNoise(NoiseCoefficient):
    """f(t, v, z_j) = σ_j (b + κ v) with bounded σ; L_f = |σ_j| max(||b||_H, |κ|), G_f = |σ_j||κ|."""

    name = "affine"

    def __init__(self, space, sigma, kappa=0.0, base=1.0):
        self.sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        self.kappa = float(kappa)
        self.base = np.broadcast_to(np.asarray(base, dtype=float), (space.dim,)).copy()
        lf = np.abs(self.sigma) * max(float(space.h_norm(self.base)), abs(self.kappa))
        gf = np.abs(self.sigma) * abs(self.kappa)
        super().__init__(
            space,
            len(self.sigma),
            lambda t, v, j: self.sigma[j] * (self.base + self.kappa * v),
            lambda t, j: lf[j],
            lambda t, j: gf[j],
        )
        self._lf = lf
        self._gf = gf

    def mix(self, t, v, weights):
        v = np.asarray(v, dtype=float)
        coef = np.asarray(weights, dtype=float) @ self.sigma
        return np.asarray(coef)[..., None] * (self.base + self.kappa * v)

    def l_f_table(self, times):
        return np.tile(self._lf, (len(np.atleast_1d(times)), 1))

    def g_f_table(self, times):
        return np.tile(self._gf, (len(np.atleast_1d(times)), 1))

    @property
    def state_independent(self):
        return self.kappa == 0.0


class SineNoise(NoiseCoefficient):
    """f(t, v, z_j) = σ_j sin(ω v) componentwise, with user-declared bounds.

    Bounded, so the growth bound holds with the honest L_f, but the true Lipschitz constant
    is |σ_j| ω; declaring a smaller ``declared_lipschitz`` yields a config that
    fails the noise Lipschitz audit on purpose.
    """

    name = "sine"

    def __init__(self, space, sigma, omega=1.0, declared_lipschitz=None):
        self.sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        self.omega = float(omega)
        ones = float(space.h_norm(np.ones(space.dim)))
        lf = np.abs(self.sigma) * ones
        if declared_lipschitz is None:
            gf = np.abs(self.sigma) * abs(self.omega)
        else:
            gf = np.abs(self.sigma) * float(declared_lipschitz)
        super().__init__(
            space,
            len(self.sigma),
            lambda t, v, j: self.sigma[j] * np.sin(self.omega * v),
            lambda t, j: lf[j],
            lambda t, j: gf[j],
        )
