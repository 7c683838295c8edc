"""Finite-dimensional Gelfand triple V ⊂ H ≅ H* ⊂ V*.

States are coordinate vectors in a fixed basis e_1..e_n of H_n.  The H inner
product is ``u @ gram @ v``.  Elements of V* are stored by their action on
the basis, ``w[i] = <w, e_i>``, so the pairing with v is ``w @ v`` and the
embedding of u ∈ H is ``gram @ u``.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConfigurationError

__all__ = [
    "VNormSpec",
    "GalerkinSpace",
    "DualVector",
    "h_inner",
    "dual_pairing",
    "project",
]


@dataclass(frozen=True)
class VNormSpec:
    """Selects the V-norm evaluator.

    ``kind="h"``: V = H with the H-norm (scalar and ODE examples).
    ``kind="grad"``: discrete periodic W^{1,alpha} norm
    ``(h Σ|D⁺v|^α + h Σ|v|^α)^{1/α}`` on a uniform grid of spacing ``spacing``.
    """

    kind: str = "h"
    spacing: float = 1.0

    def __post_init__(self):
        if self.kind not in ("h", "grad"):
            raise ConfigurationError(f"unknown V-norm kind {self.kind!r}")
        if not self.spacing > 0:
            raise ConfigurationError("V-norm grid spacing must be positive")


@dataclass(frozen=True)
class DualVector:
    """Element of V* given by its pairings with the basis vectors."""

    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))

    def __add__(self, other):
        return DualVector(self.coords + other.coords)

    def __sub__(self, other):
        return DualVector(self.coords - other.coords)

    def __mul__(self, scalar):
        return DualVector(self.coords * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class GalerkinSpace:
    dim: int
    h_gram: np.ndarray = None
    v_norm_spec: VNormSpec = field(default_factory=VNormSpec)
    alpha: float = 2.0

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ConfigurationError("dim must be a positive integer")
        if not self.alpha > 1:
            raise ConfigurationError("V-norm exponent alpha must exceed 1")
        gram = np.eye(self.dim) if self.h_gram is None else np.array(self.h_gram, dtype=float)
        if gram.shape != (self.dim, self.dim):
            raise ConfigurationError(f"h_gram must be {self.dim}x{self.dim}, got {gram.shape}")
        if not np.allclose(gram, gram.T, rtol=0, atol=1e-14 * max(1.0, np.abs(gram).max())):
            raise ConfigurationError("h_gram must be symmetric")
        eigmin = np.linalg.eigvalsh(gram).min()
        if not eigmin > 0:
            raise ConfigurationError(f"h_gram must be positive definite (min eigenvalue {eigmin:g})")
        gram.setflags(write=False)
        object.__setattr__(self, "h_gram", gram)
        diag = np.diag(gram).copy()
        is_diag = np.count_nonzero(gram - np.diag(diag)) == 0
        object.__setattr__(self, "_diag", diag if is_diag else None)
        object.__setattr__(self, "_cho", None if is_diag else scipy.linalg.cho_factor(gram))

    @classmethod
    def periodic_grid(cls, n, length=1.0, alpha=2.0):
        """Nodal values on a uniform periodic grid; H = discrete L², V = discrete W^{1,α}."""
        h = length / n
        return cls(n, h * np.eye(n), VNormSpec("grad", h), alpha)

    def _check(self, v, name="vector"):
        v = np.asarray(v, dtype=float)
        if v.shape[-1:] != (self.dim,):
            raise ConfigurationError(f"{name} has trailing dimension {v.shape[-1:]}, expected ({self.dim},)")
        return v

    def h_inner(self, u, v):
        u = self._check(u, "u")
        v = self._check(v, "v")
        if self._diag is not None:
            return np.sum(u * self._diag * v, axis=-1)
        return np.einsum("...i,ij,...j->...", u, self.h_gram, v)

    def h_norm(self, v):
        return np.sqrt(np.maximum(self.h_inner(v, v), 0.0))

    def v_norm(self, v):
        v = self._check(v)
        spec = self.v_norm_spec
        if spec.kind == "h":
            return self.h_norm(v)
        a = self.alpha
        grad = (np.roll(v, -1, axis=-1) - v) / spec.spacing
        total = spec.spacing * (np.sum(np.abs(grad) ** a, axis=-1) + np.sum(np.abs(v) ** a, axis=-1))
        return total ** (1.0 / a)

    def embed(self, u):
        """Image of u ∈ H in V* (the Riesz map)."""
        u = self._check(u, "u")
        if self._diag is not None:
            return DualVector(u * self._diag)
        return DualVector(u @ self.h_gram)

    def riesz(self, w):
        """H-representative of a dual vector: solves gram @ u = w (batched over leading axes)."""
        coords = w.coords if isinstance(w, DualVector) else np.asarray(w, dtype=float)
        coords = self._check(coords, "w")
        if self._diag is not None:
            return coords / self._diag
        flat = coords.reshape(-1, self.dim).T
        return scipy.linalg.cho_solve(self._cho, flat).T.reshape(coords.shape)

    def dual_pairing(self, w, v):
        coords = w.coords if isinstance(w, DualVector) else np.asarray(w, dtype=float)
        coords = self._check(coords, "w")
        v = self._check(v, "v")
        return np.sum(coords * v, axis=-1)

    def project(self, w, m):
        """Galerkin projection onto span{e_1..e_m}.

        Returns coordinates p (zero beyond index m) such that
        ``<embed(p), v> == <w, v>`` for every v in the span.
        """
        if int(m) != m or not 1 <= m <= self.dim:
            raise ConfigurationError(f"projection order m={m} outside [1, {self.dim}]")
        coords = w.coords if isinstance(w, DualVector) else np.asarray(w, dtype=float)
        coords = self._check(coords, "w")
        out = np.zeros_like(coords)
        out[..., :m] = np.linalg.solve(self.h_gram[:m, :m], coords[..., :m].T).T
        return out

    def basis_probes(self):
        """Basis vectors scaled to unit V-norm; the fixed probe set for dual norms."""
        eye = np.eye(self.dim)
        return eye / self.v_norm(eye)[:, None]

    def dual_norm(self, w):
        """Lower bound of ||w||_{V*} from the basis probe set: max_i |<w, e_i>| / ||e_i||_V."""
        coords = w.coords if isinstance(w, DualVector) else np.asarray(w, dtype=float)
        coords = self._check(coords, "w")
        scale = 1.0 / self.v_norm(np.eye(self.dim))
        return np.max(np.abs(coords) * scale, axis=-1)

    def embedding_constant(self, samples):
        """Measured c with ||v||_V >= c ||v||_H over the given samples and the basis."""
        samples = np.vstack([self._check(samples), np.eye(self.dim)])
        hn = self.h_norm(samples)
        keep = hn > 0
        return float(np.min(self.v_norm(samples[keep]) / hn[keep]))


def h_inner(space, u, v):
    return space.h_inner(u, v)


def dual_pairing(space, w, v):
    return space.dual_pairing(w, v)


def project(space, w, m):
    return space.project(w, m)
