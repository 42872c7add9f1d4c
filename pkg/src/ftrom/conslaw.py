"""Space-time viscous Burgers flux and its pullback to a reference domain.

Coordinates are ``(x, t)``.  Writing ``dq/dt + d/dx(q^2/2 - nu q_x) = 0`` as a
divergence in space-time gives the flux ``f = (q^2/2 - nu q_x, q)``, split into
an inviscid part ``(q^2/2, q)`` and a viscous part ``(nu q_x, 0)``.

Flux values are ``(m, 2)`` arrays so the reference-domain transformation stays
independent of the number of conserved quantities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ftrom.errors import InvalidArgumentError, SingularMappingError
from ftrom.mesh import MappingJacobian

SINGULAR_TOL = 1e-14


@dataclass(frozen=True)
class BurgersConfig:
    nu: float = 1e-3
    mu: float = 1.0

    def __post_init__(self):
        if not self.nu > 0:
            raise InvalidArgumentError(f"viscosity must be positive, got {self.nu}")


def inviscid_flux(q: float) -> np.ndarray:
    return np.array([[0.5 * q * q, q]])


def viscous_flux(q: float, grad_q, cfg: BurgersConfig) -> np.ndarray:
    return np.array([[cfg.nu * grad_q[0], 0.0]])


def burgers_flux(q: float, grad_q, cfg: BurgersConfig) -> np.ndarray:
    """Physical flux ``f = f_inviscid - f_viscous`` as a ``(1, 2)`` array."""
    return inviscid_flux(q) - viscous_flux(q, grad_q, cfg)


def burgers_source(q: float, grad_q, cfg: BurgersConfig) -> np.ndarray:
    return np.zeros(1)


def _checked_inverse(J: MappingJacobian) -> np.ndarray:
    G = np.asarray(J.G, dtype=float)
    g = np.asarray(J.g, dtype=float)
    scale = np.maximum(np.max(np.abs(G), axis=(-2, -1)) ** 2, np.finfo(float).tiny)
    if np.any(np.abs(g) < SINGULAR_TOL * scale):
        raise SingularMappingError(f"mapping Jacobian is singular (min |det| = {np.min(np.abs(g)):.3e})")
    if np.any(g < 0):
        raise SingularMappingError(f"mapping Jacobian is inverted (min det = {np.min(g):.3e})")
    if G.ndim == 2 and np.array_equal(G, np.eye(2)):
        return np.eye(2)
    # explicit 2x2 inverse keeps identity blocks exact inside batches
    inv = np.empty_like(G)
    inv[..., 0, 0] = G[..., 1, 1] / g
    inv[..., 1, 1] = G[..., 0, 0] / g
    inv[..., 0, 1] = -G[..., 0, 1] / g
    inv[..., 1, 0] = -G[..., 1, 0] / g
    return inv


def transform_flux(f_phys, J: MappingJacobian) -> np.ndarray:
    """Reference-domain flux ``F = g f G^{-T}``.

    ``f_phys`` has shape ``(..., m, 2)``; ``J.G`` may carry matching leading
    batch dimensions.
    """
    Ginv = _checked_inverse(J)
    g = np.asarray(J.g, dtype=float)[..., None, None]
    return g * (np.asarray(f_phys, dtype=float) @ np.swapaxes(Ginv, -1, -2))


def transform_source(s_phys, J: MappingJacobian) -> np.ndarray:
    """Reference-domain source ``S = g s``."""
    _checked_inverse(J)
    return np.asarray(J.g, dtype=float)[..., None] * np.asarray(s_phys, dtype=float)


def pullback_gradient(grad_ref, J: MappingJacobian) -> np.ndarray:
    """Physical gradient from a reference gradient: ``grad q = grad_0 Q . G^{-1}``.

    ``grad_ref`` is a row (or batch of rows) of shape ``(..., 2)``.
    """
    Ginv = _checked_inverse(J)
    return np.einsum("...k,...kl->...l", np.asarray(grad_ref, dtype=float), Ginv)


def initial_state(x, cfg: BurgersConfig):
    """Step initial data: ``mu`` left of ``x = -0.5``, zero elsewhere."""
    x = np.asarray(x, dtype=float)
    out = np.where(x < -0.5, cfg.mu, 0.0)
    return float(out) if out.ndim == 0 else out


def initial_average(a, b, cfg: BurgersConfig) -> np.ndarray:
    """Exact mean of the step initial data over the intervals ``[a, b]``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(b <= a):
        raise InvalidArgumentError("intervals must have positive length")
    return cfg.mu * np.clip(-0.5 - a, 0.0, b - a) / (b - a)


def inverse_transform_flux(F_ref, J: MappingJacobian) -> np.ndarray:
    """Recover the physical flux from ``F = g f G^{-T}``: ``f = F G^T / g``."""
    _checked_inverse(J)
    g = np.asarray(J.g, dtype=float)[..., None, None]
    return (np.asarray(F_ref, dtype=float) @ np.swapaxes(np.asarray(J.G, dtype=float), -1, -2)) / g
