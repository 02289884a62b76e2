"""Liouville-space superoperators and the exponential time stepper.

Density matrices are vectorised row-major, so ``vec(A @ rho @ B)`` equals
``kron(A, B.T) @ vec(rho)``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import expm


def vec(rho):
    return np.ascontiguousarray(rho).reshape(-1)


def unvec(v, dim=None):
    v = np.asarray(v)
    if dim is None:
        dim = math.isqrt(v.shape[-1])
    return v.reshape(v.shape[:-1] + (dim, dim))


def spre(a):
    return np.kron(a, np.eye(a.shape[0]))


def spost(b):
    return np.kron(np.eye(b.shape[0]), b.T)


def hamiltonian_super(h, hbar):
    """Generator of ``-i/hbar [H, rho]``."""
    return (-1j / hbar) * (spre(h) - spost(h))


def dissipator(c, rate):
    cdc = c.conj().T @ c
    return rate * (np.kron(c, c.conj()) - 0.5 * spre(cdc) - 0.5 * spost(cdc))


def trace_row(dim):
    """Row vector ``t`` with ``t @ vec(rho) == Tr(rho)``."""
    return vec(np.eye(dim)).astype(complex)


def liouvillian_parts(system):
    """Split the generator of ``system`` into ``L0 + Omega(t) * L1``."""
    l0 = hamiltonian_super(system.static, system.hbar)
    for c, rate in system.collapse:
        l0 = l0 + dissipator(c, rate)
    l1 = hamiltonian_super(system.coupling, system.hbar)
    return l0, l1


def schrodinger_parts(system):
    """Same split for the closed-system state vector, ``-i H / hbar``."""
    return (-1j / system.hbar) * system.static, (-1j / system.hbar) * system.coupling


def steady_state(l0):
    """Trace-one null vector of a constant Liouvillian."""
    dim = math.isqrt(l0.shape[0])
    tr = trace_row(dim)
    # replace one equation by the trace condition
    a = l0.copy()
    b = np.zeros(l0.shape[0], dtype=complex)
    a[0, :] = tr
    b[0] = 1.0
    rho = np.linalg.solve(a, b)
    r = unvec(rho, dim)
    return vec(0.5 * (r + r.conj().T))


_GL_OFFSET = math.sqrt(3.0) / 6.0


class MagnusStepper:
    """Fourth-order Magnus propagator for ``A + f(t) B``.

    One step of length ``h`` starting at ``t`` uses the two Gauss-Legendre
    nodes; because the generator is affine in ``f`` the commutator term
    reduces to ``(f2 - f1) [B, A]``.
    """

    def __init__(self, a, b, envelope):
        self.a = np.asarray(a)
        self.b = np.asarray(b)
        self.envelope = envelope
        self.comm = self.b @ self.a - self.a @ self.b

    def generators(self, t0, h):
        t0 = np.atleast_1d(np.asarray(t0, dtype=float))
        h = np.broadcast_to(np.asarray(h, dtype=float), t0.shape)
        f1 = np.asarray(self.envelope(t0 + (0.5 - _GL_OFFSET) * h), dtype=float)
        f2 = np.asarray(self.envelope(t0 + (0.5 + _GL_OFFSET) * h), dtype=float)
        f1 = np.broadcast_to(f1, t0.shape)
        f2 = np.broadcast_to(f2, t0.shape)
        hh = h[:, None, None]
        om = hh * self.a[None] + (0.5 * hh * (f1 + f2)[:, None, None]) * self.b[None]
        om = om + (math.sqrt(3.0) / 12.0) * (hh**2) * (f2 - f1)[:, None, None] * self.comm[None]
        return om

    def propagators(self, t0, h, chunk=256):
        """Step propagators for every start time in ``t0`` (stacked)."""
        t0 = np.atleast_1d(np.asarray(t0, dtype=float))
        h = np.broadcast_to(np.asarray(h, dtype=float), t0.shape)
        out = np.empty((t0.size,) + self.a.shape, dtype=complex)
        for i in range(0, t0.size, chunk):
            out[i:i + chunk] = expm(self.generators(t0[i:i + chunk], h[i:i + chunk]))
        return out

    def constant(self, h):
        """Propagator of the drive-free generator over ``h``."""
        return expm(self.a * h)
