"""Instantaneous dressed states, branch tracking and allowed transitions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import AmbiguousTracking
from .model import XV, XX, G, build_hamiltonian, sigma

HERMITIAN_TOL = 1e-9
WEIGHT_FLOOR = 1e-12


@dataclass
class DressedFrame:
    """Eigen-decomposition of one Hamiltonian.

    ``mixing[i]`` holds the bare-basis amplitudes of dressed state ``i``, so
    ``H = mixing.T @ diag(energies) @ mixing.conj()``.  ``order[i]`` is the
    index of branch ``i`` in the ascending eigenvalue list of this frame.
    """

    time: float
    energies: np.ndarray
    mixing: np.ndarray
    order: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.order is None:
            self.order = np.arange(self.energies.size)

    def reconstruct(self):
        return self.mixing.T @ np.diag(self.energies) @ self.mixing.conj()

    def state(self, i):
        return self.mixing[i]


def _clusters(energies, tol):
    groups = [[0]]
    for i in range(1, energies.size):
        if energies[i] - energies[groups[-1][-1]] <= tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def _bare_aligned(vecs):
    """Rotate a degenerate block of column vectors onto the canonical basis.

    Picks the bare states with the largest weight in the subspace and
    Gram-Schmidt orthonormalizes their projections in that order.
    """
    proj = vecs @ vecs.conj().T
    weight = np.real(np.diag(proj))
    picks = np.argsort(-weight, kind="stable")[: vecs.shape[1]]
    out = []
    for j in sorted(picks, key=lambda j: (-weight[j], j)):
        v = proj[:, j].copy()
        for u in out:
            v -= (u.conj() @ v) * u
        v /= np.linalg.norm(v)
        out.append(v)
    # keep the block in canonical order of the chosen bare states
    order = np.argsort([int(np.argmax(np.abs(v))) for v in out])
    return np.column_stack([out[k] for k in order])


def _fix_phase(v):
    k = int(np.argmax(np.round(np.abs(v), 12)))  # first of near-equal maxima
    ph = v[k] / abs(v[k])
    return v / ph


def dress(h, time=0.0, degeneracy_tol=1e-9):
    """Diagonalize a Hermitian Hamiltonian into a :class:`DressedFrame`.

    Energies are ascending.  Degenerate eigenspaces are resolved into
    bare-state-aligned vectors and every vector gets its largest component
    real and positive.  Raises ``ValueError`` for non-Hermitian input.
    """
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("Hamiltonian must be square")
    if np.max(np.abs(h - h.conj().T)) > HERMITIAN_TOL:
        raise ValueError("Hamiltonian is not Hermitian")
    h = 0.5 * (h + h.conj().T)
    w, v = np.linalg.eigh(h)
    scale = max(1.0, float(np.max(np.abs(w))))
    for grp in _clusters(w, degeneracy_tol * scale):
        if len(grp) > 1:
            block = _bare_aligned(v[:, grp])
            # energies must follow the realigned vectors
            rq = np.real(np.einsum("ij,ik,kj->j", block.conj(), h, block))
            order = np.argsort(rq, kind="stable")
            v[:, grp] = block[:, order]
            w[grp] = rq[order]
    v = np.column_stack([_fix_phase(v[:, i]) for i in range(v.shape[1])])
    return DressedFrame(float(time), w, v.T.copy())


def dress_drive(params, drive, times):
    """Dressed frames of the driven cascade along ``times``."""
    return [dress(build_hamiltonian(params, drive, t), time=t) for t in np.atleast_1d(times)]


def track_branches(frames, degeneracy_tol=1e-8):
    """Relabel successive frames so each branch follows its eigenvector.

    Branch ``i`` at step ``k + 1`` is the state with the largest overlap
    with branch ``i`` at step ``k`` (optimal assignment).  Inside a
    degenerate cluster the overlap with the whole eigenspace is used.
    Raises :class:`AmbiguousTracking` when an assigned overlap is not
    above ``1/sqrt(2)``.
    """
    frames = list(frames)
    if not frames:
        return []
    out = [DressedFrame(frames[0].time, frames[0].energies.copy(), frames[0].mixing.copy(),
                        np.arange(frames[0].energies.size))]
    limit = 1.0 / math.sqrt(2.0)
    for k in range(1, len(frames)):
        prev = out[-1]
        cur = frames[k]
        n = cur.energies.size
        raw = np.abs(prev.mixing.conj() @ cur.mixing.T)  # [branch, new state]
        eff = raw.copy()
        scale = max(1.0, float(np.max(np.abs(cur.energies))))
        groups_cur = _clusters(cur.energies, degeneracy_tol * scale)
        order_prev = np.argsort(prev.energies, kind="stable")
        groups_prev = [[int(order_prev[i]) for i in g]
                       for g in _clusters(prev.energies[order_prev], degeneracy_tol * scale)]
        for grp in groups_cur:
            if len(grp) > 1:
                sub = np.sqrt(np.sum(raw[:, grp] ** 2, axis=1))
                for j in grp:
                    eff[:, j] = np.maximum(eff[:, j], sub)
        for grp in groups_prev:
            if len(grp) > 1:
                sub = np.sqrt(np.sum(raw[grp, :] ** 2, axis=0))
                for i in grp:
                    eff[i, :] = np.maximum(eff[i, :], sub)
        score = eff + 1e-3 * raw
        rows, cols = linear_sum_assignment(-score)
        if np.any(eff[rows, cols] <= limit):
            raise AmbiguousTracking(
                f"overlap {np.min(eff[rows, cols]):.3f} at t = {cur.time:g}; refine the time grid")
        perm = np.empty(n, dtype=int)
        perm[rows] = cols
        out.append(DressedFrame(cur.time, cur.energies[perm], cur.mixing[perm], perm))
    return out


def branch_table(tracked):
    """Rows ``(t, E_1..E_n, order_1..order_n)`` for export."""
    return np.array([[f.time, *f.energies, *f.order] for f in tracked])


@dataclass(frozen=True)
class TransitionLine:
    """Dressed-state transition ``from_index -> to_index``.

    ``energy`` is ``E_from - E_to`` in meV relative to the laser carrier;
    ``weight`` is the squared detector matrix element.  ``line_class`` is
    ``"XX"`` when the XX -> X part of the matrix element dominates and
    ``"X"`` for the X -> G part.
    """

    from_index: int
    to_index: int
    energy: float
    weight: float
    line_class: str


def transition_catalog(frame, detect_polarization="V", floor=WEIGHT_FLOOR):
    """All dressed transitions of the detection operator with weight above ``floor``.

    The weights over all ordered pairs sum to ``||sigma||_F^2 = 2`` before
    filtering.
    """
    pol = str(detect_polarization).upper()
    sig = sigma(pol)
    x = XV if pol == "V" else 1
    m = frame.mixing  # rows: states
    amp = m.conj() @ sig @ m.T  # amp[j, i] = <psi_j| sigma |psi_i>
    # split into the X -> G and XX -> X parts of sigma
    part_x = np.outer(m.conj()[:, G], m[:, x])
    part_xx = np.outer(m.conj()[:, x], m[:, XX])
    lines = []
    n = m.shape[0]
    for i in range(n):
        for j in range(n):
            w = float(abs(amp[j, i]) ** 2)
            if w < floor:
                continue
            cls = "XX" if abs(part_xx[j, i]) >= abs(part_x[j, i]) else "X"
            lines.append(TransitionLine(int(i), int(j), float(frame.energies[i] - frame.energies[j]), w, cls))
    lines.sort(key=lambda ln: ln.energy)
    return lines


def block_eigenvalues(detuning_gap, rabi_energy):
    """Closed-form eigenvalues of the resonant {G, X_H, XX} block.

    ``(d +- sqrt(d^2 + 2 (hbar Omega)^2)) / 2`` and the dark state at 0.
    """
    d = detuning_gap
    r = math.sqrt(d * d + 2.0 * rabi_energy**2)
    return np.array([(d - r) / 2.0, 0.0, (d + r) / 2.0])


def cw_line_energies(params, rabi_energy):
    """Analytic emission offsets (meV from the laser) of the resonant cw cascade.

    Valid for ``fss = 0`` and H-polarized driving at two-photon resonance.
    """
    d = params.binding_energy / 2.0
    lo, dark, hi = block_eigenvalues(d, rabi_energy)
    xv = d
    xx_class = np.array([lo, dark, hi]) - xv
    x_class = xv - np.array([lo, dark, hi])
    return np.sort(np.concatenate([xx_class, x_class]))
