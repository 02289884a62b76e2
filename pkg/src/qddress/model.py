"""Four-level emitter, laser drive and rotating-frame Hamiltonian.

Energies are in meV, times in ps and rates in 1/ps throughout.  The basis
ordering is ``(G, X_H, X_V, XX)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

HBAR = 0.6582119569  # meV ps

G, XH, XV, XX = 0, 1, 2, 3
LABELS = ("G", "X_H", "X_V", "XX")

# intensity FWHM -> field sigma: tau = 2 sqrt(ln 2) tau_field
_FWHM_TO_FIELD = 1.0 / (2.0 * math.sqrt(math.log(2.0)))

# Envelope magnitude (rad/ps) below which the pulse is treated as switched off.
ENVELOPE_FLOOR = 1e-10


def ket(i, dim=4):
    v = np.zeros(dim, dtype=complex)
    v[i] = 1.0
    return v


def projector(i, j, dim=4):
    """Return ``|i><j|``."""
    m = np.zeros((dim, dim), dtype=complex)
    m[i, j] = 1.0
    return m


def sigma_h():
    return projector(G, XH) + projector(XH, XX)


def sigma_v():
    return projector(G, XV) + projector(XV, XX)


def sigma(polarization):
    """Lowering operator of one polarization branch (``"H"`` or ``"V"``)."""
    pol = str(polarization).upper()
    if pol == "H":
        return sigma_h()
    if pol == "V":
        return sigma_v()
    raise ValueError(f"unknown polarization {polarization!r}")


@dataclass(frozen=True)
class SystemParameters:
    """Physical constants of the biexciton-exciton cascade.

    Defaults describe the studied InGaAs dot: exciton line at 1354.1 meV,
    biexciton binding energy 2.1 meV, lifetimes 157 ps (XX) and 295 ps (X).
    The fine-structure splitting is not resolved in the measurements and
    defaults to zero.
    """

    exciton_energy: float = 1354.1
    binding_energy: float = 2.1
    fss: float = 0.0
    gamma_xx: float = 1.0 / 157.0
    gamma_x: float = 1.0 / 295.0
    dephasing: float = 0.0
    hbar: float = HBAR

    def __post_init__(self):
        if not self.binding_energy > 0:
            raise ValueError("binding_energy must be positive")
        # zero rates are allowed for decoherence-free reference runs
        if self.gamma_xx < 0 or self.gamma_x < 0:
            raise ValueError("decay rates must be non-negative")
        if self.dephasing < 0:
            raise ValueError("dephasing must be non-negative")
        if abs(self.fss) >= self.binding_energy:
            raise ValueError("|fss| must be smaller than binding_energy")

    @property
    def xx_line(self):
        """Absolute XX -> X_V emission energy (meV)."""
        return self.exciton_energy - self.binding_energy + self.fss / 2.0

    @property
    def x_line(self):
        """Absolute X_V -> G emission energy (meV)."""
        return self.exciton_energy - self.fss / 2.0

    @property
    def two_photon_resonance(self):
        return self.exciton_energy - self.binding_energy / 2.0


@dataclass(frozen=True)
class DriveField:
    """Laser description, either continuous wave or a Gaussian pulse.

    ``pulse_area`` is the two-level pulse area Theta (rad).  For cw driving
    ``rabi_amplitude`` is the constant Rabi frequency in rad/ps.
    ``laser_detuning`` is measured from the two-photon resonance (meV).
    """

    kind: str = "gaussian_pulse"
    pulse_area: float = 0.0
    rabi_amplitude: float = 0.0
    tau_intensity_fwhm: float = 14.0
    center_time: float = 0.0
    laser_detuning: float = 0.0
    alpha_h: float = 1.0
    alpha_v: float = 0.0

    def __post_init__(self):
        if self.kind not in ("cw", "gaussian_pulse"):
            raise ValueError(f"unknown drive kind {self.kind!r}")
        if abs(self.alpha_h**2 + self.alpha_v**2 - 1.0) > 1e-12:
            raise ValueError("alpha_h**2 + alpha_v**2 must equal 1")
        if self.kind == "gaussian_pulse" and not self.tau_intensity_fwhm > 0:
            raise ValueError("tau_intensity_fwhm must be positive")

    @classmethod
    def pulse(cls, pulse_area, tau, **kw):
        return cls(kind="gaussian_pulse", pulse_area=float(pulse_area),
                   tau_intensity_fwhm=float(tau), **kw)

    @classmethod
    def cw(cls, rabi_energy, hbar=HBAR, **kw):
        """Continuous drive with Rabi energy ``hbar*Omega`` given in meV."""
        return cls(kind="cw", rabi_amplitude=float(rabi_energy) / hbar, **kw)

    @property
    def is_pulsed(self):
        return self.kind == "gaussian_pulse"

    @property
    def tau_field(self):
        """Standard deviation of the Gaussian field envelope (ps)."""
        return self.tau_intensity_fwhm * _FWHM_TO_FIELD

    @property
    def autocorrelation_fwhm(self):
        return 2.0 * math.sqrt(2.0 * math.log(2.0)) * self.tau_field

    @property
    def peak_rabi(self):
        if not self.is_pulsed:
            return abs(self.rabi_amplitude)
        return abs(self.pulse_area) / (math.sqrt(2 * math.pi) * self.tau_field)

    def envelope(self, t):
        return rabi_envelope(self, t)

    def rabi_phase(self, t):
        """Accumulated Rabi phase ``int_{-inf}^t Omega dt'`` (pulses only)."""
        from scipy.special import erf

        x = (np.asarray(t, dtype=float) - self.center_time) / (math.sqrt(2.0) * self.tau_field)
        return 0.5 * self.pulse_area * (1.0 + erf(x))

    def active_window(self, floor=ENVELOPE_FLOOR):
        """Time interval outside of which the envelope is below ``floor``.

        Returns ``None`` for cw drives (always on) and for zero-area pulses
        (never on).
        """
        if not self.is_pulsed or self.peak_rabi <= floor:
            return None
        n = math.sqrt(2.0 * math.log(self.peak_rabi / floor))
        n = max(n, 5.0)
        half = n * self.tau_field
        return (self.center_time - half, self.center_time + half)

    def laser_energy(self, params):
        return params.two_photon_resonance + self.laser_detuning

    def with_area(self, pulse_area):
        return replace(self, pulse_area=float(pulse_area))


def rabi_envelope(drive, t):
    """Real Rabi envelope Omega(t) in rad/ps; the optical carrier is removed.

    Gaussian pulses are normalised so that the envelope integrates to the
    pulse area.
    """
    t = np.asarray(t, dtype=float)
    if not drive.is_pulsed:
        return np.full(t.shape, float(drive.rabi_amplitude)) if t.ndim else float(drive.rabi_amplitude)
    tf = drive.tau_field
    amp = drive.pulse_area / (math.sqrt(2.0 * math.pi) * tf)
    out = amp * np.exp(-((t - drive.center_time) ** 2) / (2.0 * tf**2))
    return out if t.ndim else float(out)


def static_hamiltonian(params, drive):
    """Drive-free part of the rotating-frame Hamiltonian (meV)."""
    delta = params.binding_energy / 2.0 - drive.laser_detuning
    return np.diag([0.0,
                    delta + params.fss / 2.0,
                    delta - params.fss / 2.0,
                    2.0 * delta - params.binding_energy]).astype(complex)


def drive_operator(params, drive):
    """Coupling operator multiplying Omega(t): ``-(hbar/2)(sigma_L + sigma_L^dag)``."""
    s = drive.alpha_h * sigma_h() + drive.alpha_v * sigma_v()
    return -0.5 * params.hbar * (s + s.conj().T)


def build_hamiltonian(params, drive, t):
    """Rotating-frame Hamiltonian at time ``t`` (4x4, meV)."""
    return static_hamiltonian(params, drive) + rabi_envelope(drive, t) * drive_operator(params, drive)


def collapse_operators(params):
    """Lindblad jump operators with their rates.

    The biexciton decays into either exciton branch at ``gamma_xx / 2``; each
    exciton decays at ``gamma_x``.  Pure dephasing projectors are added when
    ``dephasing > 0``; they damp every ground/excited coherence at the extra
    rate ``dephasing``.
    """
    ops = []
    if params.gamma_xx > 0:
        ops.append((projector(XH, XX), params.gamma_xx / 2.0))
        ops.append((projector(XV, XX), params.gamma_xx / 2.0))
    if params.gamma_x > 0:
        ops.append((projector(G, XH), params.gamma_x))
        ops.append((projector(G, XV), params.gamma_x))
    if params.dephasing > 0:
        for k in (XH, XV, XX):
            ops.append((projector(k, k), 2.0 * params.dephasing))
    return ops


@dataclass(frozen=True)
class DrivenSystem:
    """Generic ``H(t) = static + Omega(t) * coupling`` with Lindblad damping.

    This is what the propagators consume; :func:`four_level` and
    :func:`two_level` build it from physical parameters.
    """

    static: np.ndarray
    coupling: np.ndarray
    drive: Optional[DriveField]
    collapse: tuple = ()
    hbar: float = HBAR
    carrier: float = 0.0
    labels: tuple = ()
    detector: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.static.shape[0]

    def envelope(self, t):
        if self.drive is None:
            return np.zeros(np.shape(t)) if np.ndim(t) else 0.0
        return rabi_envelope(self.drive, t)

    def hamiltonian(self, t):
        return self.static + self.envelope(t) * self.coupling

    def window(self):
        """Interval during which the drive is on, or ``None``.

        cw drives report ``None`` as well; check :attr:`is_cw`.
        """
        if self.drive is None:
            return None
        return self.drive.active_window()

    @property
    def is_cw(self):
        return self.drive is not None and not self.drive.is_pulsed and self.drive.rabi_amplitude != 0


def emission_operator(params, polarization="V"):
    """Rate-weighted lowering operator whose ``<d^dag d>`` is the photon flux."""
    pol = str(polarization).upper()
    x = XH if pol == "H" else XV
    return (math.sqrt(params.gamma_x) * projector(G, x)
            + math.sqrt(params.gamma_xx / 2.0) * projector(x, XX))


def four_level(params, drive, detect="V", weighted=False):
    """Assemble the four-level cascade for the propagators.

    The detector is the bare lowering operator of the ``detect`` branch, or
    the rate-weighted one when ``weighted`` is set.
    """
    detector = emission_operator(params, detect) if weighted else sigma(detect)
    return DrivenSystem(
        static=static_hamiltonian(params, drive),
        coupling=drive_operator(params, drive),
        drive=drive,
        collapse=tuple(collapse_operators(params)),
        hbar=params.hbar,
        carrier=drive.laser_energy(params),
        labels=LABELS,
        detector=detector,
    )


def two_level(drive, gamma, exciton_energy=0.0, detuning=0.0, dephasing=0.0, hbar=HBAR):
    """Resonantly driven two-level emitter ``{G, X}``.

    Used as the reduction of the cascade to a single transition (the limit
    of a very large binding energy, driving only G <-> X_H).  ``detuning`` is
    ``E_X - E_laser``.
    """
    static = np.diag([0.0, detuning]).astype(complex)
    s = np.array([[0, 1], [0, 0]], dtype=complex)
    coupling = -0.5 * hbar * (s + s.T)
    ops = [(s, gamma)] if gamma > 0 else []
    if dephasing > 0:
        ops.append((np.diag([0.0, 1.0]).astype(complex), 2.0 * dephasing))
    return DrivenSystem(static=static, coupling=coupling, drive=drive,
                        collapse=tuple(ops), hbar=hbar,
                        carrier=exciton_energy - detuning,
                        labels=("G", "X"), detector=s)

