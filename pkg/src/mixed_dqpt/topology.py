"""Dynamical topological order parameter, critical times and pseudo-spin winding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize

from . import fockspace as fs
from .amplitude import AmplitudeSeries, geometric_phase_profile
from .errors import (NoChiralSymmetry, NoCriticalMode, SpinVanishes,
                     UnwrapAmbiguity, ZeroSlope)
from .model import QuenchProtocol, band_energy, overlap_coefficients, unit_bloch

SPIN_FLOOR = 1e-6
CHIRAL_TOL = 1e-6
ROOT_TOL = 1e-12
SLOPE_STEP = 1e-6


# ------------------------------------------------------------ critical times

@dataclass(frozen=True)
class CriticalMode:
    k: float
    energy: float
    times: tuple

    @property
    def first(self) -> float:
        return self.times[0]


def critical_times(protocol: QuenchProtocol, n_max: int = 3, scan: int = 4001) -> list:
    """Critical momenta (n_i . n_f = 0) in (0, pi) with t_n = (2n - 1) pi / (2 eps_f).

    Roots are bracketed on a ``scan``-point grid and polished with Brent's method.
    """
    def cos(k):
        return float(np.sum(unit_bloch(protocol.initial, k) * unit_bloch(protocol.final, k)))

    ks = np.linspace(0.0, np.pi, scan)[1:-1]
    vals = np.sum(unit_bloch(protocol.initial, ks) * unit_bloch(protocol.final, ks), axis=-1)
    roots = []
    for i in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0):
        roots.append(brentq(cos, ks[i], ks[i + 1], xtol=ROOT_TOL, rtol=4 * np.finfo(float).eps))
    roots.extend(ks[vals == 0.0].tolist())
    if not roots:
        raise NoCriticalMode("n_i . n_f never changes sign: no dynamical transition predicted")
    out = []
    for kc in sorted(roots):
        eps = float(band_energy(protocol.final, kc))
        out.append(CriticalMode(kc, eps, tuple((2 * n - 1) * np.pi / (2 * eps)
                                               for n in range(1, n_max + 1))))
    return out


def dtop_jump_prediction(protocol: QuenchProtocol, k_c: float) -> int:
    """Predicted DTOP jump at a critical time: sgn(d|e_k|^2/dk at k_c) sgn(beta)."""
    h = SLOPE_STEP
    _, e_hi = overlap_coefficients(protocol.initial, protocol.final, k_c + h)
    _, e_lo = overlap_coefficients(protocol.initial, protocol.final, k_c - h)
    slope = (e_hi - e_lo) / (2 * h)
    if abs(slope) < 1e-10:
        raise ZeroSlope(f"|e_k|^2 has zero slope at k_c = {k_c}")
    return int(np.sign(slope) * np.sign(protocol.beta))


# ---------------------------------------------------------------------- DTOP

def dtop(phase_profile) -> float:
    """Winding of an unwrapped geometric-phase profile over [0, pi], pinned at both ends."""
    phase = np.asarray(phase_profile, dtype=float)
    return float((phase[-1] - phase[0]) / (2 * np.pi))


@dataclass
class DtopSeries:
    times: np.ndarray
    nu_d: np.ndarray
    jumps: list = field(default_factory=list)
    ambiguous: np.ndarray = None


def dtop_series(series: AmplitudeSeries, critical=(), window_cells: int = 1,
                margin: float = 0.1) -> DtopSeries:
    """nu_D(t) at every time of ``series``.

    Unwrap ambiguities within ``window_cells`` time steps of a time in
    ``critical`` are accepted (a pi jump of the phase there is genuine); anywhere
    else they raise UnwrapAmbiguity.  Jumps are reported at the midpoint of the
    cell where nu_D changes.
    """
    times = series.times
    dt = times[1] - times[0] if times.size > 1 else 0.0
    critical = np.asarray(list(critical), dtype=float)
    nu = np.empty(times.size)
    amb = np.zeros(times.size, dtype=bool)
    for n in range(times.size):
        try:
            _, prof = geometric_phase_profile(series, n, margin=margin)
        except UnwrapAmbiguity:
            near = critical.size and np.min(np.abs(critical - times[n])) <= window_cells * dt
            if not near:
                raise
            amb[n] = True
            _, prof = geometric_phase_profile(series, n, margin=margin, tolerate=True)
        nu[n] = dtop(prof)
    rounded = np.round(nu)
    jumps = [(0.5 * (times[i] + times[i + 1]), int(rounded[i + 1] - rounded[i]))
             for i in np.flatnonzero(np.diff(rounded) != 0)]
    return DtopSeries(times, nu, jumps, amb)


# ---------------------------------------------------------------- pseudo spin

@dataclass
class PseudoSpinField:
    """Normalized even-block Bloch vectors over the full zone, ordered in k."""

    k: np.ndarray
    n_vec: np.ndarray
    n_hat: np.ndarray
    chiral_axis: np.ndarray
    ill_defined: np.ndarray
    chiral_residual: float

    @property
    def min_norm(self) -> float:
        return float(np.min(np.linalg.norm(self.n_vec, axis=-1)))


def full_zone(k, n_vec):
    """Extend positive-k Bloch vectors to (-pi, pi) using n(-k) = (-n_x, -n_y, n_z).

    Swapping k and -k maps |11> to -|11>, which flips the in-plane components
    of the even-block pseudo spin.
    """
    k = np.asarray(k, dtype=float)
    n_vec = np.asarray(n_vec)
    keep = (np.abs(k) > 1e-12) & ~np.isclose(k, np.pi)
    mirrored = n_vec[keep][::-1] * np.array([-1.0, -1.0, 1.0])
    return np.concatenate([-k[keep][::-1], k]), np.concatenate([mirrored, n_vec], axis=0)


def chiral_axis(n_vec):
    """Unit vector most nearly orthogonal to every n_k, and the residual singular value.

    The sign is fixed so the largest component of the axis is positive.
    """
    m = np.asarray(n_vec).reshape(-1, 3)
    _, s, vt = np.linalg.svd(m, full_matrices=True)
    axis = vt[-1]
    axis = axis * np.sign(axis[np.argmax(np.abs(axis))])
    resid = s[-1] / np.sqrt(m.shape[0]) if s.size == 3 else 0.0
    return axis, float(resid)


def pseudo_spin_field(rho, k, spin_floor: float = SPIN_FLOOR,
                      require_chiral: bool = True) -> PseudoSpinField:
    """Pseudo-spin field of density matrices ``rho[k]`` (positive momenta) at one time.

    ``rho`` may be full 4x4 matrices or even blocks.  Raises NoChiralSymmetry when
    no axis is orthogonal to all n_k within 1e-6 (``require_chiral``).
    """
    rho = np.asarray(rho)
    block = fs.even_block(rho) if rho.shape[-1] == 4 else rho
    if np.any(np.real(np.trace(block, axis1=-2, axis2=-1)) <= 0):
        raise ValueError("even block has zero weight; pseudo spin undefined")
    return field_from_bloch(k, fs.bloch_of_block(block), spin_floor, require_chiral)


def field_from_bloch(k, n_vec, spin_floor=SPIN_FLOOR, require_chiral=True,
                     full=False) -> PseudoSpinField:
    """Field from Bloch vectors at positive momenta, or over the whole zone if ``full``."""
    kk, n = (np.asarray(k, dtype=float), np.asarray(n_vec)) if full else full_zone(k, n_vec)
    norm = np.linalg.norm(n, axis=-1)
    ill = norm <= spin_floor
    with np.errstate(invalid="ignore", divide="ignore"):
        n_hat = np.where(ill[:, None], np.nan, n / norm[:, None])
    axis, resid = chiral_axis(n)
    if require_chiral and resid > CHIRAL_TOL:
        raise NoChiralSymmetry(f"pseudo spins span three dimensions (residual {resid:.2e})")
    return PseudoSpinField(kk, n, n_hat, axis, ill, resid)


def _plane_angles(field: PseudoSpinField):
    a = field.chiral_axis
    # right-handed in-plane frame (e1, e2, a)
    trial = np.eye(3)[np.argmin(np.abs(a))]
    e1 = trial - a * np.dot(trial, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(a, e1)
    return np.arctan2(field.n_hat @ e2, field.n_hat @ e1)


def winding_integral(field: PseudoSpinField) -> float:
    """Accumulated signed in-plane rotation of n_hat around the chiral axis, / 2 pi.

    The loop is closed from the last momentum back to the first.
    """
    if np.any(field.ill_defined):
        raise SpinVanishes(
            f"pseudo spin vanishes at k = {field.k[field.ill_defined].tolist()}")
    ang = _plane_angles(field)
    d = np.diff(np.concatenate([ang, ang[:1]]))
    d = (d + np.pi) % (2 * np.pi) - np.pi
    return float(np.sum(d) / (2 * np.pi))


def winding_integrand(field: PseudoSpinField) -> float:
    """(1/2 pi) sum a . (n_hat x d n_hat/dk) dk with periodic central differences."""
    if np.any(field.ill_defined):
        raise SpinVanishes("pseudo spin vanishes on the grid")
    n = field.n_hat
    k = field.k
    period = 2 * np.pi
    kp = np.roll(k, -1) - np.roll(k, 1)
    kp = (kp + np.pi) % period - np.pi
    kp[kp <= 0] += period
    dn = (np.roll(n, -1, axis=0) - np.roll(n, 1, axis=0)) / kp[:, None]
    integrand = np.cross(n, dn) @ field.chiral_axis
    dk = np.diff(np.concatenate([k, [k[0] + period]]))
    weights = 0.5 * (dk + np.roll(dk, 1))
    return float(np.sum(integrand * weights) / (2 * np.pi))


def winding_number(field: PseudoSpinField) -> int:
    return int(np.round(winding_integral(field)))


def winding_series(k, bloch, spin_floor=SPIN_FLOOR):
    """Winding number at every time of a trajectory's pseudo-spin data ``bloch[k, t]``.

    Returns (winding, raw, min_norm) arrays over t; winding is NaN where the
    pseudo spin vanishes on the grid or no chiral axis exists.
    """
    nt = bloch.shape[1]
    wind = np.full(nt, np.nan)
    raw = np.full(nt, np.nan)
    mins = np.empty(nt)
    for n in range(nt):
        f = field_from_bloch(k, bloch[:, n], spin_floor, require_chiral=False)
        mins[n] = f.min_norm
        if not np.any(f.ill_defined) and f.chiral_residual <= CHIRAL_TOL:
            raw[n] = winding_integral(f)
            wind[n] = np.round(raw[n])
    return wind, raw, mins


def locate_spin_zero(bloch_at, k0: float, t0: float, tol: float = 1e-4,
                     k_bounds=(0.0, np.pi), t_bounds=(0.0, np.inf),
                     k_step: float = 1e-3, t_step: float = None):
    """Refine the momentum and time at which the pseudo spin vanishes.

    ``bloch_at(k, t)`` returns the normalized even-block Bloch vector of one mode.
    Starting from a grid estimate, |n(k, t)| is minimized over both variables
    with an initial simplex of size (``k_step``, ``t_step``), normally the grid
    spacings.  Returns (k, t, |n|).
    """
    t_step = 10 * tol if t_step is None else t_step
    def norm(x):
        k = np.clip(x[0], *k_bounds)
        t = np.clip(x[1], *t_bounds)
        return float(np.linalg.norm(bloch_at(k, t)))

    res = minimize(norm, np.array([k0, t0]), method="Nelder-Mead",
                   options={"xatol": tol * 1e-2, "fatol": 1e-12, "maxiter": 2000,
                            "initial_simplex": [[k0, t0], [k0 + k_step, t0], [k0, t0 + t_step]]})
    return float(res.x[0]), float(res.x[1]), float(res.fun)


# ------------------------------------------------- dissipative topology change

def exact_bloch(protocol: QuenchProtocol, k, t) -> np.ndarray:
    """Normalized even-block Bloch vector of one mode at time ``t`` via expm."""
    from scipy.linalg import expm
    from .evolution import initial_state, protocol_generator, unvec, vec
    gen = protocol_generator(protocol, float(k)).matrix[0]
    rho = unvec(expm(gen * float(t)) @ vec(initial_state(protocol, float(k))[0]))
    return fs.bloch_of_block(fs.even_block(rho))


@dataclass
class TopologyChange:
    times: np.ndarray
    winding: np.ndarray
    raw: np.ndarray
    min_norm: np.ndarray
    index: int
    time: float
    delta: int
    k_zero: float
    t_zero: float
    norm_zero: float


def winding_change(protocol: QuenchProtocol, k, bloch, times, tol: float = 1e-4):
    """First change of the winding number in a trajectory and its spin zero.

    The vanishing point of the pseudo spin is located in (k, t) starting from the
    grid minimum of |n| around the change.  Returns None if the winding never
    changes.
    """
    k = np.asarray(k, dtype=float)
    times = np.asarray(times, dtype=float)
    wind, raw, mins = winding_series(k, bloch)
    defined = np.flatnonzero(np.isfinite(wind))
    steps = np.flatnonzero(np.diff(wind[defined]) != 0)
    if steps.size == 0:
        return None
    i0, i1 = defined[steps[0]], defined[steps[0] + 1]
    lo, hi = max(0, i0 - 1), min(times.size, i1 + 2)
    norms = np.linalg.norm(bloch[:, lo:hi], axis=-1)
    ki, ti = np.unravel_index(np.argmin(norms), norms.shape)
    dk = float(np.min(np.diff(k))) if k.size > 1 else 1e-3
    kz, tz, nz = locate_spin_zero(lambda kk, tt: exact_bloch(protocol, kk, tt),
                                  float(k[ki]), float(times[lo + ti]), tol=tol,
                                  k_step=dk, t_step=float(times[1] - times[0]))
    return TopologyChange(times, wind, raw, mins, int(i1), float(0.5 * (times[i0] + times[i1])),
                          int(wind[i1] - wind[i0]), kz, tz, nz)


def unitary_bloch(protocol: QuenchProtocol, k, times) -> np.ndarray:
    """Even-block Bloch vectors [k, t, 3] of a unitary quench in closed form.

    The thermal vector -tanh(beta eps_i) h_i precesses about h_f at angular
    frequency 2 eps_f, so its length is conserved.
    """
    k = np.asarray(k, dtype=float)
    t = np.asarray(times, dtype=float)
    n0 = -np.tanh(protocol.beta * band_energy(protocol.initial, k))[:, None] * unit_bloch(protocol.initial, k)
    hf = unit_bloch(protocol.final, k)
    par = np.sum(n0 * hf, axis=-1)[:, None] * hf
    perp = n0 - par
    cross = np.cross(hf, n0)
    ang = 2 * band_energy(protocol.final, k)[:, None] * t[None, :]
    return (par[:, None] + np.cos(ang)[..., None] * perp[:, None]
            + np.sin(ang)[..., None] * cross[:, None])


def bloch_series(protocol: QuenchProtocol, k, grid, **kwargs) -> np.ndarray:
    """Pseudo-spin data [k, t, 3] on ``grid``; closed form when unitary."""
    if protocol.unitary:
        return unitary_bloch(protocol, k, grid.times)
    from .evolution import evolve_protocol
    return evolve_protocol(protocol, k, grid, **kwargs).bloch
