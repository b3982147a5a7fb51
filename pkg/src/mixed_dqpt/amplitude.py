"""Return amplitudes, rate functions and cusp detection.

The generalized amplitude of one pair mode is

    G_k(t) = sum_j sqrt(p_j(t) p_j(0)) <phi_j(0)|phi_j(t)> T_j(t)

with T_j the parallel-transport factor of the tracked eigenvector phi_j.  The
fidelity and interferometric amplitudes are provided as baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import fockspace as fs
from .errors import NotApplicable, UnwrapAmbiguity
from .evolution import (ModeTrajectory, TimeGrid, closed_form_mode_gloa,
                        evolve_protocol)
from .model import QuenchProtocol, band_energy, unit_bloch

LOG_FLOOR = 1e-300
SINGULAR_TOL = 1e-15
CUSP_THRESHOLD = 6.0
CUSP_GROWTH = 1.8
UNWRAP_MARGIN = 0.1
KINK_WIDTH = 3


@dataclass
class AmplitudeSeries:
    """Per-mode amplitudes ``values[k, t]`` on a common time grid."""

    k: np.ndarray
    times: np.ndarray
    values: np.ndarray

    @property
    def geometric_phase(self) -> np.ndarray:
        """arg G_k(t), unwrapped along t for each mode."""
        return np.unwrap(np.angle(self.values), axis=-1)

    @property
    def modulus(self) -> np.ndarray:
        return np.abs(self.values)


def mode_gloa_from_trajectory(traj: ModeTrajectory) -> AmplitudeSeries:
    weights = np.sqrt(np.clip(traj.eigenvalues, 0.0, None)
                      * np.clip(traj.initial_eigenvalues, 0.0, None)[:, None, :])
    values = np.sum(weights * traj.initial_overlap * traj.transport, axis=-1)
    return AmplitudeSeries(np.asarray(traj.k), traj.times, values)


def closed_form_series(protocol: QuenchProtocol, k, times) -> AmplitudeSeries:
    k = np.asarray(k, dtype=float)
    times = np.asarray(times, dtype=float)
    return AmplitudeSeries(k, times, closed_form_mode_gloa(protocol, k[:, None], times[None, :]))


def gloa_series(protocol: QuenchProtocol, k, grid: TimeGrid, method="auto",
                **kwargs) -> AmplitudeSeries:
    """GLOA of every mode; ``method`` is "closed_form", "trajectory" or "auto"."""
    if method == "auto":
        method = "closed_form" if protocol.unitary else "trajectory"
    if method == "closed_form":
        return closed_form_series(protocol, k, grid.times)
    return mode_gloa_from_trajectory(evolve_protocol(protocol, k, grid, **kwargs))


def pure_state_loa(protocol: QuenchProtocol, k, t) -> np.ndarray:
    """Textbook pure-state return amplitude |g|^2 e^{i eps t} + |e|^2 e^{-i eps t}."""
    cos = np.sum(unit_bloch(protocol.initial, k) * unit_bloch(protocol.final, k), axis=-1)
    gsq, esq = 0.5 * (1 + cos), 0.5 * (1 - cos)
    eps = band_energy(protocol.final, k)
    return gsq * np.exp(1j * eps * t) + esq * np.exp(-1j * eps * t)


# ------------------------------------------------------------------ rate

@dataclass
class CuspCandidate:
    time: float
    index: int
    score: float
    ratios: list = field(default_factory=list)
    confirmed: bool = False


@dataclass
class RateSeries:
    times: np.ndarray
    rate: np.ndarray
    derivative: np.ndarray
    cusp_candidates: list
    singular_times: np.ndarray

    @property
    def log_singular(self) -> bool:
        return self.singular_times.size > 0


def log_return_density(values) -> np.ndarray:
    """ln |G|^2 with |G| clipped at 1e-300."""
    return 2.0 * np.log(np.maximum(np.abs(values), LOG_FLOOR))


def total_rate_function(series: AmplitudeSeries, L: Optional[int] = None,
                        thermodynamic: bool = False,
                        threshold: float = CUSP_THRESHOLD) -> RateSeries:
    """g(t) = -(1/L) sum_k ln |G_k(t)|^2 over the positive-k modes.

    ``L`` defaults to twice the number of modes (one site per momentum).  With
    ``thermodynamic`` the sum is replaced by -(1/2 pi) times the trapezoid
    integral over the sampled momenta.
    """
    logs = log_return_density(series.values)
    if thermodynamic:
        rate = -np.trapezoid(logs, series.k, axis=0) / (2 * np.pi)
    else:
        L = 2 * len(series.k) if L is None else L
        rate = -np.sum(logs, axis=0) / L
    singular = np.any(np.abs(series.values) < SINGULAR_TOL, axis=0)
    # second-order end stencils: a first-order edge would mimic a kink under refinement
    deriv = np.gradient(rate, series.times, edge_order=2 if rate.size > 2 else 1)
    cands = find_cusp_candidates(series.times, rate, threshold)
    return RateSeries(series.times, rate, deriv, cands, series.times[singular])


def kink_strength(values, width: int = KINK_WIDTH) -> np.ndarray:
    """Change of secant slope across each grid cell, in units of the value step.

    Entry n refers to the cell (t[a], t[a+1]) with a = n + width; the secants
    span ``width`` cells on either side.  A kink anywhere inside the cell is
    captured in full, while a smooth function contributes ~ (width + 1) dt^2 g''.
    """
    v = np.asarray(values, dtype=float)
    m = width
    a = np.arange(m, v.size - 1 - m)
    return (v[a + 1 + m] - v[a + 1]) / m - (v[a] - v[a - m]) / m


def _kink_time(times, values, cell):
    """Intersection of the secant lines on either side of cell (t[cell], t[cell+1])."""
    t, v = times, values
    a, b = cell, cell + 1
    sl = (v[a] - v[a - 1]) / (t[a] - t[a - 1])
    sr = (v[b + 1] - v[b]) / (t[b + 1] - t[b])
    if sl == sr:
        return 0.5 * (t[a] + t[b])
    tc = (v[b] - v[a] + sl * t[a] - sr * t[b]) / (sl - sr)
    return float(np.clip(tc, t[a], t[b]))


def cusp_scores(times, values, width: int = KINK_WIDTH):
    """Kink score of every cell: |slope change| over its median magnitude.

    Returns (cell midpoints, scores, first-index of each cell).
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    w = np.abs(kink_strength(values, width))
    # roundoff floor keeps flat stretches from producing huge scores
    scale = max(np.median(w), 1e-13 * np.max(np.abs(values)), np.finfo(float).tiny)
    cells = np.arange(width, width + w.size)
    return 0.5 * (times[cells] + times[cells + 1]), w / scale, cells


def find_cusp_candidates(times, values, threshold=CUSP_THRESHOLD,
                         width: int = KINK_WIDTH) -> list:
    """Local maxima of the kink score above ``threshold``."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.size < 2 * width + 4:
        return []
    _, score, cells = cusp_scores(times, values, width)
    out = []
    for n in np.flatnonzero(score > threshold):
        lo, hi = max(0, n - width), min(score.size, n + width + 1)
        if lo + np.argmax(score[lo:hi]) != n:
            continue
        out.append(CuspCandidate(_kink_time(times, values, cells[n]), int(cells[n]),
                                 float(score[n])))
    return out


def confirm_cusps(compute: Callable[[TimeGrid], np.ndarray], grid: TimeGrid,
                  levels: int = 1, threshold=CUSP_THRESHOLD, growth=CUSP_GROWTH,
                  candidates=None, base_values=None, width: int = KINK_WIDTH) -> list:
    """Candidates from ``grid`` whose score grows >= ``growth`` per 2x refinement.

    ``compute(grid)`` must return the series sampled on ``grid.times``.  Analytic
    kinks sharpen under refinement (score ~ 1/dt) while smooth maxima keep a
    constant score.  Every candidate is returned with its growth ratios and a
    ``confirmed`` flag.
    """
    if candidates is None:
        values = compute(grid) if base_values is None else base_values
        candidates = find_cusp_candidates(grid.times, values, threshold, width)
    track = [(c.time, c.score) for c in candidates]
    window = (width + 0.5) * grid.dt
    g = grid
    for _ in range(levels):
        g = g.refined(2)
        mids, score, _ = cusp_scores(g.times, compute(g), width)
        for i, c in enumerate(candidates):
            t_prev, s_prev = track[i]
            sel = np.flatnonzero(np.abs(mids - t_prev) <= window)
            if sel.size == 0:
                c.ratios.append(0.0)
                continue
            best = sel[np.argmax(score[sel])]
            c.ratios.append(float(score[best] / s_prev))
            track[i] = (mids[best], score[best])
    for c in candidates:
        c.confirmed = len(c.ratios) == levels and all(r >= growth for r in c.ratios)
    return candidates


# ------------------------------------------------------------ phase profile

def geometric_phase_profile(series: AmplitudeSeries, t_index: int,
                            margin: float = UNWRAP_MARGIN, tolerate: bool = False):
    """Geometric phase over k in [0, pi] at time ``times[t_index]``, unwrapped in k.

    The pinned endpoint values phi(0) = phi(pi) = 0 are prepended and appended.
    A jump between neighbouring momenta larger than pi (1 - margin) is ambiguous
    and raises UnwrapAmbiguity unless ``tolerate``.
    Returns (k, phase) including the endpoints.
    """
    phase = np.angle(series.values[:, t_index])
    raw = np.concatenate([[0.0], phase, [0.0]])
    d = np.diff(raw)
    d = (d + np.pi) % (2 * np.pi) - np.pi
    if not tolerate and np.any(np.abs(d) > np.pi * (1 - margin)):
        raise UnwrapAmbiguity(
            f"phase jump of {np.max(np.abs(d)):.3f} rad between neighbouring momenta "
            f"at t = {series.times[t_index]:.6g}")
    k = np.concatenate([[0.0], series.k, [np.pi]])
    return k, np.concatenate([[0.0], np.cumsum(d)])


# ---------------------------------------------------------------- baselines

def _psd_sqrt(m):
    w, v = np.linalg.eigh(m)
    w = np.sqrt(np.clip(w, 1e-14, None) * (w > 1e-14))
    return np.einsum("...ij,...j,...kj->...ik", v, w, v.conj())


def fidelity_amplitude(rho0, rho_t) -> np.ndarray:
    """Uhlmann fidelity tr sqrt(sqrt(rho0) rho_t sqrt(rho0)), batched."""
    s = _psd_sqrt(np.asarray(rho0))
    m = s @ np.asarray(rho_t) @ s
    m = 0.5 * (m + np.swapaxes(m.conj(), -1, -2))
    w = np.linalg.eigvalsh(m)
    return np.sum(np.sqrt(np.clip(w, 0.0, None)), axis=-1)


def qubit_fidelity(rho0, rho_t) -> np.ndarray:
    """Fidelity of 2x2 density matrices: sqrt(tr rho0 rho_t + 2 sqrt(det rho0 det rho_t))."""
    rho0, rho_t = np.asarray(rho0), np.asarray(rho_t)
    tr = np.real(np.einsum("...ij,...ji->...", rho0, rho_t))
    dets = np.real(np.linalg.det(rho0)) * np.real(np.linalg.det(rho_t))
    return np.sqrt(np.clip(tr + 2 * np.sqrt(np.clip(dets, 0.0, None)), 0.0, None))


def interferometric_amplitude(rho0, u_t) -> np.ndarray:
    """tr[rho0 U(t)], batched."""
    return np.trace(np.asarray(rho0) @ np.asarray(u_t), axis1=-2, axis2=-1)


def _unitary_even(protocol, k, times):
    """exp(-i h_f . sigma t) on the even block, shape (k, t, 2, 2)."""
    h = protocol.final.bloch(k)
    eps = np.linalg.norm(h, axis=-1)
    nh = h / eps[..., None]
    hs = np.einsum("ka,aij->kij", nh, fs.SIGMA)
    ph = eps[:, None] * np.asarray(times)[None, :]
    return (np.cos(ph)[..., None, None] * np.eye(2)
            - 1j * np.sin(ph)[..., None, None] * hs[:, None])


def fidelity_series(protocol: QuenchProtocol, k, grid: TimeGrid, chunk=256,
                    **kwargs) -> AmplitudeSeries:
    """Fidelity amplitude F(rho_k(0), rho_k(t)) for every mode."""
    k = np.asarray(k, dtype=float)
    if not protocol.unitary:
        from .evolution import initial_state
        traj = evolve_protocol(protocol, k, grid, keep_states=True, **kwargs)
        rho0 = initial_state(protocol, k)
        vals = fidelity_amplitude(rho0[:, None], traj.densities)
        return AmplitudeSeries(k, grid.times, vals)
    rho0 = fs.even_block(fs.thermal_mode_state(protocol.initial, protocol.beta, k))
    times = grid.times
    out = np.empty((k.size, times.size))
    for start in range(0, times.size, chunk):
        ts = times[start:start + chunk]
        u = _unitary_even(protocol, k, ts)
        rt = u @ rho0[:, None] @ np.swapaxes(u.conj(), -1, -2)
        out[:, start:start + chunk] = qubit_fidelity(rho0[:, None], rt)
    return AmplitudeSeries(k, times, out)


def interferometric_series(protocol: QuenchProtocol, k, grid: TimeGrid) -> AmplitudeSeries:
    if not protocol.unitary:
        raise NotApplicable("interferometric amplitude needs a unitary U(t); "
                            "dissipative protocols have none")
    k = np.asarray(k, dtype=float)
    rho0 = fs.even_block(fs.thermal_mode_state(protocol.initial, protocol.beta, k))
    u = _unitary_even(protocol, k, grid.times)
    return AmplitudeSeries(k, grid.times, interferometric_amplitude(rho0[:, None], u))
