"""Quench dynamics of the (k, -k) pair density matrices.

Superoperators act on column-stacked 4x4 density matrices, vec(rho)[i + 4 j] =
rho[i, j], so X -> A X B becomes the 16x16 matrix B^T (x) A.  Propagation uses
the exact one-step propagator exp(L dt) (scaling and squaring), cached per step
size; the time grid only sets how densely the spectral decomposition is
tracked.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.linalg import expm

from . import fockspace as fs
from .errors import (DegenerateSpectrum, DegenerateSteadyState, NonPhysical, NullLindblad,
                     TrackingLost)
from .model import QuenchProtocol, TwoBandModel, overlap_coefficients, band_energy

TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-9


# ---------------------------------------------------------------- dissipation

def kitaev_uv(k, kappa):
    """Built-in engineered family u_k = sin k, v_k = kappa - cos k."""
    k = np.asarray(k, dtype=float)
    return np.sin(k), kappa - np.cos(k)


def kitaev_normalized_uv(k, kappa):
    u, v = kitaev_uv(k, kappa)
    norm = np.hypot(u, v)
    return u / norm, v / norm


ENGINEERED_FAMILIES = {
    "kitaev": kitaev_uv,
    "kitaev_normalized": kitaev_normalized_uv,
}


@dataclass(frozen=True)
class DissipationSpec:
    """Lindblad channels acting after the quench.

    natural: leakage sqrt(gamma_minus) a and injection sqrt(gamma_plus) a^dag on
    both modes of every pair.  engineered: L_k = v_k a_k^dag - u_k a_-k together
    with its partner L_-k = v_k a_-k^dag + u_k a_k (u odd, v even in k); the
    amplitudes come from ``family`` at ``kappa`` or from the callables ``u``/``v``.
    Engineered specs may also carry natural rates, which are then added on top.
    """

    kind: str = "none"
    gamma_plus: float = 0.0
    gamma_minus: float = 0.0
    family: str = "kitaev"
    kappa: Optional[float] = None
    kappa_initial: Optional[float] = None
    u: Optional[Callable] = field(default=None, compare=False, repr=False)
    v: Optional[Callable] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("none", "natural", "engineered"):
            raise ValueError(f"unknown dissipation kind {self.kind!r}")
        if self.gamma_plus < 0 or self.gamma_minus < 0:
            raise ValueError("dissipation rates must be nonnegative")
        if self.kind == "natural" and self.gamma_plus == 0 and self.gamma_minus == 0:
            raise ValueError("natural dissipation needs a nonzero rate")
        if self.kind == "engineered":
            if self.u is None and self.family not in ENGINEERED_FAMILIES:
                raise ValueError(f"unknown engineered family {self.family!r}")
            if self.u is None and self.kappa is None:
                raise ValueError("engineered family needs kappa")

    @classmethod
    def natural(cls, gamma_plus, gamma_minus):
        return cls("natural", float(gamma_plus), float(gamma_minus))

    @classmethod
    def engineered(cls, kappa, kappa_initial=None, family="kitaev",
                   gamma_plus=0.0, gamma_minus=0.0):
        return cls("engineered", float(gamma_plus), float(gamma_minus), family,
                   float(kappa), None if kappa_initial is None else float(kappa_initial))

    def uv(self, k, kappa=None):
        if self.u is not None:
            return np.asarray(self.u(k), dtype=float), np.asarray(self.v(k), dtype=float)
        return ENGINEERED_FAMILIES[self.family](k, self.kappa if kappa is None else kappa)

    def initial_spec(self) -> "DissipationSpec":
        """Spec whose steady state is the pre-quench state of an engineered run."""
        if self.kappa_initial is None:
            raise ValueError("engineered quench needs kappa_initial")
        return DissipationSpec("engineered", self.gamma_plus, self.gamma_minus,
                               self.family, self.kappa_initial)

    @property
    def max_rate(self) -> float:
        return max(self.gamma_plus, self.gamma_minus)


# ------------------------------------------------------------ superoperators

def sandwich(a, b) -> np.ndarray:
    """Superoperator of X -> A X B for column-stacked vectorization."""
    a = np.asarray(a)
    b = np.asarray(b)
    n = a.shape[-1]
    s = np.einsum("...ia,...bj->...jiba", a, b)
    return s.reshape(s.shape[:-4] + (n * n, n * n))


def vec(rho):
    rho = np.asarray(rho)
    return np.swapaxes(rho, -1, -2).reshape(rho.shape[:-2] + (-1,))


def unvec(v):
    v = np.asarray(v)
    n = int(round(np.sqrt(v.shape[-1])))
    return np.swapaxes(v.reshape(v.shape[:-1] + (n, n)), -1, -2)


def dissipator(lop) -> np.ndarray:
    """D[L] rho = L rho L^dag - {L^dag L, rho}/2."""
    lop = np.asarray(lop)
    ident = np.broadcast_to(np.eye(lop.shape[-1]), lop.shape)
    ldag = np.swapaxes(lop.conj(), -1, -2)
    ll = ldag @ lop
    return sandwich(lop, ldag) - 0.5 * sandwich(ll, ident) - 0.5 * sandwich(ident, ll)


@dataclass(frozen=True)
class Liouvillian:
    """Stack of 16x16 generators, one per momentum in ``k``."""

    matrix: np.ndarray
    k: np.ndarray
    hamiltonian: Optional[np.ndarray] = None
    dissipative: bool = False

    def apply(self, rho):
        return unvec(np.einsum("...ij,...j->...i", self.matrix, vec(rho)))

    def propagator(self, dt) -> np.ndarray:
        return expm(self.matrix * dt)

    def subset(self, idx) -> "Liouvillian":
        ham = None if self.hamiltonian is None else self.hamiltonian[idx]
        return Liouvillian(self.matrix[idx], self.k[idx], ham, self.dissipative)


def build_hamiltonian_liouvillian(model: TwoBandModel, k) -> Liouvillian:
    """Superoperator of rho -> -i [H_k, rho] for the block Hamiltonian."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    ham = fs.mode_hamiltonian(model.bloch(k))
    ident = np.broadcast_to(np.eye(4), ham.shape)
    mat = -1j * (sandwich(ham, ident) - sandwich(ident, ham))
    return Liouvillian(mat, k, ham, False)


def add_natural_dissipation(liouvillian: Liouvillian, gamma_plus, gamma_minus,
                            ops: fs.ModeOperators | None = None) -> Liouvillian:
    ops = ops or fs.mode_operators()
    extra = np.zeros((16, 16), dtype=complex)
    for a in (ops.a_k, ops.a_mk):
        if gamma_minus:
            extra += gamma_minus * dissipator(a)
        if gamma_plus:
            extra += gamma_plus * dissipator(a.conj().T)
    dissipative = liouvillian.dissipative or bool(gamma_plus or gamma_minus)
    return Liouvillian(liouvillian.matrix + extra, liouvillian.k,
                       liouvillian.hamiltonian, dissipative)


def add_engineered_dissipation(liouvillian: Liouvillian, u_k, v_k,
                               ops: fs.ModeOperators | None = None) -> Liouvillian:
    """Add L_k = v a_k^dag - u a_-k and its partner L_-k = v a_-k^dag + u a_k."""
    ops = ops or fs.mode_operators()
    u = np.broadcast_to(np.asarray(u_k), liouvillian.k.shape)[..., None, None]
    v = np.broadcast_to(np.asarray(v_k), liouvillian.k.shape)[..., None, None]
    if np.any((np.abs(u) == 0) & (np.abs(v) == 0)):
        raise NullLindblad("u_k = v_k = 0: Lindblad operator vanishes")
    l_plus = v * ops.a_k_dag - u * ops.a_mk
    l_minus = v * ops.a_mk_dag + u * ops.a_k
    mat = liouvillian.matrix + dissipator(l_plus) + dissipator(l_minus)
    return Liouvillian(mat, liouvillian.k, liouvillian.hamiltonian, True)


def build_liouvillian(model: TwoBandModel, k, spec: DissipationSpec | None = None,
                      kappa=None) -> Liouvillian:
    """Generator for Hamiltonian ``model`` plus the channels in ``spec``.

    Engineered runs have no Hamiltonian part.
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if spec is not None and spec.kind == "engineered":
        zero = np.zeros((k.size, 16, 16), dtype=complex)
        liou = Liouvillian(zero, k, np.zeros((k.size, 4, 4), dtype=complex), False)
        u, v = spec.uv(k, kappa)
        liou = add_engineered_dissipation(liou, u, v)
    else:
        liou = build_hamiltonian_liouvillian(model, k)
    if spec is not None and spec.kind != "none" and (spec.gamma_plus or spec.gamma_minus):
        liou = add_natural_dissipation(liou, spec.gamma_plus, spec.gamma_minus)
    return liou


def steady_state(liouvillian: Liouvillian, null_tol=1e-8) -> np.ndarray:
    """Unique normalized null vector of each generator in the stack."""
    _, s, vh = np.linalg.svd(liouvillian.matrix)
    scale = np.maximum(s[..., 0], 1.0)
    if np.any(s[..., -2] < null_tol * scale):
        raise DegenerateSteadyState("Liouvillian null space has dimension > 1")
    rho = unvec(vh[..., -1, :].conj())
    rho = rho / np.trace(rho, axis1=-2, axis2=-1)[..., None, None]
    return 0.5 * (rho + np.swapaxes(rho.conj(), -1, -2))


# ---------------------------------------------------------------- time grids

@dataclass(frozen=True)
class TimeGrid:
    t_max: float
    steps: int

    def __post_init__(self):
        if self.steps < 1 or not self.t_max > 0:
            raise ValueError("time grid needs t_max > 0 and steps >= 1")

    @property
    def dt(self) -> float:
        return self.t_max / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.steps + 1)

    def refined(self, factor=2) -> "TimeGrid":
        return TimeGrid(self.t_max, self.steps * factor)


def default_substeps(grid: TimeGrid, eps_max: float, gamma_max: float = 0.0) -> int:
    """Internal steps per output step so that dt <= 0.01/eps_max and 0.01/gamma_max."""
    rate = max(eps_max, gamma_max, 1e-12)
    return max(1, int(np.ceil(grid.dt * rate / 0.01)))


# --------------------------------------------------------------- trajectories

@dataclass
class ModeTrajectory:
    """Tracked spectral data on the output grid, batched over momenta.

    Arrays are indexed [k, t, j].  ``initial_overlap[k, t, j]`` is
    <phi_j(0)|phi_j(t)> for the tracked eigenvector j.
    """

    k: np.ndarray
    times: np.ndarray
    eigenvalues: np.ndarray
    initial_eigenvalues: np.ndarray
    initial_overlap: np.ndarray
    transport: np.ndarray
    bloch: np.ndarray
    even_trace: np.ndarray
    max_trace_error: float
    min_eigenvalue: float
    densities: Optional[np.ndarray] = None
    eigenvectors: Optional[np.ndarray] = None


class _Stepper:
    """Advance density matrices and tracked frames by one output step."""

    def __init__(self, generator: Liouvillian, dt, overlap_floor, max_halvings,
                 transport, degeneracy_tol, gauge_rng=None):
        self.gen = generator
        self.gauge_rng = gauge_rng
        self.dt = dt
        self.floor = overlap_floor
        self.max_halvings = max_halvings
        self.transport = transport
        self.degeneracy_tol = degeneracy_tol
        self.unitary = not generator.dissipative and generator.hamiltonian is not None
        self._cache = {}

    def _prop(self, h):
        key = round(h / self.dt * 2 ** 20)
        if key not in self._cache:
            if self.unitary:
                self._cache[key] = expm(-1j * self.gen.hamiltonian * h)
            else:
                self._cache[key] = self.gen.propagator(h)
        return self._cache[key]

    def _propagate(self, rho, h, idx):
        p = self._prop(h)[idx]
        if self.unitary:
            out = p @ rho @ np.swapaxes(p.conj(), -1, -2)
        else:
            out = unvec(np.einsum("...ij,...j->...i", p, vec(rho)))
        return 0.5 * (out + np.swapaxes(out.conj(), -1, -2))

    def _decompose(self, rho):
        frame = fs.spectral_decompose(rho, self.degeneracy_tol, strict=False)
        if self.gauge_rng is None:
            return frame
        # arbitrary per-step eigenvector phases; results must not depend on them
        phases = np.exp(2j * np.pi * self.gauge_rng.random(frame.eigenvalues.shape))
        return replace(frame, eigenvectors=frame.eigenvectors * phases[..., None, :])

    def advance(self, rho, frame, h, idx, depth=0, t=0.0):
        """Return (rho, frame) after time h for the momenta ``idx``."""
        if self.transport == "basic":
            rho_n = self._propagate(rho, h, idx)
            new, d = fs._match(frame, self._decompose(rho_n), self.degeneracy_tol)
            dmin = np.min(np.abs(d), axis=-1)
            new = replace(new, transport=frame.transport * np.conj(fs._unit(d)))
        else:
            rho_m = self._propagate(rho, h / 2, idx)
            rho_n = self._propagate(rho_m, h / 2, idx)
            mid, d1 = fs._match(frame, self._decompose(rho_m), self.degeneracy_tol)
            nxt, d2 = fs._match(mid, self._decompose(rho_n), self.degeneracy_tol)
            dmin = np.minimum(np.min(np.abs(d1), axis=-1), np.min(np.abs(d2), axis=-1))
            new = fs.transport_richardson(frame, mid, nxt, d1, d2)
        ok = dmin >= self.floor
        if np.all(ok):
            return rho_n, new
        bad = ~ok
        if depth >= self.max_halvings:
            worst = float(np.min(dmin[bad]))
            raise TrackingLost(
                f"eigenvector tracking lost near t = {t:.6g} (overlap {worst:.3f}); "
                f"increase the number of time steps",
                time=t, overlap=worst, suggested_steps=2 ** (depth + 1))
        sub = _frame_take(frame, bad)
        r1, f1 = self.advance(rho[bad], sub, h / 2, idx[bad], depth + 1, t)
        r2, f2 = self.advance(r1, f1, h / 2, idx[bad], depth + 1, t + h / 2)
        rho_n = rho_n.copy()
        rho_n[bad] = r2
        return rho_n, _frame_put(new, bad, f2)


def _frame_take(frame, mask):
    return fs.SpectralFrame(frame.eigenvalues[mask], frame.eigenvectors[mask],
                            frame.transport[mask])


def _frame_put(frame, mask, part):
    vals = frame.eigenvalues.copy()
    vecs = frame.eigenvectors.copy()
    tr = frame.transport.copy()
    vals[mask] = part.eigenvalues
    vecs[mask] = part.eigenvectors
    tr[mask] = part.transport
    return fs.SpectralFrame(vals, vecs, tr)


def _check_degeneracy(rho, frame, generator: Liouvillian, degeneracy_tol):
    """Raise DegenerateSpectrum for weighted degeneracies with an undetermined gauge.

    A degenerate pair is harmless when the generator keeps its eigenspace
    proportional to the identity and acts on traceless perturbations inside it
    by a pure scaling: nearby non-degenerate states then keep their eigenbasis,
    so every basis of the pair is transported trivially.  Any rotation inside
    the pair (a Hamiltonian acting on it, for example) leaves the GLOA
    dependent on an arbitrary basis choice.
    """
    w, v = frame.eigenvalues, frame.eigenvectors
    paulis = fs.SIGMA
    for i in range(w.shape[-1]):
        for j in range(i + 1, w.shape[-1]):
            bad = ((np.abs(w[..., i] - w[..., j]) < degeneracy_tol)
                   & (w[..., i] > fs.ZERO_WEIGHT_TOL) & (w[..., j] > fs.ZERO_WEIGHT_TOL))
            if not np.any(bad):
                continue
            sub = v[bad][..., [i, j]]
            subh = np.swapaxes(sub.conj(), -1, -2)
            scale = np.max(np.abs(generator.matrix[bad]), axis=(-2, -1)) + 1.0
            drift = subh @ generator.subset(bad).apply(rho[bad]) @ sub
            split = np.hypot(np.abs(drift[..., 0, 0] - drift[..., 1, 1]),
                             2 * np.abs(drift[..., 0, 1]))
            # action on the traceless perturbations, in the Pauli basis of the pair
            act = np.empty(sub.shape[:-2] + (3, 3))
            for a in range(3):
                x = sub @ paulis[a] @ subh
                y = subh @ generator.subset(bad).apply(x) @ sub
                act[..., :, a] = 0.5 * np.real(np.einsum("bij,...ji->...b", paulis, y))
            iso = np.trace(act, axis1=-2, axis2=-1)[..., None, None] / 3 * np.eye(3)
            rot = np.max(np.abs(act - iso), axis=(-2, -1))
            if np.any(split > degeneracy_tol * scale) or np.any(rot > 1e-10 * scale):
                raise DegenerateSpectrum(
                    "initial state has degenerate eigenvalues with nonzero weight "
                    f"(|p_i - p_j| < {degeneracy_tol:g}) and the dynamics does not fix "
                    "their eigenbasis")


def evolve_mode(rho0, generator: Liouvillian, grid: TimeGrid, substeps: int = 1,
                transport: str = "richardson", overlap_floor=fs.OVERLAP_FLOOR,
                max_halvings: int = 10, degeneracy_tol=fs.DEGENERACY_TOL,
                keep_states: bool = False, check: bool = True,
                gauge_rng=None) -> ModeTrajectory:
    """Propagate ``rho0`` (batched over momenta) and track its spectral frames.

    Each output step is split into ``substeps`` internal steps.  Internal steps
    on which an eigenvector overlap drops below ``overlap_floor`` are halved up
    to ``max_halvings`` times before TrackingLost is raised.  With
    ``transport="richardson"`` each internal step also visits its midpoint and
    the transport phase is extrapolated (error O(dt^4) instead of O(dt^2)).

    Raises NonPhysical if the trace drifts by more than 1e-9 or an eigenvalue
    drops below -1e-9 (``check=True``).  ``gauge_rng`` (a numpy Generator)
    multiplies every freshly computed eigenvector by a random phase, which
    the transport must undo; it exists for gauge-invariance testing.
    """
    rho = np.array(rho0, dtype=complex)
    if rho.ndim == 2:
        rho = rho[None]
    nk = rho.shape[0]
    frame0 = fs.spectral_decompose(rho, degeneracy_tol, strict=False)
    _check_degeneracy(rho, frame0, generator, degeneracy_tol)
    times = grid.times
    nt = times.size
    h = grid.dt / substeps
    stepper = _Stepper(generator, h, overlap_floor, max_halvings, transport, degeneracy_tol,
                       gauge_rng)
    idx = np.arange(nk)

    eig = np.empty((nk, nt, 4))
    ov = np.empty((nk, nt, 4), dtype=complex)
    trn = np.empty((nk, nt, 4), dtype=complex)
    bloch = np.empty((nk, nt, 3))
    etr = np.empty((nk, nt))
    dens = np.empty((nk, nt, 4, 4), dtype=complex) if keep_states else None
    vecs = np.empty((nk, nt, 4, 4), dtype=complex) if keep_states else None
    v0h = np.swapaxes(frame0.eigenvectors.conj(), -1, -2)
    max_tr = 0.0
    min_eig = np.inf

    frame = frame0
    for n in range(nt):
        if n > 0:
            for s in range(substeps):
                t = times[n - 1] + s * h
                rho, frame = stepper.advance(rho, frame, h, idx, t=t)
        eig[:, n] = frame.eigenvalues
        ov[:, n] = np.einsum("...jj->...j", v0h @ frame.eigenvectors)
        trn[:, n] = frame.transport
        blk = fs.even_block(rho)
        etr[:, n] = np.real(np.trace(blk, axis1=-2, axis2=-1))
        bloch[:, n] = fs.bloch_of_block(blk)
        if keep_states:
            dens[:, n] = rho
            vecs[:, n] = frame.eigenvectors
        tr_err = float(np.max(np.abs(np.real(np.trace(rho, axis1=-2, axis2=-1)) - 1)))
        lo = float(np.min(frame.eigenvalues))
        max_tr = max(max_tr, tr_err)
        min_eig = min(min_eig, lo)
        if check and tr_err > TRACE_TOL:
            raise NonPhysical(f"trace invariant violated at t = {times[n]:.6g} "
                              f"(|tr rho - 1| = {tr_err:.3e})")
        if check and lo < -POSITIVITY_TOL:
            raise NonPhysical(f"positivity invariant violated at t = {times[n]:.6g} "
                              f"(min eigenvalue {lo:.3e})")

    return ModeTrajectory(generator.k, times, eig, frame0.eigenvalues, ov, trn,
                          bloch, etr, max_tr, min_eig, dens, vecs)


# ------------------------------------------------------------ quench protocols

def initial_state(protocol: QuenchProtocol, k) -> np.ndarray:
    """Pre-quench density matrices at momenta ``k``.

    Thermal state of the initial Hamiltonian, or, for engineered dissipation,
    the steady state of the pre-quench Lindbladian.
    """
    spec = protocol.dissipation
    if spec is not None and spec.kind == "engineered":
        pre = spec.initial_spec()
        return steady_state(build_liouvillian(protocol.initial, k, pre))
    return fs.thermal_mode_state(protocol.initial, protocol.beta, np.asarray(k, dtype=float))


def protocol_generator(protocol: QuenchProtocol, k) -> Liouvillian:
    return build_liouvillian(protocol.final, k, protocol.dissipation)


def evolve_protocol(protocol: QuenchProtocol, k, grid: TimeGrid, substeps=None,
                    **kwargs) -> ModeTrajectory:
    """Run the quench at every momentum in ``k`` on the output grid ``grid``."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    gen = protocol_generator(protocol, k)
    if substeps is None:
        spec = protocol.dissipation
        eps = 0.0 if (spec is not None and spec.kind == "engineered") else float(
            np.max(band_energy(protocol.final, k)))
        rate = 0.0
        if spec is not None and spec.kind != "none":
            rate = spec.max_rate
            if spec.kind == "engineered":
                u, v = spec.uv(k)
                rate = max(rate, float(np.max(u ** 2 + v ** 2)))
        substeps = default_substeps(grid, eps, rate)
    return evolve_mode(initial_state(protocol, k), gen, grid, substeps=substeps, **kwargs)


def closed_form_mode_gloa(protocol: QuenchProtocol, k, t) -> np.ndarray:
    """Closed-form GLOA of a unitary finite-temperature quench.

    G_k(t) = w_- (|g|^2 e^{i eps t} + |e|^2 e^{-i eps t}) e^{i eps (|e|^2 - |g|^2) t}
           + w_+ (|e|^2 e^{i eps t} + |g|^2 e^{-i eps t}) e^{i eps (|g|^2 - |e|^2) t}
    with thermal weights w_-+ = e^{+-beta eps_i} / (2 cosh beta eps_i) and eps the
    post-quench band energy.  ``k`` and ``t`` broadcast against each other.
    """
    if not protocol.unitary:
        raise ValueError("closed form applies to unitary protocols only")
    k = np.asarray(k, dtype=float)
    t = np.asarray(t, dtype=float)
    gsq, esq = overlap_coefficients(protocol.initial, protocol.final, k)
    eps_i = band_energy(protocol.initial, k)
    eps_f = band_energy(protocol.final, k)
    w_lo = 0.5 * (1.0 + np.tanh(protocol.beta * eps_i))
    w_hi = 1.0 - w_lo
    ph = np.exp(1j * eps_f * t)
    ph_c = np.conj(ph)
    dyn = np.exp(1j * eps_f * (esq - gsq) * t)
    return (w_lo * (gsq * ph + esq * ph_c) * dyn
            + w_hi * (esq * ph + gsq * ph_c) * np.conj(dyn))
