"""Fock space of a (k, -k) fermion pair and spectral tracking of its density matrix.

Basis ordering is (|00>, |11>, |01>, |10>) in occupations (n_k, n_-k): the
first two states span the even-parity sector, the last two the odd sector.
Jordan-Wigner ordering puts mode k first, so a_{-k} picks up (-1)^{n_k}.

Every function broadcasts over leading batch axes (typically one per momentum),
so a sweep over the Brillouin zone is a single vectorized call.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DegenerateBand, DegenerateSpectrum, NonPhysical
from .model import GAP_TOL, TwoBandModel

BASIS = ((0, 0), (1, 1), (0, 1), (1, 0))
EVEN = slice(0, 2)
ODD = slice(2, 4)

SIGMA = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)

DEGENERACY_TOL = 1e-9
ZERO_WEIGHT_TOL = 1e-12
OVERLAP_FLOOR = 0.5
# parity coherences below this norm are treated as absent
BLOCK_TOL = 1e-13


@dataclass(frozen=True)
class ModeOperators:
    a_k: np.ndarray
    a_mk: np.ndarray

    @property
    def a_k_dag(self):
        return self.a_k.conj().T

    @property
    def a_mk_dag(self):
        return self.a_mk.conj().T

    def hamiltonian(self, h) -> np.ndarray:
        return mode_hamiltonian(h)


@lru_cache(maxsize=None)
def _build_operators():
    index = {occ: i for i, occ in enumerate(BASIS)}
    a_k = np.zeros((4, 4), dtype=complex)
    a_mk = np.zeros((4, 4), dtype=complex)
    for (nk, nmk), col in index.items():
        if nk == 1:
            a_k[index[(0, nmk)], col] = 1.0
        if nmk == 1:
            a_mk[index[(nk, 0)], col] = (-1.0) ** nk
    a_k.setflags(write=False)
    a_mk.setflags(write=False)
    return a_k, a_mk


def mode_operators() -> ModeOperators:
    return ModeOperators(*_build_operators())


def mode_hamiltonian(h) -> np.ndarray:
    """Block Hamiltonian with h . sigma on the even sector and zeros on the odd one."""
    h = np.asarray(h, dtype=float)
    out = np.zeros(h.shape[:-1] + (4, 4), dtype=complex)
    out[..., EVEN, EVEN] = np.einsum("...a,aij->...ij", h, SIGMA)
    return out


def embed_even(block) -> np.ndarray:
    block = np.asarray(block)
    out = np.zeros(block.shape[:-2] + (4, 4), dtype=complex)
    out[..., EVEN, EVEN] = block
    return out


def even_block(rho) -> np.ndarray:
    return np.asarray(rho)[..., EVEN, EVEN]


def odd_block(rho) -> np.ndarray:
    return np.asarray(rho)[..., ODD, ODD]


def bloch_of_block(block) -> np.ndarray:
    """Pauli vector n of a 2x2 block normalized as tr(block)/2 (I + n . sigma)."""
    block = np.asarray(block)
    tr = np.real(np.trace(block, axis1=-2, axis2=-1))
    comps = np.real(np.einsum("aji,...ij->...a", SIGMA, block))
    with np.errstate(invalid="ignore", divide="ignore"):
        return comps / tr[..., None]


def thermal_mode_state(model: TwoBandModel, beta: float, k) -> np.ndarray:
    """Thermal state of h_k . sigma at inverse temperature ``beta`` on the even sector.

    The lower band carries weight e^{beta eps}/(2 cosh beta eps), so the even block
    is (I - tanh(beta eps) h_hat . sigma)/2; the odd sector is empty.
    """
    h = model.bloch(k)
    eps = np.linalg.norm(h, axis=-1)
    if np.any(eps <= GAP_TOL):
        raise DegenerateBand("thermal state needs a gapped initial band")
    n = -np.tanh(beta * eps)[..., None] * h / eps[..., None]
    block = 0.5 * (np.eye(2) + np.einsum("...a,aij->...ij", n, SIGMA))
    return embed_even(block)


def validate_density(rho, tol_herm=1e-12, tol_trace=1e-12, tol_pos=1e-10):
    """Raise NonPhysical unless every matrix in the stack is a density matrix."""
    rho = np.asarray(rho)
    herm = np.max(np.abs(rho - np.swapaxes(rho.conj(), -1, -2)), initial=0.0)
    if herm > tol_herm:
        raise NonPhysical(f"hermiticity violated by {herm:.3e}")
    tr = np.max(np.abs(np.trace(rho, axis1=-2, axis2=-1) - 1), initial=0.0)
    if tr > tol_trace:
        raise NonPhysical(f"trace deviates from 1 by {tr:.3e}")
    lo = np.min(np.linalg.eigvalsh(rho), initial=0.0)
    if lo < -tol_pos:
        raise NonPhysical(f"negative eigenvalue {lo:.3e}")


@dataclass(frozen=True)
class SpectralFrame:
    """Eigen-decomposition of a (batch of) density matrices.

    ``eigenvectors[..., :, j]`` is the j-th eigenvector; ``transport[..., j]`` the
    accumulated parallel-transport factor exp(-int <phi_j|d phi_j>).
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    transport: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[-1]

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return np.einsum("...ij,...j,...kj->...ik", v, self.eigenvalues, v.conj())


def _fix_phase(vecs):
    """Make the largest-magnitude component of each column real positive."""
    idx = np.argmax(np.abs(vecs), axis=-2)
    lead = np.take_along_axis(vecs, idx[..., None, :], axis=-2)
    return vecs * (np.abs(lead) / lead)


def _is_block_diagonal(rho):
    if rho.shape[-1] != 4:
        return False
    off = np.max(np.abs(rho[..., EVEN, ODD]), initial=0.0)
    return off <= BLOCK_TOL


def _eigh_desc(m):
    if m.shape[-1] == 2:
        return _eigh2(m)
    w, v = np.linalg.eigh(m)
    return w[..., ::-1], v[..., ::-1]


def _eigh2(m):
    """Closed-form descending eigen-decomposition of Hermitian 2x2 matrices."""
    a = np.real(m[..., 0, 0])
    d = np.real(m[..., 1, 1])
    b = m[..., 0, 1]
    mean = 0.5 * (a + d)
    half = 0.5 * (a - d)
    r = np.hypot(half, np.abs(b))
    w = np.stack([mean + r, mean - r], axis=-1)
    # upper eigenvector from whichever of two equivalent forms is better conditioned
    use_first = half >= 0
    x = np.where(use_first, half + r, b)
    y = np.where(use_first, np.conj(b), r - half)
    norm = np.hypot(np.abs(x), np.abs(y))
    flat = norm == 0
    norm = np.where(flat, 1.0, norm)
    x = np.where(flat, 1.0, x / norm)
    y = np.where(flat, 0.0, y / norm)
    v = np.empty(m.shape, dtype=complex)
    v[..., 0, 0] = x
    v[..., 1, 0] = y
    v[..., 0, 1] = -np.conj(y)
    v[..., 1, 1] = np.conj(x)
    return w, v


def spectral_decompose(rho, degeneracy_tol=DEGENERACY_TOL,
                       zero_weight_tol=ZERO_WEIGHT_TOL, strict=True) -> SpectralFrame:
    """Eigenvalues (descending) and eigenvectors of density matrices.

    Parity-block-diagonal 4x4 matrices are diagonalized sector by sector so
    eigenvectors never mix parities.  With ``strict`` a pair of eigenvalues
    closer than ``degeneracy_tol`` that both carry weight above
    ``zero_weight_tol`` raises DegenerateSpectrum; otherwise the degenerate
    basis is left to :func:`match_and_transport` to fix by continuity.
    """
    rho = np.asarray(rho, dtype=complex)
    rho = 0.5 * (rho + np.swapaxes(rho.conj(), -1, -2))
    n = rho.shape[-1]
    if _is_block_diagonal(rho):
        we, ve = _eigh_desc(rho[..., EVEN, EVEN])
        wo, vo = _eigh_desc(rho[..., ODD, ODD])
        w = np.concatenate([we, wo], axis=-1)
        v = np.zeros(rho.shape, dtype=complex)
        v[..., EVEN, 0:2] = ve
        v[..., ODD, 2:4] = vo
        sectors = np.array([0, 0, 1, 1])
        order = np.argsort(-w, axis=-1, kind="stable")
        w = np.take_along_axis(w, order, axis=-1)
        v = np.take_along_axis(v, order[..., None, :], axis=-1)
        sec = sectors[order]
    else:
        w, v = _eigh_desc(rho)
        sec = np.zeros(w.shape, dtype=int)
    v = _fix_phase(v)
    if strict:
        for i in range(n):
            for j in range(i + 1, n):
                bad = ((np.abs(w[..., i] - w[..., j]) < degeneracy_tol)
                       & (w[..., i] > zero_weight_tol) & (w[..., j] > zero_weight_tol)
                       & (sec[..., i] == sec[..., j]))
                if np.any(bad):
                    raise DegenerateSpectrum(
                        "density matrix has degenerate eigenvalues with nonzero weight "
                        f"(|p_i - p_j| < {degeneracy_tol:g})")
    return SpectralFrame(w, v, np.ones(w.shape, dtype=complex))


def _assign(overlap_abs):
    """Permutation perm[..., i] maximizing sum_i |O[i, perm[i]]|."""
    n = overlap_abs.shape[-1]
    perm = np.argmax(overlap_abs, axis=-1)
    counts = np.sum(perm[..., :, None] == np.arange(n), axis=-2)
    clash = np.any(counts != 1, axis=-1)
    if np.any(clash):
        flat_perm = perm.reshape(-1, n)
        flat_abs = overlap_abs.reshape(-1, n, n)
        for b in np.flatnonzero(np.ravel(clash)):
            _, cols = linear_sum_assignment(-flat_abs[b])
            flat_perm[b] = cols
        perm = flat_perm.reshape(perm.shape)
    return perm


def _align_degenerate(vals, vecs, ref_vecs, degeneracy_tol):
    """Rotate near-degenerate eigenvector pairs onto the reference frame.

    Inside a degenerate eigenspace any orthonormal basis diagonalizes rho; the
    polar factor of the overlap with the reference picks the one closest to it.
    """
    n = vals.shape[-1]
    for i in range(n):
        for j in range(i + 1, n):
            mask = np.abs(vals[..., i] - vals[..., j]) < degeneracy_tol
            if not np.any(mask):
                continue
            sub = vecs[mask][..., [i, j]]
            ref = ref_vecs[mask][..., [i, j]]
            m = np.swapaxes(sub.conj(), -1, -2) @ ref
            rotated = sub @ _polar2(m)
            upd = vecs[mask]
            upd[..., [i, j]] = rotated
            vecs[mask] = upd
    return vecs


def _polar2(m):
    """Unitary polar factor of 2x2 matrices, (M + e^{i arg det} adj(M)^dag)/(s1 + s2)."""
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    adj_h = np.empty_like(m)
    adj_h[..., 0, 0] = np.conj(m[..., 1, 1])
    adj_h[..., 0, 1] = -np.conj(m[..., 1, 0])
    adj_h[..., 1, 0] = -np.conj(m[..., 0, 1])
    adj_h[..., 1, 1] = np.conj(m[..., 0, 0])
    s = m + _unit(det)[..., None, None] * adj_h
    scale = np.sqrt(np.sum(np.abs(m) ** 2, axis=(-2, -1)) + 2 * np.abs(det))
    singular = np.abs(det) < 1e-12
    if np.any(singular):
        u, _, vh = np.linalg.svd(m[singular])
        out = s / np.where(scale > 0, scale, 1.0)[..., None, None]
        out[singular] = u @ vh
        return out
    return s / scale[..., None, None]


def _match(prev: SpectralFrame, nxt: SpectralFrame, degeneracy_tol=DEGENERACY_TOL):
    """Reorder ``nxt`` to follow ``prev``; return (reordered frame, matched overlaps)."""
    ov = np.swapaxes(prev.eigenvectors.conj(), -1, -2) @ nxt.eigenvectors
    perm = _assign(np.abs(ov))
    vals = np.take_along_axis(nxt.eigenvalues, perm, axis=-1)
    vecs = np.take_along_axis(nxt.eigenvectors, perm[..., None, :], axis=-1).copy()
    vecs = _align_degenerate(vals, vecs, prev.eigenvectors, degeneracy_tol)
    d = np.einsum("...ij,...ij->...j", prev.eigenvectors.conj(), vecs)
    return SpectralFrame(vals, vecs, prev.transport), d


def _unit(z):
    a = np.abs(z)
    return np.where(a > 0, z / np.where(a > 0, a, 1.0), 1.0)


def match_and_transport(prev: SpectralFrame, next_raw: SpectralFrame,
                        overlap_floor=OVERLAP_FLOOR,
                        degeneracy_tol=DEGENERACY_TOL) -> SpectralFrame:
    """Follow eigenvectors from ``prev`` to ``next_raw`` and update transport factors.

    Eigenvectors are matched by maximal total overlap (assignment problem), and
    each transport factor is multiplied by conj(phase <phi_j(prev)|phi_j(next)>),
    the one-step discretization of exp(-int <phi_j|d phi_j>).
    """
    from .errors import TrackingLost

    frame, d = _match(prev, next_raw, degeneracy_tol)
    worst = np.min(np.abs(d), initial=1.0)
    if worst < overlap_floor:
        raise TrackingLost(
            f"matched eigenvector overlap {worst:.3f} below floor {overlap_floor}; "
            "halve the time step", overlap=worst)
    return replace(frame, transport=prev.transport * np.conj(_unit(d)))


def transport_richardson(prev: SpectralFrame, mid: SpectralFrame, nxt: SpectralFrame,
                         d_prev_mid, d_mid_next) -> SpectralFrame:
    """Transport update over two half steps with Richardson extrapolation.

    The one-step phase error is cubic in the step; combining the two half steps
    with the direct full step cancels it.  The correction is the phase of the
    Bargmann invariant <prev|mid><mid|next><next|prev>, which is gauge invariant,
    so the result transforms exactly like the basic rule.
    """
    d_full = np.einsum("...ij,...ij->...j", prev.eigenvectors.conj(), nxt.eigenvectors)
    two = d_prev_mid * d_mid_next
    bargmann = np.angle(two * np.conj(d_full))
    factor = np.conj(_unit(two)) * np.exp(-1j * bargmann / 3.0)
    return replace(nxt, transport=prev.transport * factor)
