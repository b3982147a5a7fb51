"""Two-band Bloch Hamiltonians, quench protocols and momentum grids.

All energies are in units of the Ising coupling (J = 1, hbar = 1).  Functions
accept scalar momenta or numpy arrays and broadcast over them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateBand, InvalidGrid

# below this band energy the unit vector h/|h| is treated as undefined
GAP_TOL = 1e-12


@dataclass(frozen=True)
class TwoBandModel:
    """A family of Bloch vectors k -> h_k with H_k = h_k . sigma.

    ``kind`` is ``"tfim"`` (h_k = (0, sin k, cos k - h)) or ``"custom"``,
    in which case ``func`` maps an array of momenta to an array of shape
    ``k.shape + (3,)``.
    """

    kind: str
    params: dict = field(default_factory=dict)
    func: Optional[Callable[[np.ndarray], np.ndarray]] = field(
        default=None, compare=False, repr=False)

    @classmethod
    def tfim(cls, h: float) -> "TwoBandModel":
        return cls("tfim", {"h": float(h)})

    @classmethod
    def custom(cls, func, **params) -> "TwoBandModel":
        return cls("custom", dict(params), func)

    def __post_init__(self):
        if self.kind not in ("tfim", "custom"):
            raise ValueError(f"unknown model family {self.kind!r}")
        if self.kind == "custom" and self.func is None:
            raise ValueError("custom model needs a Bloch-vector function")

    def __hash__(self):
        return hash((self.kind, tuple(sorted(self.params.items()))))

    def bloch(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        if self.kind == "tfim":
            h = self.params["h"]
            return np.stack([np.zeros_like(k), np.sin(k), np.cos(k) - h], axis=-1)
        return np.asarray(self.func(k), dtype=float)


@dataclass(frozen=True)
class QuenchProtocol:
    """Sudden quench initial -> final starting from a thermal state at ``beta``.

    ``dissipation`` is an :class:`mixed_dqpt.evolution.DissipationSpec` or
    None for unitary dynamics.  A negative beta is a population-inverted state.
    """

    initial: TwoBandModel
    final: TwoBandModel
    beta: float
    dissipation: object = None

    def __post_init__(self):
        if not np.isfinite(self.beta):
            raise ValueError("beta must be finite; use a large |beta| for the pure-state limit")

    @property
    def unitary(self) -> bool:
        d = self.dissipation
        return d is None or getattr(d, "kind", "none") == "none"


@dataclass(frozen=True)
class KGrid:
    """Positive momenta of the (k, -k) pairs, strictly inside (0, pi)."""

    points: np.ndarray
    convention: str

    @property
    def half_count(self) -> int:
        return len(self.points)

    @property
    def L(self) -> int:
        """Number of lattice sites (degrees of freedom) represented by the grid."""
        return 2 * len(self.points)

    @property
    def spacing(self) -> float:
        return float(np.pi / len(self.points))


def make_k_grid(half_count: int, convention: str = "antiperiodic") -> KGrid:
    """Momentum grid of ``half_count`` points in (0, pi).

    ``antiperiodic``: k_m = (2m - 1) pi / L with L = 2 half_count.
    ``uniform``: k_m = m pi / (half_count + 1), equispaced interior points.
    """
    if int(half_count) != half_count or half_count < 2:
        raise InvalidGrid(f"half_count must be an integer >= 2, got {half_count!r}")
    n = int(half_count)
    m = np.arange(1, n + 1)
    if convention == "antiperiodic":
        pts = (2 * m - 1) * np.pi / (2 * n)
    elif convention == "uniform":
        pts = m * np.pi / (n + 1)
    else:
        raise InvalidGrid(f"unknown grid convention {convention!r}")
    return KGrid(pts, convention)


def bloch_vector(model: TwoBandModel, k) -> np.ndarray:
    return model.bloch(k)


def band_energy(model: TwoBandModel, k) -> np.ndarray:
    """Upper band energy eps_k = |h_k|."""
    return np.linalg.norm(model.bloch(k), axis=-1)


def unit_bloch(model: TwoBandModel, k) -> np.ndarray:
    h = model.bloch(k)
    eps = np.linalg.norm(h, axis=-1)
    if np.any(eps <= GAP_TOL):
        bad = np.atleast_1d(np.asarray(k, dtype=float))[np.atleast_1d(eps <= GAP_TOL)]
        raise DegenerateBand(f"gap closes (|h_k| = 0) at k = {bad.tolist()}")
    return h / eps[..., None]


def overlap_coefficients(initial: TwoBandModel, final: TwoBandModel, k):
    """Return (|g_k|^2, |e_k|^2) for the band overlaps of a quench.

    |g_k|^2 = (1 + n_i . n_f)/2 is the weight of the initial lower band in the
    final lower band, |e_k|^2 = (1 - n_i . n_f)/2 its weight in the final upper
    band, with n = h/|h|.
    """
    cos = np.sum(unit_bloch(initial, k) * unit_bloch(final, k), axis=-1)
    cos = np.clip(cos, -1.0, 1.0)
    return 0.5 * (1.0 + cos), 0.5 * (1.0 - cos)
