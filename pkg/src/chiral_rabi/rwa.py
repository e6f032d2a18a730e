"""
Single-excitation physics of the emitter-array model without counter-rotating terms.

In that limit the sector ``l = 1`` restricted to no b-photons holds the
excited emitter plus one a-photon anywhere on the chain, and bound states
appear outside the band ``[omega0/2 - 2J, omega0/2 + 2J]`` once
``g > sqrt(2) J``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .hilbert import ModelParams


def dispersion(k, params: ModelParams):
    """Cavity-array band ``omega_c - 2 J cos(k)``; ``k`` may be an array."""
    return params.omega_c - 2.0 * params.J * np.cos(k)


def band_edges(params: ModelParams) -> tuple[float, float]:
    """Band of a single photon with the emitter in ``|g>``, in total-energy units."""
    centre = params.omega_c - params.omega0 / 2
    return centre - 2 * params.J, centre + 2 * params.J


def bound_state_threshold(params: ModelParams) -> float:
    return float(np.sqrt(2.0) * params.J)


def rwa_bound_state_energies(params: ModelParams) -> Optional[tuple[float, float]]:
    """Continuum-limit bound-state energies ``(E_minus, E_plus)``.

    Returns ``None`` for ``g <= sqrt(2) J``, where both states have merged
    with the band.  Derived for ``omega0 == omega_c``.

    Raises
    ------
    ValueError
        If ``J == 0`` (no band) or ``omega0 != omega_c``.
    """
    if params.J == 0:
        raise ValueError("J = 0: there is no band and the bound-state formula is degenerate")
    if not np.isclose(params.omega0, params.omega_c):
        raise ValueError("the closed form assumes omega0 == omega_c")
    g, J = abs(params.g), abs(params.J)
    ratio2 = (g / J) ** 2
    if ratio2 <= 2.0:
        return None
    shift = (g * g / J) / np.sqrt(ratio2 - 1.0)
    return params.omega0 / 2 - shift, params.omega0 / 2 + shift


@dataclass
class FiniteChainSpectrum:
    energies: np.ndarray
    vectors: np.ndarray
    band: tuple[float, float]
    spacing: float
    below: np.ndarray
    above: np.ndarray

    @property
    def emitter_weight(self) -> np.ndarray:
        """Weight of the excited emitter in every eigenvector."""
        return self.vectors[0] ** 2


def sine_modes(L: int) -> np.ndarray:
    """Orthonormal standing waves of the open chain, ``U[k-1, j-1] = sqrt(2/(L+1)) sin(pi k j / (L+1))``."""
    k = np.arange(1, L + 1)
    return np.sqrt(2.0 / (L + 1)) * np.sin(np.pi * np.outer(k, k) / (L + 1))


def rwa_single_excitation_matrix(params: ModelParams, L: int, basis: str = "modes") -> np.ndarray:
    """The ``(L+1)``-dimensional matrix on ``{|e, vac>, |g, 1_k>}``.

    ``basis="modes"`` uses the standing-wave photon modes, ``basis="sites"``
    the site-resolved photon; both describe the same operator.
    """
    if L < 2:
        raise ValueError("L must be >= 2")
    w0, wc, g, J = params.omega0, params.omega_c, params.g, params.J
    M = np.zeros((L + 1, L + 1))
    M[0, 0] = w0 / 2
    if basis == "modes":
        k = np.arange(1, L + 1)
        M[1:, 1:] = np.diag(wc - w0 / 2 - 2 * J * np.cos(np.pi * k / (L + 1)))
        M[0, 1:] = M[1:, 0] = g * sine_modes(L)[:, 0]
    elif basis == "sites":
        M[1:, 1:] = (wc - w0 / 2) * np.eye(L) - J * (np.eye(L, k=1) + np.eye(L, k=-1))
        M[0, 1] = M[1, 0] = g
    else:
        raise ValueError(f"unknown basis {basis!r}")
    return M


def rwa_finite_oracle(params: ModelParams, L: int, basis: str = "modes") -> FiniteChainSpectrum:
    """Dense single-excitation spectrum of a finite chain.

    A level counts as outside the band when it lies beyond an edge by more
    than the level spacing at that edge of the uncoupled chain.
    """
    M = rwa_single_excitation_matrix(params, L, basis)
    energies, vectors = np.linalg.eigh(M)
    lo, hi = band_edges(params)
    spacing = 2 * abs(params.J) * (np.cos(np.pi / (L + 1)) - np.cos(2 * np.pi / (L + 1)))
    below = energies[energies < lo - spacing]
    above = energies[energies > hi + spacing]
    return FiniteChainSpectrum(energies, vectors, (lo, hi), float(spacing), below, above)
