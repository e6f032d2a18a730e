"""
Model parameters, polarization couplings and angular-momentum sector bases.

Sector convention
-----------------
A sector is labelled by the integer ``l``; the eigenvalue of

    L_z = a^dag a - b^dag b + sigma_z / 2

on every state of the sector is ``l - 1/2``.  Ground-branch states carry
``n + l`` a-photons and ``n`` b-photons, excited-branch states carry
``n + l - 1`` a-photons and ``n`` b-photons.  ``n`` is always the b-photon
number and is what the truncation ``n_max`` bounds.

Lattice bases use occupation vectors instead of labelled photon indices.
Within a (branch, n) block the states are ordered lexicographically by the
a-configuration, then by the b-configuration.  Configurations of ``N``
bosons on ``L`` sites are ordered by their sorted tuple of occupied site
indices, so a photon on site 0 comes before a photon on site 1.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Optional, Sequence

import numpy as np

G = 0  # TLS ground branch
E = 1  # TLS excited branch
BRANCH_NAMES = {G: "G", E: "E"}

DEFAULT_MAX_STATES = 5_000_000


class BasisTooLargeError(ValueError):
    """Raised when a sector basis would exceed the configured state budget."""


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters in units with hbar = 1 (energies usually in units of omega0).

    ``J``, ``delta`` and ``L`` are only read by the lattice and V-level models.
    """

    omega0: float = 1.0
    omega_c: float = 1.0
    g: float = 0.0
    J: float = 0.0
    delta: float = 0.0
    L: int = 1

    def __post_init__(self):
        for name in ("omega0", "omega_c", "g", "J", "delta"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
        if self.g < 0:
            raise ValueError("g must be non-negative (its phase can be gauged into the modes)")
        if self.J < 0:
            raise ValueError("J must be non-negative (its phase can be gauged into the modes)")
        if int(self.L) != self.L or self.L < 1:
            raise ValueError(f"L must be a positive integer, got {self.L!r}")

    def replace(self, **changes) -> "ModelParams":
        values = dict(omega0=self.omega0, omega_c=self.omega_c, g=self.g,
                      J=self.J, delta=self.delta, L=self.L)
        values.update(changes)
        return ModelParams(**values)


def coupling_coefficients(d: Sequence[complex], E_field: Sequence[complex]) -> tuple[complex, complex]:
    """Rotating and counter-rotating coupling coefficients.

    Parameters
    ----------
    d : sequence of 3 complex
        Transition dipole moment.
    E_field : sequence of 3 complex
        Cavity mode field at the emitter.

    Returns
    -------
    (g_R, g_cR)
        ``g_R = d . conj(E)`` multiplies ``sigma_- a^dag``; ``g_cR = d . E``
        multiplies ``sigma_- a``.
    """
    d = np.asarray(d, dtype=complex)
    E_field = np.asarray(E_field, dtype=complex)
    if d.shape != (3,) or E_field.shape != (3,):
        raise ValueError("polarization vectors must have three components")
    if not (np.all(np.isfinite(d)) and np.all(np.isfinite(E_field))):
        raise ValueError("polarization vectors must be finite")
    g_R = complex(np.sum(d * np.conj(E_field)))
    g_cR = complex(np.sum(d * E_field))
    return g_R, g_cR


# ---------------------------------------------------------------------------
# single cavity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SingleSectorBasis:
    """Fock x TLS states of one sector of the single-cavity model.

    ``states[i] == (branch, n)``.  ``photon_cap`` optionally bounds the
    a-photon number as well, which lets the basis coincide with a
    full-space box truncation.
    """

    l: int
    n_max: int
    states: tuple
    photon_cap: Optional[int] = None
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.states)})

    @property
    def dim(self) -> int:
        return len(self.states)

    def __len__(self):
        return len(self.states)

    def index(self, branch: int, n: int) -> Optional[int]:
        return self._index.get((branch, n))

    @property
    def branch(self) -> np.ndarray:
        return np.array([s[0] for s in self.states], dtype=np.int64)

    @property
    def n(self) -> np.ndarray:
        return np.array([s[1] for s in self.states], dtype=np.int64)

    @property
    def n_a(self) -> np.ndarray:
        return self.n + self.l - self.branch

    @property
    def n_b(self) -> np.ndarray:
        return self.n

    def fock_labels(self) -> list[tuple[int, int, int]]:
        """(tls, n_a, n_b) for every state, tls 0 = g, 1 = e."""
        return [(b, n + self.l - b, n) for b, n in self.states]


def build_single_sector_basis(l: int, n_max: int, photon_cap: Optional[int] = None) -> SingleSectorBasis:
    """Enumerate the sector ``l`` with b-photon number ``n <= n_max``.

    All G states ascending in n come first, then all E states.
    """
    l = int(l)
    if n_max < 0:
        raise ValueError(f"n_max must be >= 0, got {n_max}")
    if photon_cap is not None and photon_cap < 0:
        raise ValueError("photon_cap must be >= 0")
    states = []
    for branch in (G, E):
        for n in range(n_max + 1):
            n_a = n + l - branch
            if n_a < 0:
                continue
            if photon_cap is not None and (n_a > photon_cap or n > photon_cap):
                continue
            states.append((branch, n))
    return SingleSectorBasis(l=l, n_max=int(n_max), states=tuple(states), photon_cap=photon_cap)


# ---------------------------------------------------------------------------
# lattice
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def boson_configurations(L: int, N: int, site_cap: Optional[int] = None) -> np.ndarray:
    """All occupation vectors of ``N`` bosons on ``L`` sites, shape (count, L).

    Ordered by the ascending tuple of occupied site indices.  The array is
    cached and marked read-only.
    """
    if N < 0:
        return np.zeros((0, L), dtype=np.int16)
    rows = []
    for sites in itertools.combinations_with_replacement(range(L), N):
        occ = np.bincount(np.asarray(sites, dtype=np.int64), minlength=L) if N else np.zeros(L, np.int64)
        if site_cap is not None and occ.max(initial=0) > site_cap:
            continue
        rows.append(occ)
    out = np.array(rows, dtype=np.int16).reshape(len(rows), L)
    out.setflags(write=False)
    return out


def count_configurations(L: int, N: int) -> int:
    if N < 0:
        return 0
    return math.comb(L + N - 1, N)


@dataclass(frozen=True)
class LatticeBlock:
    """States of one (branch, n) pair: the product of a- and b-configurations."""

    branch: int
    n: int
    offset: int
    a_configs: np.ndarray
    b_configs: np.ndarray

    @property
    def n_photons_a(self) -> int:
        return int(self.a_configs[0].sum()) if len(self.a_configs) else 0

    @property
    def size(self) -> int:
        return len(self.a_configs) * len(self.b_configs)


@dataclass(frozen=True)
class LatticeSectorBasis:
    """Occupation-number basis of one sector of the coupled-cavity model.

    States are stored blockwise; ``tls``, ``a_occ`` and ``b_occ`` materialize
    the flat ``(tls, a_occupations, b_occupations)`` list as arrays.
    """

    l: int
    n_max: int
    L: int
    blocks: tuple
    site_cap: Optional[int] = None

    @property
    def dim(self) -> int:
        return sum(b.size for b in self.blocks)

    def __len__(self):
        return self.dim

    def block(self, branch: int, n: int) -> Optional[LatticeBlock]:
        for b in self.blocks:
            if b.branch == branch and b.n == n:
                return b
        return None

    @cached_property
    def tls(self) -> np.ndarray:
        parts = [np.full(b.size, b.branch, dtype=np.int8) for b in self.blocks]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int8)

    @cached_property
    def a_occ(self) -> np.ndarray:
        parts = [np.repeat(b.a_configs, len(b.b_configs), axis=0) for b in self.blocks]
        return np.concatenate(parts).reshape(-1, self.L) if parts else np.zeros((0, self.L), dtype=np.int16)

    @cached_property
    def b_occ(self) -> np.ndarray:
        parts = [np.tile(b.b_configs, (len(b.a_configs), 1)) for b in self.blocks]
        return np.concatenate(parts).reshape(-1, self.L) if parts else np.zeros((0, self.L), dtype=np.int16)

    def n_b_total(self) -> np.ndarray:
        parts = [np.full(b.size, b.n, dtype=np.int64) for b in self.blocks]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)

    def state(self, i: int) -> tuple[int, tuple, tuple]:
        for b in self.blocks:
            if b.offset <= i < b.offset + b.size:
                ia, ib = divmod(i - b.offset, len(b.b_configs))
                return b.branch, tuple(int(x) for x in b.a_configs[ia]), tuple(int(x) for x in b.b_configs[ib])
        raise IndexError(i)

    def index(self, tls: int, a_occ: Sequence[int], b_occ: Sequence[int]) -> Optional[int]:
        a_occ = np.asarray(a_occ)
        b_occ = np.asarray(b_occ)
        blk = self.block(tls, int(b_occ.sum()))
        if blk is None or int(a_occ.sum()) != blk.n_photons_a:
            return None
        ia = np.flatnonzero(np.all(blk.a_configs == a_occ, axis=1))
        ib = np.flatnonzero(np.all(blk.b_configs == b_occ, axis=1))
        if len(ia) == 0 or len(ib) == 0:
            return None
        return blk.offset + int(ia[0]) * len(blk.b_configs) + int(ib[0])

    def states(self):
        """Iterate the flat state list; only sensible for small bases."""
        for i in range(self.dim):
            yield self.state(i)


def lattice_sector_dimension(L: int, l: int, n_max: int) -> int:
    """Closed-form multiset count of the sector (no site cap)."""
    total = 0
    for branch in (G, E):
        for n in range(n_max + 1):
            total += count_configurations(L, n + l - branch) * count_configurations(L, n)
    return total


def build_lattice_sector_basis(
    params: ModelParams,
    l: int,
    n_max: int,
    site_cap: Optional[int] = None,
    max_states: int = DEFAULT_MAX_STATES,
) -> LatticeSectorBasis:
    """Enumerate the lattice sector ``l`` with total b-photon number ``<= n_max``.

    Raises
    ------
    BasisTooLargeError
        If the dimension exceeds ``max_states``; the message lists the
        per-block sizes so callers can pick a smaller truncation.
    """
    L = int(params.L)
    l = int(l)
    if L < 1:
        raise ValueError("L must be >= 1")
    if n_max < 0:
        raise ValueError(f"n_max must be >= 0, got {n_max}")

    sizes = []
    for branch in (G, E):
        for n in range(n_max + 1):
            na = n + l - branch
            if na >= 0:
                sizes.append((BRANCH_NAMES[branch], n, count_configurations(L, na) * count_configurations(L, n)))
    estimate = sum(s for *_, s in sizes)
    if estimate > max_states:
        report = ", ".join(f"{b}(n={n}): {s}" for b, n, s in sizes)
        raise BasisTooLargeError(
            f"sector l={l}, L={L}, n_max={n_max} has {estimate} states "
            f"(budget {max_states}); blocks: {report}"
        )

    blocks = []
    offset = 0
    for branch in (G, E):
        for n in range(n_max + 1):
            na = n + l - branch
            if na < 0:
                continue
            a_cfg = boson_configurations(L, na, site_cap)
            b_cfg = boson_configurations(L, n, site_cap)
            if len(a_cfg) == 0 or len(b_cfg) == 0:
                continue
            blk = LatticeBlock(branch=branch, n=n, offset=offset, a_configs=a_cfg, b_configs=b_cfg)
            blocks.append(blk)
            offset += blk.size
    return LatticeSectorBasis(l=l, n_max=int(n_max), L=L, blocks=tuple(blocks), site_cap=site_cap)


@dataclass(frozen=True)
class VSectorBasis:
    """Sector of the V-level atom: branches 0 = g, 1 = |1>, 2 = |2>.

    (0, n) -> |g>|n+l, n>, (1, n) -> |1>|n+l-1, n>, (2, n) -> |2>|n+l+1, n>.
    """

    l: int
    n_max: int
    states: tuple
    photon_cap: Optional[int] = None
    _index: dict = field(default=None, repr=False, compare=False)

    A_SHIFT = {0: 0, 1: -1, 2: 1}

    def __post_init__(self):
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.states)})

    @property
    def dim(self) -> int:
        return len(self.states)

    def __len__(self):
        return len(self.states)

    def index(self, branch: int, n: int) -> Optional[int]:
        return self._index.get((branch, n))

    def fock_labels(self) -> list[tuple[int, int, int]]:
        return [(b, n + self.l + self.A_SHIFT[b], n) for b, n in self.states]


def build_v_sector_basis(l: int, n_max: int, photon_cap: Optional[int] = None) -> VSectorBasis:
    l = int(l)
    if n_max < 0:
        raise ValueError(f"n_max must be >= 0, got {n_max}")
    states = []
    for branch in (0, 1, 2):
        for n in range(n_max + 1):
            n_a = n + l + VSectorBasis.A_SHIFT[branch]
            if n_a < 0:
                continue
            if photon_cap is not None and (n_a > photon_cap or n > photon_cap):
                continue
            states.append((branch, n))
    return VSectorBasis(l=l, n_max=int(n_max), states=tuple(states), photon_cap=photon_cap)
