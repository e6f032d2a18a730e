"""
Coupled-cavity array with one chiral emitter on site 0.

    H = (omega0/2) sigma_z + omega_c sum_i (a_i^dag a_i + b_i^dag b_i)
        + g sigma_+ (a_0 + b_0^dag) + h.c.
        - J sum_i (a_i^dag a_{i+1} + b_i^dag b_{i+1}) + h.c.

Sector Hamiltonians are assembled blockwise: inside a (branch, n) block the
states are products of a- and b-configurations, so hopping is a Kronecker
sum and the emitter couples neighbouring blocks through site-0 ladder
operators.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import uniform_filter1d
from scipy.signal import find_peaks

from .hilbert import E, G, LatticeSectorBasis, ModelParams, boson_configurations, build_lattice_sector_basis
from .numerics import EigenSolution, krylov_evolve, lanczos_lowest

log = logging.getLogger(__name__)


@lru_cache(maxsize=None)
def _config_index(L: int, N: int, site_cap: Optional[int]) -> dict:
    return {tuple(int(x) for x in row): i for i, row in enumerate(boson_configurations(L, N, site_cap))}


@lru_cache(maxsize=None)
def hopping_matrix(L: int, N: int, site_cap: Optional[int] = None) -> sp.csr_matrix:
    """sum_i (c_i^dag c_{i+1} + h.c.) on the N-boson configurations, open chain."""
    cfgs = boson_configurations(L, N, site_cap)
    index = _config_index(L, N, site_cap)
    rows, cols, vals = [], [], []
    for j, occ in enumerate(cfgs):
        occ = [int(x) for x in occ]
        for i in range(L - 1):
            # c_i^dag c_{i+1}: move one boson from i+1 to i
            for src, dst in ((i + 1, i), (i, i + 1)):
                if occ[src] == 0:
                    continue
                if site_cap is not None and occ[dst] + 1 > site_cap:
                    continue
                new = list(occ)
                new[src] -= 1
                new[dst] += 1
                rows.append(index[tuple(new)])
                cols.append(j)
                vals.append(np.sqrt(occ[src]) * np.sqrt(occ[dst] + 1))
    n = len(cfgs)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


@lru_cache(maxsize=None)
def annihilate_site0(L: int, N: int, site_cap: Optional[int] = None) -> sp.csr_matrix:
    """c_0 from N-boson to (N-1)-boson configurations."""
    src = boson_configurations(L, N, site_cap)
    index = _config_index(L, N - 1, site_cap)
    rows, cols, vals = [], [], []
    for j, occ in enumerate(src):
        if occ[0] == 0:
            continue
        new = tuple(int(x) for x in occ)
        new = (new[0] - 1,) + new[1:]
        rows.append(index[new])
        cols.append(j)
        vals.append(np.sqrt(int(occ[0])))
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(index), len(src)))


def create_site0(L: int, N: int, site_cap: Optional[int] = None) -> sp.csr_matrix:
    """c_0^dag from N-boson to (N+1)-boson configurations (truncated by the cap)."""
    return annihilate_site0(L, N + 1, site_cap).T.tocsr()


def assemble_lattice_hamiltonian(
    params: ModelParams, basis: LatticeSectorBasis, counter_rotating: bool = True
) -> sp.csr_matrix:
    """Sector Hamiltonian in the occupation basis as a real symmetric CSR matrix.

    ``counter_rotating=False`` drops the ``sigma_+ b_0^dag`` term; it exists
    for RWA checks only.
    """
    L = basis.L
    cap = basis.site_cap
    w0, wc, g, J = params.omega0, params.omega_c, params.g, params.J
    blocks = basis.blocks
    if not blocks:
        return sp.csr_matrix((0, 0))
    pos = {(b.branch, b.n): k for k, b in enumerate(blocks)}
    grid = [[None] * len(blocks) for _ in blocks]

    for k, blk in enumerate(blocks):
        na = blk.n_photons_a
        nA, nB = len(blk.a_configs), len(blk.b_configs)
        zero_point = -w0 / 2 if blk.branch == G else w0 / 2
        H = sp.identity(nA * nB, format="csr") * (wc * (na + blk.n) + zero_point)
        if J != 0 and L > 1:
            hop = sp.kron(hopping_matrix(L, na, cap), sp.identity(nB), format="csr")
            hop = hop + sp.kron(sp.identity(nA), hopping_matrix(L, blk.n, cap), format="csr")
            H = H - J * hop
        grid[k][k] = H

    if g != 0:
        for blk in blocks:
            if blk.branch != G:
                continue
            na = blk.n_photons_a
            nB = len(blk.b_configs)
            # sigma_+ a_0 : G(n) -> E(n)
            k_e = pos.get((E, blk.n))
            if k_e is not None and na > 0:
                C = g * sp.kron(annihilate_site0(L, na, cap), sp.identity(nB), format="csr")
                grid[k_e][pos[(G, blk.n)]] = C
                grid[pos[(G, blk.n)]][k_e] = C.T
            # sigma_+ b_0^dag : G(n) -> E(n+1)
            k_e = pos.get((E, blk.n + 1))
            if counter_rotating and k_e is not None:
                C = g * sp.kron(sp.identity(len(blk.a_configs)), create_site0(L, blk.n, cap), format="csr")
                grid[k_e][pos[(G, blk.n)]] = C
                grid[pos[(G, blk.n)]][k_e] = C.T
    H = sp.bmat(grid, format="csr")
    H.eliminate_zeros()
    H.sort_indices()
    return H


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------


@dataclass
class LatticeObservables:
    pop_e: float
    n_a_sites: np.ndarray
    n_b_sites: np.ndarray
    lz: float
    norm: float

    @property
    def total_n_a(self) -> float:
        return float(self.n_a_sites.sum())

    @property
    def total_n_b(self) -> float:
        return float(self.n_b_sites.sum())

    def as_dict(self) -> dict:
        return {
            "pop_e": self.pop_e,
            "total_n_a": self.total_n_a,
            "total_n_b": self.total_n_b,
            "n_a_site0": float(self.n_a_sites[0]),
            "n_b_site0": float(self.n_b_sites[0]),
            "lz": self.lz,
            "norm": self.norm,
        }


def lattice_observables(basis: LatticeSectorBasis, psi: np.ndarray) -> LatticeObservables:
    """Site-resolved photon numbers, emitter population and <L_z>."""
    p = np.abs(psi) ** 2
    n_a = np.zeros(basis.L)
    n_b = np.zeros(basis.L)
    pop_e = 0.0
    lz = 0.0
    for blk in basis.blocks:
        pb = p[blk.offset : blk.offset + blk.size].reshape(len(blk.a_configs), len(blk.b_configs))
        n_a += pb.sum(axis=1) @ blk.a_configs
        n_b += pb.sum(axis=0) @ blk.b_configs
        w = float(pb.sum())
        if blk.branch == E:
            pop_e += w
        lz += w * (blk.n_photons_a - blk.n + (0.5 if blk.branch == E else -0.5))
    return LatticeObservables(pop_e=pop_e, n_a_sites=n_a, n_b_sites=n_b, lz=lz, norm=float(np.sqrt(p.sum())))


@dataclass
class LatticeGroundState:
    energy: float
    solution: EigenSolution
    basis: LatticeSectorBasis
    observables: LatticeObservables
    boundary_contaminated: bool

    @property
    def vector(self) -> np.ndarray:
        return self.solution.vectors[:, 0]


def boundary_contaminated(n_a_sites: np.ndarray, rel: float = 1e-4) -> bool:
    """True when the far-boundary a-photon number exceeds ``rel`` of its maximum."""
    peak = float(np.max(n_a_sites, initial=0.0))
    return peak > 0 and float(n_a_sites[-1]) > rel * peak


def lattice_ground_state(
    params: ModelParams,
    l: int,
    n_max: int = 2,
    tol: Optional[float] = None,
    v0: Optional[np.ndarray] = None,
    basis: Optional[LatticeSectorBasis] = None,
    H: Optional[sp.csr_matrix] = None,
) -> LatticeGroundState:
    """Lowest eigenpair of a lattice sector by Lanczos, with observables."""
    if basis is None:
        basis = build_lattice_sector_basis(params, l, n_max)
    if H is None:
        H = assemble_lattice_hamiltonian(params, basis)
    sol = lanczos_lowest(H, k=1, tol=tol, v0=v0, sector=l, n_max=n_max, L=params.L)
    sol.basis = basis
    obs = lattice_observables(basis, sol.vectors[:, 0])
    return LatticeGroundState(
        energy=float(sol.energies[0]),
        solution=sol,
        basis=basis,
        observables=obs,
        boundary_contaminated=boundary_contaminated(obs.n_a_sites),
    )


# ---------------------------------------------------------------------------
# quench
# ---------------------------------------------------------------------------


@dataclass
class QuenchResult:
    """Observables after releasing |e>|vacuum>; ``times`` in units of 1/omega0."""

    times: np.ndarray
    gt: np.ndarray
    n_a_sites: np.ndarray
    n_b_sites: np.ndarray
    pop_e: np.ndarray
    total_n_a: np.ndarray
    total_n_b: np.ndarray
    n_a_site0: np.ndarray
    n_b_site0: np.ndarray
    norm: np.ndarray
    lz: np.ndarray
    energy: np.ndarray
    overlap_with_ground: float
    final_overlap_with_ground: float
    ground_energy: float
    metadata: dict = field(default_factory=dict)


def excited_vacuum(basis: LatticeSectorBasis) -> np.ndarray:
    if basis.l != 1:
        raise ValueError("|e>|vacuum> lives in sector l = 1")
    psi = np.zeros(basis.dim, dtype=complex)
    psi[basis.index(E, [0] * basis.L, [0] * basis.L)] = 1.0
    return psi


def lattice_quench(
    params: ModelParams,
    times,
    n_max: int = 2,
    l: int = 1,
    err_tol: float = 1e-8,
    krylov_dim: int = 30,
    basis: Optional[LatticeSectorBasis] = None,
    ground_tol: Optional[float] = None,
    counter_rotating: bool = True,
) -> QuenchResult:
    """Krylov dynamics from |e>|0,0> in sector ``l = 1``.

    ``overlap_with_ground`` is |<e, 0 0 | ground>|^2 of the sector ground
    state; ``final_overlap_with_ground`` is |<ground | psi(t_final)>|^2.
    """
    if l != 1:
        raise ValueError("the quench starts from |e>|vacuum>, which lives in sector l = 1")
    times = np.asarray(times, dtype=float)
    if basis is None:
        basis = build_lattice_sector_basis(params, l, n_max)
    H = assemble_lattice_hamiltonian(params, basis, counter_rotating=counter_rotating)
    psi0 = excited_vacuum(basis)
    ground = lanczos_lowest(H, k=1, tol=ground_tol)
    gvec = ground.vectors[:, 0]

    rows = []
    psi = psi0
    for t, psi in krylov_evolve(H, psi0, times, err_tol=err_tol, m=krylov_dim):
        obs = lattice_observables(basis, psi)
        rows.append((obs, float(np.real(np.vdot(psi, H @ psi)))))
    n_a_sites = np.array([o.n_a_sites for o, _ in rows])
    n_b_sites = np.array([o.n_b_sites for o, _ in rows])
    return QuenchResult(
        times=times,
        gt=params.g * times,
        n_a_sites=n_a_sites,
        n_b_sites=n_b_sites,
        pop_e=np.array([o.pop_e for o, _ in rows]),
        total_n_a=n_a_sites.sum(axis=1),
        total_n_b=n_b_sites.sum(axis=1),
        n_a_site0=n_a_sites[:, 0],
        n_b_site0=n_b_sites[:, 0],
        norm=np.array([o.norm for o, _ in rows]),
        lz=np.array([o.lz for o, _ in rows]),
        energy=np.array([e for _, e in rows]),
        overlap_with_ground=float(abs(np.vdot(gvec, psi0)) ** 2),
        final_overlap_with_ground=float(abs(np.vdot(gvec, psi)) ** 2),
        ground_energy=float(ground.energies[0]),
        metadata={"L": params.L, "n_max": n_max, "g": params.g, "J": params.J, "dim": basis.dim,
                  "err_tol": err_tol, "counter_rotating": counter_rotating},
    )


# ---------------------------------------------------------------------------
# coupling sweeps and phase labels
# ---------------------------------------------------------------------------


def band_bottom_spacing(params: ModelParams) -> float:
    """Gap between the two lowest standing waves of the bare chain."""
    L = params.L
    return float(2 * abs(params.J) * (np.cos(np.pi / (L + 1)) - np.cos(2 * np.pi / (L + 1))))


def binding_threshold(params: ModelParams, e0: float) -> float:
    """Lowest l = 1 energy without a bound state: l = 0 ground state plus one band-bottom photon."""
    return float(e0 + params.omega_c - 2 * params.J * np.cos(np.pi / (params.L + 1)))


@dataclass
class GroundSweepPoint:
    g: float
    energies: dict
    observables: dict
    boundary_contaminated: dict
    residuals: dict


def lattice_ground_sweep(
    params: ModelParams,
    g_values,
    n_max: int = 2,
    sectors=(0, 1),
    tol: Optional[float] = None,
) -> list[GroundSweepPoint]:
    """Ground states of several sectors along a coupling grid.

    The Hamiltonian is affine in ``g``, so every sector is assembled twice
    and interpolated; each solve is warm-started from the previous point.
    """
    work = {}
    for l in sectors:
        basis = build_lattice_sector_basis(params, l, n_max)
        H0 = assemble_lattice_hamiltonian(params.replace(g=0.0), basis)
        V = assemble_lattice_hamiltonian(params.replace(g=1.0), basis) - H0
        work[l] = [basis, H0, V, None]
    out = []
    for g in g_values:
        p = params.replace(g=float(g))
        energies, obs, flags, res = {}, {}, {}, {}
        for l in sectors:
            basis, H0, V, v0 = work[l]
            gs = lattice_ground_state(p, l, n_max, tol=tol, v0=v0, basis=basis, H=H0 + float(g) * V)
            work[l][3] = gs.vector
            energies[l] = gs.energy
            obs[l] = gs.observables
            flags[l] = gs.boundary_contaminated
            res[l] = float(gs.solution.residuals[0])
        out.append(GroundSweepPoint(float(g), energies, obs, flags, res))
        log.info("g=%.4f energies=%s", g, energies)
    return out


def curvature_peak(x, y) -> float:
    """Grid point of the largest positive second difference of ``y``.

    On a uniform grid this is where a smooth onset bends most sharply.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 3:
        raise ValueError("need at least three points")
    d2 = y[2:] - 2 * y[1:-1] + y[:-2]
    return float(x[1:-1][int(np.argmax(d2))])


def beating_maxima(t, y, window: float = 5.0, margin: float = 0.05) -> np.ndarray:
    """Indices of local maxima of ``y`` that rise ``margin`` above its running mean.

    The running mean over ``window`` (same units as ``t``, uniform grid)
    serves as the local envelope; the initial point is never counted.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    width = max(1, int(round(window / (t[1] - t[0]))))
    envelope = uniform_filter1d(y, size=width, mode="nearest")
    peaks, _ = find_peaks(y)
    return peaks[y[peaks] > envelope[peaks] + margin]


def tail_mean(t, y, width: float = 5.0) -> float:
    """Mean of ``y`` over the last ``width`` of the time grid."""
    t = np.asarray(t, dtype=float)
    return float(np.mean(np.asarray(y)[t >= t[-1] - width]))


@dataclass
class PhaseLabel:
    """Phase of the l = 1 sector; ``ambiguous`` marks labels inside the resolution window."""

    label: str
    ambiguous: bool
    diagnostics: dict
    reason: str = ""

    def __post_init__(self):
        if self.label not in ("I", "II", "III"):
            raise ValueError(f"unknown phase {self.label!r}")


def upper_single_cavity_level(params: ModelParams, dg: float = 1e-3) -> tuple[float, float]:
    """Second l = 1 single-cavity level and its slope in ``g`` (central difference)."""
    from .single import sector_spectrum

    def level(g):
        return float(sector_spectrum(params.replace(g=g, J=0.0, L=1), 1, k=4).energies[1])

    g = params.g
    lo = max(g - dg, 0.0)
    slope = (level(g + dg) - level(lo)) / (g + dg - lo)
    return level(g), slope


def classify_phase(
    params: ModelParams,
    e1: Optional[float] = None,
    e0: Optional[float] = None,
    boundary_flag: Optional[bool] = None,
    n_max: int = 2,
    upper_margin: float = 1e-3,
) -> PhaseLabel:
    """Label the l = 1 sector as phase I, II or III.

    Phase I has no bound l = 1 ground state.  Binding is measured against
    :func:`binding_threshold`; the ground state counts as bound when it lies
    more than the band-bottom level spacing below the threshold and its
    photons do not reach the far boundary, as unbound when neither holds,
    and is flagged ambiguous otherwise.

    Among bound cases, phase III is where the upper bound state has fallen
    back into the band, estimated from the second single-cavity l = 1 level:
    below the band top ``omega0/2 + 2J`` while decreasing in ``g``.  Cases
    within ``upper_margin`` of the band top are flagged ambiguous.

    ``e1``, ``e0`` and ``boundary_flag`` are computed when not supplied.
    """
    if e1 is None or e0 is None or boundary_flag is None:
        gs1 = lattice_ground_state(params, 1, n_max)
        gs0 = lattice_ground_state(params, 0, n_max)
        e1, e0, boundary_flag = gs1.energy, gs0.energy, gs1.boundary_contaminated
    threshold = binding_threshold(params, e0)
    spacing = band_bottom_spacing(params)
    binding = threshold - e1
    band_top = params.omega0 / 2 + 2 * params.J
    diag = {
        "e_l1": float(e1),
        "e_l0": float(e0),
        "threshold": threshold,
        "binding": float(binding),
        "resolution": spacing,
        "boundary_contaminated": bool(boundary_flag),
        "band_top": band_top,
    }
    bound_by_energy = binding > spacing
    if not bound_by_energy and boundary_flag:
        return PhaseLabel("I", False, diag, "ground state extended and within resolution of the threshold")
    if bound_by_energy != (not boundary_flag):
        guess = "I" if not bound_by_energy else "II"
        return PhaseLabel(guess, True, diag, "energy and localization criteria disagree")

    upper, slope = upper_single_cavity_level(params)
    diag.update(upper_level=upper, upper_slope=slope)
    if abs(upper - band_top) <= upper_margin:
        label = "III" if slope < 0 and upper < band_top else "II"
        return PhaseLabel(label, True, diag, "upper level within margin of the band top")
    if upper < band_top and slope < 0:
        return PhaseLabel("III", False, diag, "upper level has re-entered the band")
    return PhaseLabel("II", False, diag, "bound ground state and upper level outside the band")
