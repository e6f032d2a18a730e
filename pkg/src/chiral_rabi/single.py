"""
Single-cavity chiral Rabi model.

    H = (omega0/2) sigma_z + omega_c (a^dag a + b^dag b) + g sigma_+ (a + b^dag) + h.c.

The Hamiltonian is block diagonal in the sectors of ``L_z``; each block is
a real symmetric band matrix in the basis of :mod:`chiral_rabi.hilbert`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .hilbert import E, G, ModelParams, SingleSectorBasis, build_single_sector_basis
from .numerics import EigenSolution, SolverError, dense_eigensolve, krylov_evolve

log = logging.getLogger(__name__)


class ConvergenceError(SolverError):
    def __init__(self, msg, drift):
        super().__init__(msg)
        self.drift = drift


class TruncationError(SolverError):
    """The state leaks onto the truncation surface of the sector basis."""


def assemble_single_hamiltonian(params: ModelParams, basis: SingleSectorBasis) -> sp.csr_matrix:
    """Sector Hamiltonian as a real symmetric CSR matrix.

    Couplings to partner states outside the basis are dropped.
    """
    l = basis.l
    w0, wc, g = params.omega0, params.omega_c, params.g
    dim = basis.dim
    diag = np.empty(dim)
    rows, cols, vals = [], [], []
    for i, (branch, n) in enumerate(basis.states):
        if branch == G:
            diag[i] = wc * (2 * n + l) - w0 / 2
            # sigma_+ a : |g, n+l, n> -> |e, n+l-1, n>
            j = basis.index(E, n)
            if j is not None and g != 0:
                rows.append(j)
                cols.append(i)
                vals.append(g * np.sqrt(n + l))
            # sigma_+ b^dag : |g, n+l, n> -> |e, n+l, n+1>
            j = basis.index(E, n + 1)
            if j is not None and g != 0:
                rows.append(j)
                cols.append(i)
                vals.append(g * np.sqrt(n + 1))
        else:
            diag[i] = wc * (2 * n + l - 1) + w0 / 2
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=float)
    H = sp.coo_matrix(
        (
            np.concatenate([diag, vals, vals]),
            (np.concatenate([np.arange(dim), rows, cols]), np.concatenate([np.arange(dim), cols, rows])),
        ),
        shape=(dim, dim),
    ).tocsr()
    H.eliminate_zeros()
    return H


def sector_spectrum(
    params: ModelParams,
    l: int,
    n_max: Optional[int] = None,
    k: int = 10,
    tol: float = 1e-10,
    step: int = 10,
    n_max_ceiling: int = 1000,
) -> EigenSolution:
    """Full spectrum of sector ``l`` with a truncation-convergence certificate.

    The lowest ``k`` energies must move by less than ``tol`` when ``n_max``
    grows by ``step``; ``n_max`` is increased until that holds.  The returned
    solution belongs to the certified ``n_max`` and carries ``drift``,
    ``n_max`` and ``certified_levels`` in its metadata.
    """
    n = 40 if n_max is None else int(n_max)
    while True:
        basis = build_single_sector_basis(l, n)
        sol = dense_eigensolve(assemble_single_hamiltonian(params, basis))
        bigger = build_single_sector_basis(l, n + step)
        ref = np.linalg.eigvalsh(assemble_single_hamiltonian(params, bigger).toarray())
        kk = min(k, len(sol.energies))
        drift = float(np.max(np.abs(sol.energies[:kk] - ref[:kk]), initial=0.0))
        if drift < tol:
            break
        if n >= n_max_ceiling:
            raise ConvergenceError(
                f"sector l={l}: lowest {kk} levels drift by {drift:.3e} between n_max={n} and {n + step}",
                drift,
            )
        n = min(n_max_ceiling, int(1.5 * n) + step)
    sol.basis = basis
    sol.metadata.update(sector=l, n_max=n, drift=drift, certified_levels=kk, model="single")
    return sol


# ---------------------------------------------------------------------------
# states and observables
# ---------------------------------------------------------------------------


@dataclass
class SectorState:
    """Amplitudes over a sector basis, optionally stamped with a time."""

    basis: object
    amplitudes: np.ndarray
    time: Optional[float] = None

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes)
        if self.amplitudes.shape != (len(self.basis),):
            raise ValueError(f"amplitudes of length {self.amplitudes.shape} do not match basis of {len(self.basis)}")

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    @classmethod
    def basis_state(cls, basis: SingleSectorBasis, branch: int, n: int) -> "SectorState":
        idx = basis.index(branch, n)
        if idx is None:
            raise ValueError(f"state ({branch}, {n}) not in sector l={basis.l}")
        amps = np.zeros(len(basis), dtype=complex)
        amps[idx] = 1.0
        return cls(basis, amps)


StateLike = Union[SectorState, Sequence[SectorState], Mapping]


@dataclass
class ObservableRecord:
    pop_e: float
    sigma_z: float
    n_a: float
    n_b: float
    m_ab: complex
    var_xa: float
    var_xb: float
    covar_xx: float
    var_sum: float
    var_diff: float
    var_p_sum: float
    var_p_diff: float
    entropy: float
    cumulant3: float
    lz: float
    norm: float
    first_moments: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k not in ("first_moments", "m_ab")}
        out["m_ab_re"] = float(np.real(self.m_ab))
        out["m_ab_im"] = float(np.imag(self.m_ab))
        return out


class _FockArrays:
    """Flat (tls, n_a, n_b, amplitude) representation with key lookup."""

    def __init__(self, tls, na, nb, amp):
        self.tls = np.asarray(tls, dtype=np.int64)
        self.na = np.asarray(na, dtype=np.int64)
        self.nb = np.asarray(nb, dtype=np.int64)
        self.amp = np.asarray(amp, dtype=complex)
        self._K = int(max(self.na.max(initial=0), self.nb.max(initial=0))) + 3
        keys = self._key(self.tls, self.na, self.nb)
        if len(np.unique(keys)) != len(keys):
            raise ValueError("duplicate Fock states in superposition")
        self._order = np.argsort(keys)
        self._sorted = keys[self._order]

    def _key(self, tls, na, nb):
        return (tls * self._K + na) * self._K + nb

    def amplitude_at(self, tls, na, nb) -> np.ndarray:
        """Amplitudes of the given Fock labels (0 where absent or invalid)."""
        out = np.zeros(len(na), dtype=complex)
        valid = (na >= 0) & (nb >= 0) & (na < self._K) & (nb < self._K)
        keys = self._key(tls[valid], na[valid], nb[valid])
        pos = np.searchsorted(self._sorted, keys)
        pos = np.minimum(pos, len(self._sorted) - 1)
        hit = self._sorted[pos] == keys
        vals = np.zeros(len(keys), dtype=complex)
        vals[hit] = self.amp[self._order[pos[hit]]]
        out[valid] = vals
        return out

    def lowering(self, pa: int, pb: int) -> complex:
        """<a^pa b^pb> with pa, pb >= 0."""
        coef = np.ones(len(self.amp))
        for j in range(pa):
            coef = coef * np.sqrt(np.clip(self.na - j, 0, None))
        for j in range(pb):
            coef = coef * np.sqrt(np.clip(self.nb - j, 0, None))
        bra = self.amplitude_at(self.tls, self.na - pa, self.nb - pb)
        return complex(np.sum(np.conj(bra) * coef * self.amp))

    def hop_b_to_a(self) -> complex:
        """<a^dag b>."""
        coef = np.sqrt((self.na + 1) * self.nb)
        bra = self.amplitude_at(self.tls, self.na + 1, self.nb - 1)
        return complex(np.sum(np.conj(bra) * coef * self.amp))

    def sigma_minus(self) -> complex:
        """<sigma_-> = sum conj(amp(g, n_a, n_b)) amp(e, n_a, n_b)."""
        bra = self.amplitude_at(np.zeros_like(self.tls), self.na, self.nb)
        mask = self.tls == E
        return complex(np.sum(np.conj(bra[mask]) * self.amp[mask]))


def _as_state_list(state: StateLike) -> list:
    if isinstance(state, SectorState):
        return [state]
    if isinstance(state, Mapping):
        raise TypeError("pass SectorState objects; use embed_fock_amplitudes for mappings")
    return list(state)


def _fock_arrays(states: list) -> _FockArrays:
    tls, na, nb, amp = [], [], [], []
    for st in states:
        labels = np.array(st.basis.fock_labels(), dtype=np.int64).reshape(-1, 3)
        tls.append(labels[:, 0])
        na.append(labels[:, 1])
        nb.append(labels[:, 2])
        amp.append(np.asarray(st.amplitudes, dtype=complex))
    return _FockArrays(np.concatenate(tls), np.concatenate(na), np.concatenate(nb), np.concatenate(amp))


def _entropy_bits(p_g: float, p_e: float, coherence: complex = 0.0) -> float:
    if coherence == 0:
        lam = np.array([p_g, p_e])
    else:
        lam = np.linalg.eigvalsh(np.array([[p_g, coherence], [np.conj(coherence), p_e]]))
    lam = lam[lam > 0]
    return float(-np.sum(lam * np.log2(lam)))


def observables(state: StateLike, norm_tol: float = 1e-9) -> ObservableRecord:
    """Populations, normally ordered quadrature moments, entropy and cumulant.

    Accepts one ``SectorState`` or a list of them (a superposition over
    different sectors).  All moments are evaluated from the Fock-basis
    amplitudes, so the vanishing first moments of sector states are computed,
    not assumed.
    """
    states = _as_state_list(state)
    fa = _fock_arrays(states)
    p = np.abs(fa.amp) ** 2
    norm2 = float(p.sum())
    if abs(np.sqrt(norm2) - 1.0) > norm_tol:
        raise ValueError(f"state is not normalized (norm {np.sqrt(norm2):.12g})")
    sz = np.where(fa.tls == E, 1.0, -1.0)
    pop_e = float(p[fa.tls == E].sum())
    n_a = float(p @ fa.na)
    n_b = float(p @ fa.nb)
    a1 = fa.lowering(1, 0)
    b1 = fa.lowering(0, 1)
    a2 = fa.lowering(2, 0)
    b2 = fa.lowering(0, 2)
    ab = fa.lowering(1, 1)
    adb = fa.hop_b_to_a()

    # normally ordered second moments of X = (a + a^dag)/2, P = i(a^dag - a)/2
    xa, xb = a1.real, b1.real
    pa, pb = a1.imag, b1.imag
    var_xa = (2 * a2.real + 2 * n_a) / 4 - xa**2
    var_xb = (2 * b2.real + 2 * n_b) / 4 - xb**2
    var_pa = (2 * n_a - 2 * a2.real) / 4 - pa**2
    var_pb = (2 * n_b - 2 * b2.real) / 4 - pb**2
    covar_xx = (2 * ab.real + 2 * adb.real) / 4 - xa * xb
    covar_pp = -(2 * ab.real - 2 * adb.real) / 4 - pa * pb

    s_minus = fa.sigma_minus()
    entropy = _entropy_bits(float(p[fa.tls == G].sum()), pop_e, s_minus)

    nanb = fa.na * fa.nb
    e_sz = p @ sz
    cumulant3 = (
        p @ (sz * nanb)
        - (p @ (sz * fa.na)) * n_b
        - e_sz * (p @ nanb)
        - (p @ (sz * fa.nb)) * n_a
        + 2 * e_sz * n_b * n_a
    )
    lz = float(p @ (fa.na - fa.nb + sz / 2))
    return ObservableRecord(
        pop_e=pop_e,
        sigma_z=float(e_sz),
        n_a=n_a,
        n_b=n_b,
        m_ab=ab,
        var_xa=float(var_xa),
        var_xb=float(var_xb),
        covar_xx=float(covar_xx),
        var_sum=float(var_xa + var_xb + 2 * covar_xx),
        var_diff=float(var_xa + var_xb - 2 * covar_xx),
        var_p_sum=float(var_pa + var_pb + 2 * covar_pp),
        var_p_diff=float(var_pa + var_pb - 2 * covar_pp),
        entropy=entropy,
        cumulant3=float(cumulant3),
        lz=lz,
        norm=float(np.sqrt(norm2)),
        first_moments={"a": a1, "b": b1, "a2": a2, "b2": b2, "adag_b": adb, "sigma_minus": s_minus},
    )


def entanglement_entropy(state: StateLike) -> float:
    """TLS-cavity entanglement entropy in bits."""
    states = _as_state_list(state)
    fa = _fock_arrays(states)
    p = np.abs(fa.amp) ** 2
    if abs(np.sqrt(p.sum()) - 1.0) > 1e-9:
        raise ValueError("state is not normalized")
    p_e = float(p[fa.tls == E].sum())
    p_g = float(p[fa.tls == G].sum())
    return _entropy_bits(p_g, p_e, fa.sigma_minus())


def eigenstate(sol: EigenSolution, index: int = 0) -> SectorState:
    return SectorState(sol.basis, sol.vectors[:, index])


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------


@dataclass
class TimeSeries:
    """Observables on a time grid (times in units of 1/omega0)."""

    times: np.ndarray
    columns: dict
    metadata: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.columns[name]

    @classmethod
    def from_records(cls, times, records: Sequence[dict], **metadata):
        names = list(records[0].keys()) if records else []
        cols = {k: np.array([r[k] for r in records]) for k in names}
        return cls(np.asarray(times, dtype=float), cols, metadata)


def embed_fock_amplitudes(amplitudes: Mapping, n_max: int, lost_tol: float = 1e-6) -> list:
    """Split ``{(tls, n_a, n_b): amp}`` into sector states on ``n_max`` bases.

    Raises ``TruncationError`` when the weight that does not fit exceeds
    ``lost_tol`` in norm.
    """
    by_sector: dict = {}
    for (tls, na, nb), amp in amplitudes.items():
        l = na - nb + tls
        by_sector.setdefault(l, []).append((tls, nb, amp))
    states, lost = [], 0.0
    for l in sorted(by_sector):
        basis = build_single_sector_basis(l, n_max)
        vec = np.zeros(len(basis), dtype=complex)
        for tls, nb, amp in by_sector[l]:
            idx = basis.index(tls, nb)
            if idx is None:
                lost += abs(amp) ** 2
            else:
                vec[idx] += amp
        states.append(SectorState(basis, vec))
    if np.sqrt(lost) > lost_tol:
        raise TruncationError(f"initial state has norm {np.sqrt(lost):.3e} outside the truncated space")
    return states


def _split_initial(initial, n_max) -> list:
    if isinstance(initial, Mapping):
        if n_max is None:
            raise ValueError("n_max is required for Fock-amplitude initial states")
        return embed_fock_amplitudes(initial, n_max)
    states = _as_state_list(initial)
    sectors = [st.basis.l for st in states]
    if len(set(sectors)) != len(sectors):
        raise ValueError("superposition lists each sector at most once")
    return states


def spectral_evolve(
    params: ModelParams,
    initial,
    times,
    n_max: Optional[int] = None,
    edge_tol: float = 1e-10,
    edge_width: int = 5,
) -> TimeSeries:
    """Evolve through the eigendecomposition of every occupied sector.

    ``psi(t) = sum_m exp(-i E_m t) |m><m|psi(0)>`` per sector.  The weight on
    the ``edge_width`` highest b-photon numbers is monitored and a
    ``TruncationError`` raised if it ever exceeds ``edge_tol``.

    Returns a ``TimeSeries`` with one column per observable plus ``energy``.
    """
    states = _split_initial(initial, n_max)
    times = np.asarray(times, dtype=float)
    total_norm = np.sqrt(sum(st.norm**2 for st in states))
    if abs(total_norm - 1.0) > 1e-9:
        raise ValueError(f"initial state is not normalized (norm {total_norm!r})")

    evolved = []
    for st in states:
        basis = st.basis
        H = assemble_single_hamiltonian(params, basis)
        sol = dense_eigensolve(H)
        coeff = sol.vectors.T @ st.amplitudes
        phases = np.exp(-1j * np.outer(sol.energies, times))
        psi_t = sol.vectors @ (phases * coeff[:, None])
        edge = basis.n >= basis.n_max - edge_width + 1
        if basis.n_max >= edge_width:
            leak = float(np.max(np.sum(np.abs(psi_t[edge]) ** 2, axis=0), initial=0.0))
            if leak > edge_tol:
                raise TruncationError(
                    f"sector l={basis.l}: weight {leak:.3e} reaches the truncation edge n_max={basis.n_max}"
                )
        evolved.append((basis, H, psi_t))

    records = []
    for it, t in enumerate(times):
        snap = [SectorState(b, psi[:, it], time=t) for b, _, psi in evolved]
        rec = observables(snap).as_dict()
        rec["energy"] = float(sum(np.real(np.vdot(psi[:, it], H @ psi[:, it])) for _, H, psi in evolved))
        records.append(rec)
    return TimeSeries.from_records(times, records, method="spectral", g=params.g)


def krylov_evolve_single(
    params: ModelParams, initial, times, n_max: Optional[int] = None, err_tol: float = 1e-10
) -> TimeSeries:
    """Same contract as ``spectral_evolve`` but via Krylov propagation (cross-check route)."""
    states = _split_initial(initial, n_max)
    times = np.asarray(times, dtype=float)
    runs = []
    for st in states:
        H = assemble_single_hamiltonian(params, st.basis)
        nrm = st.norm
        traj = [psi * nrm for _, psi in krylov_evolve(H, st.amplitudes / nrm, times, err_tol=err_tol)] if nrm > 0 else [
            np.zeros(len(st.basis), complex) for _ in times
        ]
        runs.append((st.basis, H, traj))
    records = []
    for it, t in enumerate(times):
        snap = [SectorState(b, traj[it], time=t) for b, _, traj in runs]
        rec = observables(snap).as_dict()
        rec["energy"] = float(sum(np.real(np.vdot(traj[it], H @ traj[it])) for _, H, traj in runs))
        records.append(rec)
    return TimeSeries.from_records(times, records, method="krylov", g=params.g)


def project_excited_vacuum(spectra: Mapping[int, EigenSolution]) -> dict:
    """Overlaps <m|e,0,0> of the bare excited emitter with every eigenvector.

    Only the ``l = 1`` sector contains ``|e>|0,0>``; all other sectors get
    zero vectors.
    """
    out = {}
    for l, sol in spectra.items():
        basis = sol.basis
        if basis is None:
            raise ValueError(f"spectrum of sector {l} carries no basis")
        idx = basis.index(E, 0) if basis.l == 1 else None
        if idx is None:
            out[l] = np.zeros(len(sol.energies), dtype=complex)
        else:
            out[l] = np.conj(sol.vectors[idx, :]).astype(complex)
    return out


def evolve_from_overlaps(sol: EigenSolution, overlaps: np.ndarray, times) -> list:
    """States ``sum_m exp(-i E_m t) overlap_m |m>`` for each time."""
    times = np.asarray(times, dtype=float)
    psi_t = sol.vectors @ (np.exp(-1j * np.outer(sol.energies, times)) * overlaps[:, None])
    return [SectorState(sol.basis, psi_t[:, i], time=t) for i, t in enumerate(times)]


@dataclass
class CollapseRevival:
    """Collapse windows and revival peaks of ``<sigma_z>(t)``.

    A collapse window is a maximal interval where the total photon number is
    above ``fraction`` of its maximum on the grid.  A revival is the largest
    ``<sigma_z>`` between two consecutive windows.
    """

    windows: list
    first_window_mean_abs: float
    revival_times: np.ndarray
    revival_peaks: np.ndarray
    max_after_collapse: float

    def count_revivals(self, level: float = 0.5) -> int:
        return int(np.sum(self.revival_peaks > level))


def collapse_revival(times, sigma_z, photons, fraction: float = 0.5) -> CollapseRevival:
    times = np.asarray(times, dtype=float)
    sz = np.asarray(sigma_z, dtype=float)
    above = np.asarray(photons, dtype=float) > fraction * np.max(photons)
    edges = np.flatnonzero(np.diff(above.astype(np.int8))) + 1
    bounds = np.concatenate([[0] if above[0] else [], edges, [len(times)] if above[-1] else []]).astype(int)
    windows = [(int(a), int(b)) for a, b in zip(bounds[::2], bounds[1::2])]
    if not windows:
        raise ValueError("photon number never exceeds the collapse threshold")
    a0, b0 = windows[0]
    r_t, r_v = [], []
    for (_, end), (start, _) in zip(windows[:-1], windows[1:]):
        k = end + int(np.argmax(sz[end:start]))
        r_t.append(times[k])
        r_v.append(sz[k])
    return CollapseRevival(
        windows=[(times[a], times[b - 1]) for a, b in windows],
        first_window_mean_abs=float(np.mean(np.abs(sz[a0:b0]))),
        revival_times=np.array(r_t),
        revival_peaks=np.array(r_v),
        max_after_collapse=float(np.max(sz[a0:])),
    )
