"""
Brute-force full-Hilbert-space references.

These build the Hamiltonians from tensor products of truncated ladder
operators, with no knowledge of the sector bases, diagonalize them densely
and sort the eigenvectors into sectors by their conserved charge.  They are
meant for small truncations and for tests.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .hilbert import ModelParams
from .numerics import EigenSolution, SolverError, canonicalize_phases


class OracleConsistencyError(SolverError):
    """An eigenvector could not be assigned to a single charge sector."""


def destroy(cap: int) -> sp.csr_matrix:
    return sp.diags(np.sqrt(np.arange(1, cap + 1, dtype=float)), 1, shape=(cap + 1, cap + 1), format="csr")


def _kron_all(ops):
    out = ops[0]
    for op in ops[1:]:
        out = sp.kron(out, op, format="csr")
    return out


@dataclass
class FullSpaceModel:
    """A full-space Hamiltonian with the diagonal of its conserved charge."""

    hamiltonian: sp.csr_matrix
    charge: np.ndarray
    labels: list

    def index_of(self) -> dict:
        return {lab: i for i, lab in enumerate(self.labels)}

    def offblock_norm(self) -> float:
        """Largest |H_ij| between states of different charge."""
        H = self.hamiltonian.tocoo()
        mask = ~np.isclose(self.charge[H.row], self.charge[H.col])
        return float(np.abs(H.data[mask]).max(initial=0.0))

    def restrict(self, labels) -> sp.csr_matrix:
        """Rows/columns of the given states, in the given order."""
        idx = self.index_of()
        sel = np.array([idx[lab] for lab in labels], dtype=np.int64)
        return self.hamiltonian[sel][:, sel].tocsr()


@dataclass
class OracleSolution(EigenSolution):
    charges: np.ndarray = None
    sectors: np.ndarray = None
    model: FullSpaceModel = None

    def sector_energies(self, sector: int) -> np.ndarray:
        return self.energies[self.sectors == sector]


def two_mode_model(params: ModelParams, photon_cap: int) -> FullSpaceModel:
    """Chiral Rabi Hamiltonian on TLS x a x b with n_a, n_b <= photon_cap."""
    c = photon_cap
    a1 = destroy(c)
    I = sp.identity(c + 1, format="csr")
    I2 = sp.identity(2, format="csr")
    # TLS order (g, e)
    sz = sp.diags([-1.0, 1.0], format="csr")
    sp_ = sp.csr_matrix(([1.0], ([1], [0])), shape=(2, 2))
    a = _kron_all([I2, a1, I])
    b = _kron_all([I2, I, a1])
    s_plus = _kron_all([sp_, I, I])
    V = params.g * s_plus @ (a + b.T)
    H = (0.5 * params.omega0 * _kron_all([sz, I, I]) + params.omega_c * (a.T @ a + b.T @ b) + V + V.T).tocsr()
    labels = [(t, na, nb) for t in range(2) for na in range(c + 1) for nb in range(c + 1)]
    lab = np.array(labels)
    charge = lab[:, 1] - lab[:, 2] + np.where(lab[:, 0] == 1, 0.5, -0.5)
    return FullSpaceModel(H, charge.astype(float), labels)


def v_level_model(params: ModelParams, photon_cap: int) -> FullSpaceModel:
    """V-level atom (|g>, |1>, |2>) on two modes, n_a, n_b <= photon_cap."""
    c = photon_cap
    a1 = destroy(c)
    I = sp.identity(c + 1, format="csr")
    I3 = sp.identity(3, format="csr")

    def ket_bra(i, j):
        return sp.csr_matrix(([1.0], ([i], [j])), shape=(3, 3))

    a = _kron_all([I3, a1, I])
    b = _kron_all([I3, I, a1])
    P1 = _kron_all([ket_bra(1, 1), I, I])
    P2 = _kron_all([ket_bra(2, 2), I, I])
    up1 = _kron_all([ket_bra(1, 0), I, I])
    up2 = _kron_all([ket_bra(2, 0), I, I])
    V = params.g * (up1 @ (a + b.T) + up2 @ (b + a.T))
    H = (
        params.omega_c * (a.T @ a + b.T @ b)
        + params.omega0 * (P1 + P2)
        + params.delta * P2
        + V
        + V.T
    ).tocsr()
    labels = [(t, na, nb) for t in range(3) for na in range(c + 1) for nb in range(c + 1)]
    lab = np.array(labels)
    charge = lab[:, 1] - lab[:, 2] + np.select([lab[:, 0] == 1, lab[:, 0] == 2], [1, -1], 0)
    return FullSpaceModel(H, charge.astype(float), labels)


def lattice_model(params: ModelParams, site_cap: int, counter_rotating: bool = True) -> FullSpaceModel:
    """Coupled-cavity Hamiltonian on TLS x a_0..a_{L-1} x b_0..b_{L-1}.

    Every mode holds at most ``site_cap`` photons; open boundaries.
    """
    L = params.L
    c = site_cap
    a1 = destroy(c)
    I = sp.identity(c + 1, format="csr")
    I2 = sp.identity(2, format="csr")
    nm = 2 * L

    def mode(k):
        ops = [I2] + [I] * nm
        ops[1 + k] = a1
        return _kron_all(ops)

    a = [mode(i) for i in range(L)]
    b = [mode(L + i) for i in range(L)]
    sz = _kron_all([sp.diags([-1.0, 1.0], format="csr")] + [I] * nm)
    s_plus = _kron_all([sp.csr_matrix(([1.0], ([1], [0])), shape=(2, 2))] + [I] * nm)
    H = 0.5 * params.omega0 * sz
    for i in range(L):
        H = H + params.omega_c * (a[i].T @ a[i] + b[i].T @ b[i])
    for i in range(L - 1):
        hop = a[i].T @ a[i + 1] + b[i].T @ b[i + 1]
        H = H - params.J * (hop + hop.T)
    coup = a[0] + b[0].T if counter_rotating else a[0]
    V = params.g * (s_plus @ coup)
    H = (H + V + V.T).tocsr()
    labels = [
        (digits[0], tuple(digits[1 : 1 + L]), tuple(digits[1 + L :]))
        for digits in itertools.product(range(2), *([range(c + 1)] * nm))
    ]
    charge = np.array([sum(al) - sum(bl) + (0.5 if t else -0.5) for t, al, bl in labels])
    return FullSpaceModel(H, charge, labels)


def _full_eigh(Hd, q, cluster_tol):
    energies, vecs = np.linalg.eigh(Hd)
    scale = max(1.0, float(np.abs(energies).max(initial=0.0)))
    start = 0
    n = len(energies)
    while start < n:
        stop = start + 1
        while stop < n and energies[stop] - energies[stop - 1] <= cluster_tol * scale:
            stop += 1
        if stop - start > 1:
            Vc = vecs[:, start:stop]
            _, U = np.linalg.eigh(Vc.T @ (q[:, None] * Vc))
            vecs[:, start:stop] = Vc @ U
        start = stop
    HV = Hd @ vecs
    energies = np.einsum("ij,ij->j", vecs, HV)
    residuals = np.linalg.norm(HV - vecs * energies, axis=0)
    return energies, vecs, residuals


def _block_eigh(model):
    if model.offblock_norm() != 0.0:
        raise OracleConsistencyError("full-space Hamiltonian is not exactly block diagonal in the charge")
    H = model.hamiltonian
    q = model.charge
    n = len(q)
    energies = np.empty(n)
    residuals = np.empty(n)
    vecs = np.zeros((n, n))
    col = 0
    for value in np.unique(q):
        sel = np.flatnonzero(q == value)
        block = H[sel][:, sel].toarray()
        e, v = np.linalg.eigh(block)
        k = len(sel)
        energies[col : col + k] = e
        vecs[sel, col : col + k] = v
        residuals[col : col + k] = np.linalg.norm(block @ v - v * e, axis=0)
        col += k
    return energies, vecs, residuals


def resolve_by_charge(
    model: FullSpaceModel, method: str = "blocks", cluster_tol: float = 1e-9, mix_tol: float = 1e-8
) -> OracleSolution:
    """Diagonalize the full space and attach the charge of every eigenvector.

    ``method="full"`` runs one dense eigensolve of the whole matrix and then
    rotates each degenerate cluster onto eigenvectors of the charge.
    ``method="blocks"`` first checks that no matrix element connects states
    of different charge and then diagonalizes the charge blocks of the same
    full-space matrix separately, which is equivalent and much cheaper.
    In both cases the charge is read off the eigenvectors afterwards and any
    vector with weight above ``mix_tol`` outside one charge value is an error.
    """
    q = model.charge
    if method == "full":
        energies, vecs, residuals = _full_eigh(model.hamiltonian.toarray(), q, cluster_tol)
    elif method == "blocks":
        energies, vecs, residuals = _block_eigh(model)
    else:
        raise ValueError(f"unknown method {method!r}")
    order = np.argsort(energies, kind="stable")
    energies = energies[order]
    residuals = residuals[order]
    vecs = canonicalize_phases(vecs[:, order])
    weights = vecs**2
    charges = q @ weights
    values, inverse = np.unique(q, return_inverse=True)
    per_value = np.zeros((len(values), weights.shape[1]))
    np.add.at(per_value, inverse, weights)
    nearest = np.abs(values[:, None] - charges[None, :]).argmin(axis=0)
    leak = 1.0 - per_value[nearest, np.arange(weights.shape[1])]
    if leak.max(initial=0.0) > mix_tol:
        raise OracleConsistencyError(f"eigenvector mixes charge sectors (leak {leak.max():.3e})")
    return OracleSolution(
        energies=energies,
        vectors=vecs,
        residuals=residuals,
        metadata={"solver": f"dense-full-space-{method}", "max_leak": float(leak.max(initial=0.0))},
        charges=charges,
        sectors=None,
        model=model,
    )


def brute_force_two_mode_oracle(params: ModelParams, photon_cap: int, method: str = "blocks") -> OracleSolution:
    """Full-space chiral Rabi spectrum with every eigenvector labelled by its sector ``l``.

    ``l = <L_z> + 1/2``.
    """
    sol = resolve_by_charge(two_mode_model(params, photon_cap), method)
    sol.sectors = np.round(sol.charges + 0.5).astype(int)
    sol.metadata.update(photon_cap=photon_cap, model="two-mode")
    return sol


def brute_force_v_level_oracle(params: ModelParams, photon_cap: int, method: str = "blocks") -> OracleSolution:
    """Full-space V-level spectrum labelled by the conserved ``L_V``."""
    sol = resolve_by_charge(v_level_model(params, photon_cap), method)
    sol.sectors = np.round(sol.charges).astype(int)
    sol.metadata.update(photon_cap=photon_cap, model="v-level")
    return sol


def brute_force_lattice_oracle(
    params: ModelParams, site_cap: int, counter_rotating: bool = True, method: str = "blocks"
) -> OracleSolution:
    sol = resolve_by_charge(lattice_model(params, site_cap, counter_rotating), method)
    sol.sectors = np.round(sol.charges + 0.5).astype(int)
    sol.metadata.update(site_cap=site_cap, model="lattice")
    return sol
