"""
V-level emitter in a two-polarization cavity.

The ground state ``|g>`` couples to ``|1>`` through ``a + b^dag`` and to
``|2>`` through ``b + a^dag``::

    H = omega_c (a^dag a + b^dag b) + omega0 |1><1| + (omega0 + delta) |2><2|
        + g [ |1><g| (a + b^dag) + |2><g| (b + a^dag) + h.c. ]

The conserved charge ``a^dag a - b^dag b + |1><1| - |2><2|`` takes the value
``l`` on the sector built by :func:`build_v_sector_basis`.  Energies carry no
``-omega0/2`` zero point, so in the limit ``delta -> infinity`` the spectrum
equals the two-level model's shifted up by ``omega0/2``.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
import scipy.sparse as sp

from .hilbert import ModelParams, VSectorBasis, build_v_sector_basis
from .numerics import EigenSolution, dense_eigensolve
from .single import ConvergenceError

__all__ = ["VSectorBasis", "build_v_sector_basis", "assemble_v_hamiltonian", "v_sector_spectrum"]


def _diagonal(params: ModelParams, l: int, branch: int, n: int) -> float:
    wc = params.omega_c
    if branch == 0:
        return wc * (2 * n + l)
    if branch == 1:
        return params.omega0 + wc * (2 * n + l - 1)
    return params.omega0 + params.delta + wc * (2 * n + l + 1)


def assemble_v_hamiltonian(params: ModelParams, basis: VSectorBasis) -> sp.csr_matrix:
    """Real symmetric sector Hamiltonian of the V-level model."""
    l, g = basis.l, params.g
    rows, cols, vals = [], [], []
    for i, (branch, n) in enumerate(basis.states):
        rows.append(i)
        cols.append(i)
        vals.append(_diagonal(params, l, branch, n))
    if g != 0:
        for i, (branch, n) in enumerate(basis.states):
            if branch != 0:
                continue
            # (partner branch, partner n, matrix element / g)
            partners = (
                (1, n, np.sqrt(n + l)),
                (1, n + 1, np.sqrt(n + 1)),
                (2, n - 1, np.sqrt(n)),
                (2, n, np.sqrt(n + l + 1)),
            )
            for pb, pn, amp in partners:
                j = basis.index(pb, pn)
                if j is None or amp == 0:
                    continue
                rows += [i, j]
                cols += [j, i]
                vals += [g * amp, g * amp]
    H = sp.coo_matrix((vals, (rows, cols)), shape=(basis.dim, basis.dim)).tocsr()
    H.sum_duplicates()
    return H


def v_sector_spectrum(
    params: ModelParams,
    l: int,
    n_max: Optional[int] = None,
    k: int = 10,
    tol: float = 1e-10,
    step: int = 10,
    n_max_ceiling: int = 1000,
) -> EigenSolution:
    """Sector spectrum of the V-level model with a truncation certificate.

    Same contract as :func:`chiral_rabi.single.sector_spectrum`: the lowest
    ``k`` levels must move by less than ``tol`` when ``n_max`` grows by
    ``step``.
    """
    n = 40 if n_max is None else int(n_max)
    while True:
        basis = build_v_sector_basis(l, n)
        sol = dense_eigensolve(assemble_v_hamiltonian(params, basis))
        bigger = build_v_sector_basis(l, n + step)
        ref = np.linalg.eigvalsh(assemble_v_hamiltonian(params, bigger).toarray())
        kk = min(k, len(sol.energies))
        drift = float(np.max(np.abs(sol.energies[:kk] - ref[:kk]), initial=0.0))
        if drift < tol:
            break
        if n >= n_max_ceiling:
            raise ConvergenceError(
                f"V-level sector l={l}: lowest {kk} levels drift by {drift:.3e} between n_max={n} and {n + step}",
                drift,
            )
        n = min(n_max_ceiling, int(1.5 * n) + step)
    sol.basis = basis
    sol.metadata.update(sector=l, n_max=n, drift=drift, certified_levels=kk, model="v-level")
    return sol
