"""
Eigensolvers and propagators for Hermitian sector Hamiltonians.

Hamiltonians are plain ``scipy.sparse`` CSR matrices.  With real ``g`` every
sector matrix is real symmetric, so the eigensolvers stay in real arithmetic
and only the propagator goes complex.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal

log = logging.getLogger(__name__)

DENSE_MAX_DIM = 20_000


class SolverError(RuntimeError):
    """Base class for numerical failures."""


class DenseBudgetError(SolverError):
    """Matrix too large for a dense solve; use ``lanczos_lowest`` instead."""


class LanczosNotConverged(SolverError):
    def __init__(self, msg, best_residual):
        super().__init__(msg)
        self.best_residual = best_residual


class KrylovToleranceError(SolverError):
    def __init__(self, msg, achieved):
        super().__init__(msg)
        self.achieved = achieved


@dataclass
class EigenSolution:
    """Eigenpairs sorted by energy; ``vectors[:, i]`` belongs to ``energies[i]``."""

    energies: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    metadata: dict = field(default_factory=dict)
    basis: Any = None

    def __len__(self):
        return len(self.energies)


def check_hermitian(H) -> float:
    """Largest element of ``|H - H^dag|``."""
    if sp.issparse(H):
        diff = (H - H.conj().T).tocoo()
        return float(np.abs(diff.data).max(initial=0.0))
    H = np.asarray(H)
    return float(np.abs(H - H.conj().T).max(initial=0.0))


def operator_norm_bound(H) -> float:
    """Cheap upper bound on the spectral norm (max absolute row sum)."""
    if sp.issparse(H):
        return float(np.asarray(abs(H).sum(axis=1)).max(initial=0.0))
    return float(np.abs(np.asarray(H)).sum(axis=1).max(initial=0.0))


def canonicalize_phases(vectors: np.ndarray, rel_tol: float = 1e-8) -> np.ndarray:
    """Make the first non-negligible component of every column real positive."""
    vectors = np.array(vectors, copy=True)
    if vectors.size == 0:
        return vectors
    mags = np.abs(vectors)
    thresh = rel_tol * mags.max(axis=0, keepdims=True)
    first = np.argmax(mags > thresh, axis=0)
    pivots = vectors[first, np.arange(vectors.shape[1])]
    phases = pivots / np.abs(pivots)
    if np.isrealobj(vectors):
        phases = np.sign(pivots)
    return vectors / phases


def _residuals(H, energies, vectors) -> np.ndarray:
    if vectors.size == 0:
        return np.zeros(0)
    return np.linalg.norm(H @ vectors - vectors * energies, axis=0)


def dense_eigensolve(H, max_dim: int = DENSE_MAX_DIM, rel_tol: float = 1e-10, **metadata) -> EigenSolution:
    """Full spectrum of a Hermitian matrix.

    Raises ``DenseBudgetError`` above ``max_dim`` and ``SolverError`` if a
    residual exceeds ``rel_tol * ||H||``.
    """
    n = H.shape[0]
    if n > max_dim:
        raise DenseBudgetError(f"dimension {n} exceeds dense budget {max_dim}; use lanczos_lowest")
    A = H.toarray() if sp.issparse(H) else np.asarray(H)
    if np.iscomplexobj(A) and not np.any(A.imag):
        A = A.real
    energies, vectors = np.linalg.eigh(A)
    vectors = canonicalize_phases(vectors)
    residuals = _residuals(A, energies, vectors)
    scale = max(1.0, float(np.abs(energies).max(initial=0.0)))
    if residuals.size and residuals.max() > rel_tol * scale * max(1.0, np.sqrt(n) / 10):
        raise SolverError(f"dense residual {residuals.max():.3e} above tolerance")
    metadata.setdefault("solver", "dense")
    return EigenSolution(energies=energies, vectors=vectors, residuals=residuals, metadata=metadata)


def _orthogonalize(V, w, k):
    """Two passes of classical Gram-Schmidt against V[:, :k]; returns coefficients."""
    # conjugating w instead of V[:, :k] avoids copying the whole block
    Vk = V[:, :k]
    h = np.conj(np.conj(w) @ Vk)
    w -= Vk @ h
    h2 = np.conj(np.conj(w) @ Vk)
    w -= Vk @ h2
    return h + h2


def lanczos_lowest(
    H,
    k: int = 1,
    tol: Optional[float] = None,
    v0: Optional[np.ndarray] = None,
    ncv: Optional[int] = None,
    max_restarts: int = 500,
    seed: int = 0,
    **metadata,
) -> EigenSolution:
    """Lowest ``k`` eigenpairs by thick-restart Lanczos.

    Every new Krylov vector is reorthogonalized against the whole basis
    (two Gram-Schmidt passes), so spurious copies of converged eigenvalues
    cannot form.  After each cycle the ``k + extra`` lowest Ritz vectors and
    the residual direction are kept and the projected matrix becomes an
    arrowhead block, which the full projection coefficients reproduce
    automatically.

    Parameters
    ----------
    tol : float, optional
        Absolute residual bound ``||H v - E v||``; default ``1e-8 * ||H||``.
    v0 : array, optional
        Starting vector (warm start); random with ``seed`` otherwise.
    ncv : int, optional
        Maximum basis size per cycle.
    """
    n = H.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds dimension {n}")
    norm = operator_norm_bound(H)
    if tol is None:
        tol = 1e-8 * max(norm, 1.0)
    if ncv is None:
        ncv = max(2 * k + 20, 40)
    ncv = min(ncv, n)
    if n <= max(ncv, 64):
        sol = dense_eigensolve(H)
        meta = dict(metadata, solver="dense-fallback")
        return EigenSolution(sol.energies[:k], sol.vectors[:, :k], sol.residuals[:k], meta)

    dtype = np.result_type(H.dtype, np.float64 if v0 is None else v0.dtype)
    rng = np.random.default_rng(seed)
    V = np.zeros((n, ncv + 1), dtype=dtype, order="F")
    T = np.zeros((ncv + 1, ncv + 1), dtype=dtype)

    if v0 is None:
        v = rng.standard_normal(n).astype(dtype)
    else:
        v = np.array(v0, dtype=dtype, copy=True)
        v += 1e-7 * np.linalg.norm(v) / np.sqrt(n) * rng.standard_normal(n)
    V[:, 0] = v / np.linalg.norm(v)

    keep = min(k + max(3, k), ncv - 2)
    start = 0
    best = np.inf
    matvecs = 0
    for restart in range(max_restarts):
        for j in range(start, ncv):
            w = H @ V[:, j]
            matvecs += 1
            h = _orthogonalize(V, w, j + 1)
            T[: j + 1, j] = h
            beta = np.linalg.norm(w)
            if beta <= 1e-13 * max(norm, 1.0):
                # invariant subspace: continue with a fresh orthogonal direction
                w = rng.standard_normal(n).astype(dtype)
                _orthogonalize(V, w, j + 1)
                beta_next = 0.0
                w /= np.linalg.norm(w)
            else:
                beta_next = beta
                w /= beta
            T[j, j + 1] = beta_next
            T[j + 1, j] = beta_next
            V[:, j + 1] = w
        m = ncv
        theta, S = np.linalg.eigh(T[:m, :m], UPLO="U")
        beta_m = T[m - 1, m]
        res = np.abs(beta_m * S[m - 1, :])
        best = min(best, float(res[:k].max()))
        if np.all(res[:k] <= tol):
            Y = V[:, :m] @ S[:, :k]
            Y = canonicalize_phases(Y)
            energies = theta[:k]
            residuals = _residuals(H, energies, Y)
            if np.all(residuals <= tol):
                meta = dict(metadata, solver="lanczos", restarts=restart, matvecs=matvecs, tol=tol)
                return EigenSolution(energies=energies, vectors=Y, residuals=residuals, metadata=meta)
            log.debug("explicit residual %.3e above Lanczos estimate; continuing", residuals.max())
        # thick restart: keep the lowest Ritz vectors and the residual direction
        p = keep
        Y = V[:, :m] @ S[:, :p]
        f = V[:, m].copy()
        V[:, :p] = Y
        V[:, p] = f
        T[:] = 0
        T[np.arange(p), np.arange(p)] = theta[:p]
        T[:p, p] = beta_m * S[m - 1, :p]
        T[p, :p] = T[:p, p].conj()
        start = p
    raise LanczosNotConverged(
        f"Lanczos did not converge after {max_restarts} restarts (best residual {best:.3e}, tol {tol:.3e})",
        best,
    )


# Gauss-Legendre nodes on [0, 1] for the local error integral
_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def _lanczos_tridiag(H, v, m, accept=None, min_dim=4):
    """m-step Lanczos with full reorthogonalization from normalized ``v``.

    Returns the basis, the tridiagonal (alpha, beta) coefficients and the
    coupling ``beta_m`` to the next vector (0 on happy breakdown).  When
    ``accept(alpha, beta, beta_next)`` returns True for a basis of at least
    ``min_dim`` vectors, the iteration stops there.
    """
    n = v.shape[0]
    V = np.zeros((n, m + 1), dtype=complex, order="F")
    alpha = np.zeros(m)
    beta = np.zeros(m)
    V[:, 0] = v
    norm = 0.0
    for j in range(m):
        w = H @ V[:, j]
        h = _orthogonalize(V, w, j + 1)
        alpha[j] = h[j].real
        b = np.linalg.norm(w)
        beta[j] = b
        norm = max(norm, abs(alpha[j]) + b)
        if b <= 1e-14 * max(norm, 1.0):
            return V[:, : j + 1], alpha[: j + 1], beta[:j], 0.0
        if accept is not None and j + 1 >= min_dim and j + 1 < m and accept(alpha[: j + 1], beta[:j], b):
            return V[:, : j + 1], alpha[: j + 1], beta[:j], b
        V[:, j + 1] = w / b
    return V[:, :m], alpha, beta[: m - 1], beta[m - 1]


def _error_bound(theta, S, beta_m, tau, sign) -> float:
    """beta_m * integral_0^tau |e_k^T exp(-i s T) e_1| ds by Gauss-Legendre quadrature."""
    if beta_m == 0.0:
        return 0.0
    s0 = S[0, :]
    vals = np.abs(S[-1, :] @ (np.exp(-1j * sign * np.outer(theta, _GL_X * tau)) * s0[:, None]))
    return beta_m * tau * float(_GL_W @ vals)


def krylov_propagate(
    H,
    psi: np.ndarray,
    dt: float,
    err_tol: float = 1e-10,
    m: int = 30,
    max_substeps: int = 100_000,
) -> np.ndarray:
    """Apply ``exp(-i H dt)`` to a normalized vector.

    Each substep of length ``tau`` uses an ``m``-dimensional Lanczos basis
    and is accepted when the a-posteriori bound

        ||error(tau)|| <= beta_m * integral_0^tau |e_m^T exp(-i s T) e_1| ds

    is at most ``err_tol * tau / dt``, so the whole call stays within
    ``err_tol``.  The bound follows from unitarity of the exact propagator.
    """
    psi = np.asarray(psi, dtype=complex)
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1.0) > 1e-12:
        raise ValueError(f"state must be normalized (norm {nrm!r})")
    return _propagate(_complex_operator(H), psi, dt, err_tol, m, max_substeps)


def _propagate(H, psi, dt, err_tol, m, max_substeps=100_000):
    if not np.isfinite(dt):
        raise ValueError("dt must be finite")
    if dt == 0:
        return psi.copy()
    sign = 1.0 if dt > 0 else -1.0
    total = abs(dt)
    m = min(m, psi.shape[0])
    done = 0.0
    w = psi.copy()
    for _ in range(max_substeps):
        if done >= total * (1 - 1e-15):
            return w
        remaining = total - done
        remaining_ok = err_tol * remaining / total

        def accept(a, b, b_next):
            # the whole remaining interval fits in one step with this basis
            th, U = eigh_tridiagonal(a, b)
            return _error_bound(th, U, b_next, remaining, sign) <= remaining_ok

        V, alpha, beta, beta_m = _lanczos_tridiag(H, w / np.linalg.norm(w), m, accept=accept)
        wn = np.linalg.norm(w)
        theta, S = eigh_tridiagonal(alpha, beta) if len(alpha) > 1 else (alpha.copy(), np.ones((1, 1)))
        s0 = S[0, :]

        def coeffs(tau):
            return S @ (np.exp(-1j * sign * theta * tau) * s0)

        def bound(tau):
            return _error_bound(theta, S, beta_m, tau, sign)

        tau = remaining
        while bound(tau) > err_tol * tau / total:
            tau *= 0.5
            if tau < total * 1e-14:
                raise KrylovToleranceError(
                    f"local error bound {bound(tau):.3e} not reachable with m={m}", bound(tau)
                )
        # try to extend a halved step back towards the remaining interval
        lo, hi = tau, min(2 * tau, remaining)
        if hi > lo:
            for _ in range(6):
                mid = 0.5 * (lo + hi)
                if bound(mid) <= err_tol * mid / total:
                    lo = mid
                else:
                    hi = mid
            if bound(hi) <= err_tol * hi / total:
                lo = hi
            tau = lo
        w = wn * (V @ coeffs(tau))
        done += tau
    raise KrylovToleranceError("too many substeps", float("nan"))


def _complex_operator(H):
    """Cast a real sparse matrix to complex once, so matvecs with complex states do not re-cast it."""
    if sp.issparse(H) and not np.iscomplexobj(H.data):
        return H.astype(complex)
    return H


def krylov_evolve(H, psi0: np.ndarray, times, err_tol: float = 1e-10, m: int = 30):
    """Propagate through an increasing time grid; yields (t, state).

    ``err_tol`` bounds the error of each interval between grid points.
    """
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be strictly increasing")
    psi = np.asarray(psi0, dtype=complex)
    if abs(np.linalg.norm(psi) - 1.0) > 1e-12:
        raise ValueError("initial state must be normalized")
    H = _complex_operator(H)
    t_prev = 0.0
    for t in times:
        if t != t_prev:
            psi = _propagate(H, psi, t - t_prev, err_tol, m)
        t_prev = t
        yield t, psi
