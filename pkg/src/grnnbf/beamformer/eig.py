"""Batched cyclic Jacobi eigensolver for small complex Hermitian matrices."""

from __future__ import annotations

import numpy as np

__all__ = ["eigh_jacobi", "principal_eigenvector", "fix_phase"]


def eigh_jacobi(A: np.ndarray, tol: float = 1e-15, max_sweeps: int = 60):
    """Eigen-decompose a stack of Hermitian matrices, shape (..., M, M).

    Each rotation first removes the phase of the pivot a_pq, then applies a
    real Jacobi rotation to the resulting real symmetric 2x2 block.
    Returns ascending eigenvalues (..., M) and unitary eigenvectors as
    columns (..., M, M).
    """
    A = np.asarray(A, dtype=np.complex128)
    lead = A.shape[:-2]
    M = A.shape[-1]
    A = 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))
    A = A.reshape(-1, M, M).copy()
    B = A.shape[0]
    V = np.broadcast_to(np.eye(M, dtype=np.complex128), (B, M, M)).copy()
    scale = np.maximum(np.sum(np.abs(A) ** 2, axis=(1, 2)), np.finfo(float).tiny)
    offmask = ~np.eye(M, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sum(np.abs(A[:, offmask]) ** 2, axis=1)
        if np.all(off <= tol**2 * scale):
            break
        for p in range(M - 1):
            for q in range(p + 1, M):
                apq = A[:, p, q]
                mag = np.abs(apq)
                active = mag**2 > tol**2 * scale * 1e-4
                if not np.any(active):
                    continue
                safe = np.where(active, mag, 1.0)
                phase = np.where(active, apq / safe, 1.0)
                theta = (A[:, q, q].real - A[:, p, p].real) / (2.0 * safe)
                t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
                c = np.where(active, 1.0 / np.sqrt(t * t + 1.0), 1.0)
                s = np.where(active, t * c, 0.0)
                ph = np.conj(phase)
                # columns: A <- A V with V = diag(1, e^{-i phi}) [[c, s], [-s, c]]
                colp = A[:, :, p].copy()
                colq = A[:, :, q].copy()
                A[:, :, p] = c[:, None] * colp - (s * ph)[:, None] * colq
                A[:, :, q] = s[:, None] * colp + (c * ph)[:, None] * colq
                rowp = A[:, p, :].copy()
                rowq = A[:, q, :].copy()
                A[:, p, :] = c[:, None] * rowp - (s * phase)[:, None] * rowq
                A[:, q, :] = s[:, None] * rowp + (c * phase)[:, None] * rowq
                A[:, p, q] = np.where(active, 0.0, A[:, p, q])
                A[:, q, p] = np.where(active, 0.0, A[:, q, p])
                A[:, p, p] = A[:, p, p].real
                A[:, q, q] = A[:, q, q].real
                vp = V[:, :, p].copy()
                vq = V[:, :, q].copy()
                V[:, :, p] = c[:, None] * vp - (s * ph)[:, None] * vq
                V[:, :, q] = s[:, None] * vp + (c * ph)[:, None] * vq
    w = np.real(np.diagonal(A, axis1=1, axis2=2))
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    return w.reshape(lead + (M,)), V.reshape(lead + (M, M))


def fix_phase(v: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Unit L2 norm, with the first entry above ``floor`` in magnitude real-positive."""
    v = np.asarray(v, dtype=np.complex128)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    v = v / np.where(norm > 0, norm, 1.0)
    big = np.abs(v) > floor
    first = np.argmax(big, axis=-1)
    anchor = np.take_along_axis(v, first[..., None], axis=-1)
    mag = np.abs(anchor)
    rot = np.where(mag > floor, np.conj(anchor) / np.where(mag > 0, mag, 1.0), 1.0)
    out = v * rot
    # rounding leaves ~1e-18 imaginary residue on the anchor; snap it
    fixed = np.where(mag > floor, mag, anchor).astype(np.complex128)
    np.put_along_axis(out, first[..., None], fixed, axis=-1)
    return out


def principal_eigenvector(A: np.ndarray):
    """Largest eigenvalue and its phase-fixed unit eigenvector per matrix."""
    w, V = eigh_jacobi(A)
    return w[..., -1], fix_phase(V[..., :, -1])
