"""SVD of CSI matrices, beamforming feedback matrices, and eigenbeam shaping.

The right-singular matrix V of each per-subcarrier CSI matrix is the
beamforming feedback.  SVD fixes each singular vector only up to a
unit-modulus factor, so every column of V is rotated to make an anchor entry
real and non-negative: the last-row entry, as in the compressed feedback
format, or the largest-magnitude entry when the last row is (numerically)
zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import CsiTensor, complex_gaussian

ANCHOR_EPS = 1e-12
UNITARY_TOL = 1e-6


@dataclass(frozen=True)
class SvdResult:
    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray


@dataclass(frozen=True)
class BfmTensor:
    v: np.ndarray  # (K, n_tx, n_tx) complex
    subcarrier_indices: tuple[int, ...]


def svd(H) -> SvdResult:
    """Full SVD ``H = U diag(sigma) V^H`` with sigma descending.

    Works on a single matrix or any stack ``(..., n_rx, n_tx)``.
    """
    H = np.asarray(H, dtype=complex)
    if not np.isfinite(H).all():
        raise ValueError("CSI matrix has non-finite entries")
    U, s, Vh = np.linalg.svd(H, full_matrices=True)
    return SvdResult(U, s, np.conj(np.swapaxes(Vh, -1, -2)))


def reconstruct(res: SvdResult) -> np.ndarray:
    n_rx, n_tx = res.U.shape[-1], res.V.shape[-1]
    S = np.zeros(res.sigma.shape[:-1] + (n_rx, n_tx))
    r = min(n_rx, n_tx)
    S[..., np.arange(r), np.arange(r)] = res.sigma
    return res.U @ S @ np.conj(np.swapaxes(res.V, -1, -2))


def _anchor_phases(V: np.ndarray) -> np.ndarray:
    """Unit-modulus factor per column that makes the anchor real and >= 0."""
    last = V[..., -1, :]
    fallback_row = np.argmax(np.abs(V), axis=-2)
    fallback = np.take_along_axis(V, fallback_row[..., None, :], axis=-2)[..., 0, :]
    anchor = np.where(np.abs(last) >= ANCHOR_EPS, last, fallback)
    mag = np.abs(anchor)
    return np.where(mag > 0, np.conj(anchor) / np.where(mag > 0, mag, 1.0), 1.0)


def normalize_phase(V) -> np.ndarray:
    """Rotate each column of unitary ``V`` (or a stack) onto the anchor convention."""
    V = np.asarray(V, dtype=complex)
    n = V.shape[-1]
    gram = np.conj(np.swapaxes(V, -1, -2)) @ V
    if V.shape[-2] != n or np.abs(gram - np.eye(n)).max(initial=0.0) > UNITARY_TOL:
        raise ValueError("normalize_phase expects a unitary matrix")
    return V * _anchor_phases(V)[..., None, :]


def compute_bfm(csi: CsiTensor) -> BfmTensor:
    """Phase-normalized right-singular matrix at every subcarrier."""
    return BfmTensor(bfm_stack(csi.h), tuple(csi.subcarrier_indices))


def bfm_stack(h) -> np.ndarray:
    """:func:`compute_bfm` on a raw stack ``(..., n_rx, n_tx)``."""
    return normalize_phase(svd(h).V)


def esdm_shape(H, x, noise_var: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Precode with V, pass through H (+ noise), decode with U^H."""
    H = np.asarray(H, dtype=complex)
    x = np.asarray(x, dtype=complex)
    if H.ndim != 2 or x.shape != (H.shape[1],):
        raise ValueError(f"H {H.shape} and x {x.shape} are not conformable")
    res = svd(H)
    y = H @ (res.V @ x)
    if noise_var > 0:
        if rng is None:
            raise ValueError("a random generator is required when noise_var > 0")
        y = y + complex_gaussian(rng, y.shape, noise_var)
    return np.conj(res.U.T) @ y
