"""Abundance, signature, and reconstruction error metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import GroupStructure


@dataclass
class EvalReport:
    rmse_m: Optional[float] = None
    sam_deg: Optional[float] = None
    rmse_x: Optional[float] = None
    sam_x: Optional[float] = None
    per_material_sam: Optional[list] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if v is not None and k != "extra"}
        d.update(self.extra)
        return d


def _same_shape(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def rmse_abundance(M_hat, M_true) -> float:
    """Mean over pixels of the per-pixel RMS abundance error."""
    M_hat, M_true = _same_shape(M_hat, M_true)
    return float(np.mean(np.sqrt(np.mean((M_true - M_hat) ** 2, axis=0))))


def rmse_reconstruction(X_hat, X) -> float:
    X_hat, X = _same_shape(X_hat, X)
    return float(np.mean(np.sqrt(np.mean((X - X_hat) ** 2, axis=0))))


def column_angles(P, Q) -> np.ndarray:
    """Angle in degrees between matching columns of ``P`` and ``Q``."""
    P, Q = _same_shape(P, Q)
    if P.ndim == 1:
        P, Q = P[:, None], Q[:, None]
    np_, nq = np.linalg.norm(P, axis=0), np.linalg.norm(Q, axis=0)
    if np.any(np_ == 0) or np.any(nq == 0):
        raise ValueError("spectral angle undefined for a zero-norm column")
    cos = np.sum(P * Q, axis=0) / (np_ * nq)
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def sam(S_hat, S_ref) -> float:
    """Mean spectral angle (degrees) between matching material signatures."""
    return float(np.mean(column_angles(S_hat, S_ref)))


def sam_reconstruction(X_hat, X) -> float:
    return float(np.mean(column_angles(X_hat, X)))


def mean_signatures(S_stack: np.ndarray, M_hat: np.ndarray, min_abundance: float = 1e-6) -> np.ndarray:
    """Average the per-pixel endmembers of each material over pixels where it is present.

    ``S_stack`` is w x k x n.  A material never present falls back to the
    mean over all pixels.
    """
    w, k, n = S_stack.shape
    out = np.empty((w, k))
    for l in range(k):
        present = M_hat[l] > min_abundance
        cols = S_stack[:, l, present] if present.any() else S_stack[:, l, :]
        out[:, l] = cols.mean(axis=1)
    return out


def align_materials(S_est: np.ndarray, S_ref: np.ndarray) -> np.ndarray:
    """Permutation ``p`` so that estimated material ``p[l]`` matches reference ``l``.

    Minimises the total spectral angle (Hungarian assignment).
    """
    S_est = np.asarray(S_est, dtype=float)
    S_ref = np.asarray(S_ref, dtype=float)
    if S_est.shape != S_ref.shape:
        raise ValueError(f"shape mismatch: {S_est.shape} vs {S_ref.shape}")
    k = S_ref.shape[1]
    cost = np.empty((k, k))
    for a in range(k):
        for b in range(k):
            cost[a, b] = column_angles(S_ref[:, a], S_est[:, b])[0]
    rows, cols = linear_sum_assignment(cost)
    return cols[np.argsort(rows)]


def bundle_means(B: np.ndarray, groups: GroupStructure) -> np.ndarray:
    return np.stack([B[:, rg.start:rg.stop].mean(axis=1) for rg in groups.ranges()], axis=1)


def evaluate(
    M_hat=None,
    M_true=None,
    X_hat=None,
    X=None,
    S_hat=None,
    S_ref=None,
) -> EvalReport:
    """Compute every metric whose inputs are available."""
    rep = EvalReport()
    if M_hat is not None and M_true is not None:
        rep.rmse_m = rmse_abundance(M_hat, M_true)
    if S_hat is not None and S_ref is not None:
        angles = column_angles(S_hat, S_ref)
        rep.per_material_sam = [float(a) for a in angles]
        rep.sam_deg = float(np.mean(angles))
    if X_hat is not None and X is not None:
        rep.rmse_x = rmse_reconstruction(X_hat, X)
        rep.sam_x = sam_reconstruction(X_hat, X)
    return rep
