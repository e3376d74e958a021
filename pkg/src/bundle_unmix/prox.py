"""Sparsity penalties, their proximal maps, and the unit-simplex projection.

Every scalar prox here solves ``argmin_u lam * f(u) + (u - v)**2 / 2`` and
is vectorised elementwise over numpy input.  When the zero solution and the
nonzero stationary point have equal objective, zero is returned.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PENALTY_KINDS = ("L1", "Lq", "TL1")


@dataclass(frozen=True)
class PenaltySpec:
    """Scalar sparsity penalty ``f`` applied to magnitudes.

    ``kind`` is one of ``"L1"``, ``"Lq"`` (power ``q``) or ``"TL1"``
    (transformed L1 with shape parameter ``b``).
    """

    kind: str = "TL1"
    q: float = 0.5
    b: float = 1.0

    def __post_init__(self):
        kind = _canonical_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind == "Lq" and not 0.0 < self.q <= 1.0:
            raise ValueError(f"Lq penalty requires 0 < q <= 1, got q={self.q}")
        if kind == "TL1" and not self.b > 0.0:
            raise ValueError(f"TL1 penalty requires b > 0, got b={self.b}")

    @property
    def effective_kind(self) -> str:
        return "L1" if self.kind == "Lq" and self.q == 1.0 else self.kind

    def value(self, v) -> float:
        return penalty_value(self, v)

    def prox(self, v, lam: float):
        return prox_scalar(self, v, lam)

    def describe(self) -> str:
        if self.kind == "Lq":
            return f"Lq(q={self.q:g})"
        if self.kind == "TL1":
            return f"TL1(b={self.b:g})"
        return "L1"


def _canonical_kind(kind: str) -> str:
    for k in PENALTY_KINDS:
        if kind.lower() == k.lower():
            return k
    raise ValueError(f"unknown penalty {kind!r}; expected one of {PENALTY_KINDS}")


def tl1(v, b: float):
    """Elementwise transformed-L1 term ``(b + 1)|v| / (b + |v|)``."""
    a = np.abs(v)
    return (b + 1.0) * a / (b + a)


def penalty_value(f: PenaltySpec, v) -> float:
    a = np.abs(np.asarray(v, dtype=float))
    kind = f.effective_kind
    if kind == "L1":
        return float(a.sum())
    if kind == "Lq":
        # separable power sum, the quantity whose prox is prox_lhalf
        return float(np.sum(a ** f.q))
    return float(np.sum(tl1(a, f.b)))


def prox_l1(v, lam: float):
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def prox_lhalf(v, lam: float):
    """Half-thresholding: prox of ``lam * sqrt(|u|)``.

    Closed form from the cubic stationarity condition, with the jump
    threshold ``1.5 * lam**(2/3)`` for the ``1/2``-weighted quadratic.
    """
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    out = np.zeros_like(a)
    if lam <= 0:
        return v.copy()
    thresh = 1.5 * lam ** (2.0 / 3.0)
    big = a > thresh
    if np.any(big):
        ab = a[big]
        phi = np.arccos(np.clip((lam / 4.0) * (3.0 / ab) ** 1.5, -1.0, 1.0))
        u = (2.0 / 3.0) * ab * (1.0 + np.cos(2.0 * np.pi / 3.0 - 2.0 * phi / 3.0))
        # guard against rounding right at the jump
        keep = lam * np.sqrt(u) + 0.5 * (u - ab) ** 2 < 0.5 * ab**2
        out[big] = np.where(keep, u, 0.0)
    return np.sign(v) * out


def tl1_threshold(lam: float, b: float) -> float:
    if lam <= b * b / (2.0 * (b + 1.0)):
        return lam * (b + 1.0) / b
    return np.sqrt(2.0 * lam * (b + 1.0)) - b / 2.0


def prox_tl1(v, lam: float, b: float):
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    if lam <= 0:
        return v.copy()
    out = np.zeros_like(a)
    big = a > tl1_threshold(lam, b)
    if np.any(big):
        ab = a[big]
        arg = 1.0 - 27.0 * lam * b * (b + 1.0) / (2.0 * (b + ab) ** 3)
        phi = np.arccos(np.clip(arg, -1.0, 1.0))
        u = (2.0 / 3.0) * (b + ab) * np.cos(phi / 3.0) - 2.0 * b / 3.0 + ab / 3.0
        out[big] = u
    return np.sign(v) * out


def prox_scalar(f: PenaltySpec, v, lam: float):
    if lam < 0:
        raise ValueError(f"prox threshold must be >= 0, got {lam}")
    kind = f.effective_kind
    if kind == "L1":
        return prox_l1(v, lam)
    if kind == "TL1":
        return prox_tl1(v, lam, f.b)
    if f.q != 0.5:
        raise NotImplementedError("Lq prox is only available in closed form for q = 1/2")
    return prox_lhalf(v, lam)


def prox_group_l2(v, lam: float, f: PenaltySpec) -> np.ndarray:
    """Prox of ``lam * f(||u||_2)``: shrink the norm, keep the direction."""
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return np.zeros_like(v)
    return v * (float(prox_scalar(f, norm, lam)) / norm)


def group_prox_columns(W: np.ndarray, starts: np.ndarray, sizes, lam: float, f: PenaltySpec):
    """Apply :func:`prox_group_l2` to every (group, column) block of ``W``."""
    norms = np.sqrt(np.add.reduceat(W * W, starts, axis=0))
    shrunk = prox_scalar(f, norms, lam)
    scale = np.divide(shrunk, norms, out=np.zeros_like(norms), where=norms > 0)
    return W * np.repeat(scale, sizes, axis=0)


def project_simplex(v, axis: int = 0) -> np.ndarray:
    """Euclidean projection onto ``{u >= 0, sum(u) = 1}``.

    A 1-D input is projected as a vector; for 2-D input each slice along
    ``axis`` (columns by default) is projected independently.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        return project_simplex(v[:, None], axis=0)[:, 0]
    if axis == 1:
        return project_simplex(v.T, axis=0).T
    d, n = v.shape
    u = np.sort(v, axis=0)[::-1]
    # candidate thresholds (cumsum_j - 1) / j; the support is the prefix where u_j exceeds them
    css = np.cumsum(u, axis=0)
    css -= 1.0
    css /= np.arange(1, d + 1)[:, None]
    rho = np.count_nonzero(u > css, axis=0)
    out = v - css[rho - 1, np.arange(n)]
    np.maximum(out, 0.0, out=out)
    # v - tau cancels badly for large |v|; renormalising keeps sum == 1 to rounding
    out /= out.sum(axis=0)
    return out
