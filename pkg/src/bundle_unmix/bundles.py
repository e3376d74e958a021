"""Automated endmember bundle (AEB) construction.

Random pixel subsets are each passed through a vertex component analysis
extractor; the pooled candidates are grouped into materials by k-means on
unit-norm spectra.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.cluster import KMeans

from .data import GroupStructure

log = logging.getLogger(__name__)


class BundleError(RuntimeError):
    pass


@dataclass(frozen=True)
class BundleConfig:
    k: int
    num_subsets: int = 10
    subset_fraction: float = 0.1
    seed: int = 0
    kmeans_restarts: int = 100

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.num_subsets < 1:
            raise ValueError(f"num_subsets must be >= 1, got {self.num_subsets}")
        if not 0 < self.subset_fraction <= 1:
            raise ValueError(f"subset_fraction must lie in (0, 1], got {self.subset_fraction}")


def vca(X: np.ndarray, k: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Vertex component analysis restricted to a k-dimensional signal subspace.

    Returns ``(E, idx)`` where ``E = X[:, idx]`` holds the ``k`` selected
    pixel spectra.  Each step draws a random direction, removes its
    component along the endmembers found so far, and takes the pixel with
    the largest absolute projection.
    """
    X = np.asarray(X, dtype=float)
    w, n = X.shape
    if n < k:
        raise BundleError(f"need at least k={k} pixels, got {n}")
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    if s.size < k or s[0] == 0 or s[k - 1] <= 1e-12 * s[0]:
        raise BundleError(f"data has fewer than k={k} significant dimensions")
    Xp = U[:, :k].T @ X
    rng = np.random.default_rng(seed)
    E = np.zeros((k, 0))
    idx = []
    for _ in range(k):
        d = rng.standard_normal(k)
        if E.shape[1]:
            d -= E @ np.linalg.lstsq(E, d, rcond=None)[0]
        d /= np.linalg.norm(d)
        j = int(np.argmax(np.abs(d @ Xp)))
        idx.append(j)
        E = np.column_stack([E, Xp[:, j]])
    idx = np.array(idx)
    return X[:, idx], idx


def cluster_candidates(C: np.ndarray, k: int, seed: int = 0, restarts: int = 100,
                       max_retries: int = 10) -> np.ndarray:
    """k-means labels for the columns of ``C`` after unit-norm scaling.

    Labels are renumbered in order of first appearance so the result does
    not depend on k-means' internal cluster numbering.
    """
    norms = np.linalg.norm(C, axis=0)
    Y = (C / np.where(norms > 0, norms, 1.0)).T
    if Y.shape[0] < k:
        raise BundleError(f"{Y.shape[0]} candidates cannot form {k} groups")
    for attempt in range(max_retries + 1):
        km = KMeans(n_clusters=k, init="k-means++", n_init=restarts, random_state=seed + attempt)
        labels = km.fit_predict(Y)
        if np.unique(labels).size == k:
            break
        log.warning("k-means produced an empty cluster (attempt %d)", attempt)
    else:
        raise BundleError(f"k-means left a cluster empty after {max_retries} retries")
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(np.argsort(first))
    return order[labels]


def aeb_extract(X: np.ndarray, cfg: BundleConfig) -> tuple[np.ndarray, GroupStructure]:
    """Build a bundle matrix with columns grouped by material."""
    X = np.asarray(X, dtype=float)
    n = X.shape[1]
    size = max(cfg.k, int(round(cfg.subset_fraction * n)))
    if size > n:
        raise BundleError(f"need at least k={cfg.k} pixels, got {n}")
    ss = np.random.SeedSequence(cfg.seed)
    sample_seed, *vca_seeds = ss.generate_state(cfg.num_subsets + 1)
    rng = np.random.default_rng(sample_seed)
    candidates = []
    for s in range(cfg.num_subsets):
        cols = np.sort(rng.choice(n, size=size, replace=False))
        E, _ = vca(X[:, cols], cfg.k, seed=int(vca_seeds[s]))
        candidates.append(E)
    C = np.concatenate(candidates, axis=1)
    labels = cluster_candidates(C, cfg.k, seed=cfg.seed, restarts=cfg.kmeans_restarts)
    order = np.argsort(labels, kind="stable")
    sizes = np.bincount(labels, minlength=cfg.k)
    return np.ascontiguousarray(C[:, order]), GroupStructure(sizes.tolist())
