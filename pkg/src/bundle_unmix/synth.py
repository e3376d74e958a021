"""Synthetic bundle scenes with spatially correlated abundances.

The generator follows the usual benchmark recipe: Gaussian random field
abundance maps, one library of signatures per material, a signature drawn
at random from the material's library for every pixel, and white Gaussian
noise at a target SNR.  Library spectra are parametric (sums of Gaussian
bumps) rather than physically simulated.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .data import GroupStructure


N_PERTURBATION_TERMS = 6
MAX_PERTURBATION_FREQ = 8.0


@dataclass(frozen=True)
class SceneConfig:
    height: int = 50
    width: int = 50
    bands: int = 198
    k: int = 3
    signatures_per_material: int = 30
    snr_db: float = 30.0
    correlation_length: float = 5.0
    # scale of the unit-variance GRF layers before the softmax; larger -> purer pixels
    sharpness: float = 8.0
    # weight of each material's own features vs. a background shared by all
    contrast: float = 0.3
    # std of the smooth additive perturbation applied to each variant
    variability: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("height", "width", "bands", "k", "signatures_per_material"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ValueError(f"snr_db must be finite or +inf, got {self.snr_db}")
        if not self.correlation_length >= 0:
            raise ValueError("correlation_length must be >= 0")
        if not 0 < self.contrast <= 1:
            raise ValueError("contrast must lie in (0, 1]")
        if not self.variability >= 0:
            raise ValueError("variability must be >= 0")

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SceneTruth:
    X: np.ndarray
    B: np.ndarray
    groups: GroupStructure
    M: np.ndarray
    active_signature: np.ndarray  # k x n, absolute column index into B
    signal: np.ndarray
    noise: np.ndarray

    @property
    def S_ref(self) -> np.ndarray:
        """Mean library signature per material (w x k)."""
        return np.stack([self.B[:, rg.start:rg.stop].mean(axis=1) for rg in self.groups.ranges()], axis=1)

    def empirical_snr_db(self) -> float:
        nn = float(np.sum(self.noise**2))
        if nn == 0:
            return math.inf
        return 10.0 * math.log10(float(np.sum(self.signal**2)) / nn)


def _streams(seed: int):
    """Independent generators for the abundance, library, and mixing stages."""
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(3)]


def generate_abundances(cfg: SceneConfig) -> np.ndarray:
    """k x n abundances on the simplex, pixels in row-major order."""
    rng = _streams(cfg.seed)[0]
    layers = np.empty((cfg.k, cfg.height, cfg.width))
    for l in range(cfg.k):
        field = rng.standard_normal((cfg.height, cfg.width))
        if cfg.correlation_length > 0:
            field = gaussian_filter(field, sigma=cfg.correlation_length, mode="reflect")
        sd = field.std()
        layers[l] = field / sd if sd > 0 else field
    logits = cfg.sharpness * layers.reshape(cfg.k, -1)
    logits -= logits.max(axis=0, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=0, keepdims=True)


def _bump_spectrum(rng, grid, centers):
    s = np.zeros_like(grid)
    for c in centers:
        height = rng.uniform(0.3, 0.8)
        width = rng.uniform(0.05, 0.15)
        s += height * np.exp(-0.5 * ((grid - c) / width) ** 2)
    return s + rng.uniform(0.02, 0.1)


def generate_bundles(cfg: SceneConfig) -> tuple[np.ndarray, GroupStructure]:
    """Per-material libraries of ``signatures_per_material`` variants each."""
    rng = _streams(cfg.seed)[1]
    grid = np.linspace(0.0, 1.0, cfg.bands)
    n_bumps = rng.integers(2, 5, size=cfg.k)
    # distinct bump centres across materials: shuffle a shared pool
    pool = rng.permutation(np.linspace(0.05, 0.95, int(n_bumps.sum())))
    shared = _bump_spectrum(rng, grid, rng.uniform(0.1, 0.9, size=3))
    cols = []
    offset = 0
    for l in range(cfg.k):
        centers = pool[offset:offset + n_bumps[l]]
        offset += n_bumps[l]
        own = _bump_spectrum(rng, grid, centers)
        base = (1.0 - cfg.contrast) * shared + cfg.contrast * own
        for _ in range(cfg.signatures_per_material):
            scale = rng.uniform(0.75, 1.25)
            # smooth additive perturbation: a few low-frequency cosines
            freqs = rng.uniform(0.5, MAX_PERTURBATION_FREQ, size=N_PERTURBATION_TERMS)
            phases = rng.uniform(0, 2 * np.pi, size=N_PERTURBATION_TERMS)
            amps = rng.normal(0, cfg.variability, size=N_PERTURBATION_TERMS)
            pert = (amps[:, None] * np.cos(2 * np.pi * freqs[:, None] * grid + phases[:, None])).sum(axis=0)
            cols.append(np.clip(scale * base + pert, 0.0, 1.5))
    B = np.stack(cols, axis=1)
    return B, GroupStructure([cfg.signatures_per_material] * cfg.k)


def mix_scene(M: np.ndarray, B: np.ndarray, groups: GroupStructure, cfg: SceneConfig) -> SceneTruth:
    """Mix with a per-pixel signature draw and add noise at ``cfg.snr_db``.

    ``snr_db = inf`` disables the noise.
    """
    k, n = M.shape
    if k != groups.k:
        raise ValueError(f"abundances have {k} materials, groups have {groups.k}")
    rng = _streams(cfg.seed)[2]
    sizes = np.asarray(groups.sizes)
    picks = (rng.random((k, n)) * sizes[:, None]).astype(int)
    active = picks + groups.starts[:, None]
    signal = np.zeros((B.shape[0], n))
    for l in range(k):
        signal += B[:, active[l]] * M[l]
    noise = rng.standard_normal(signal.shape)
    if math.isinf(cfg.snr_db):
        noise[:] = 0.0
    else:
        target = np.sum(signal**2) / 10.0 ** (cfg.snr_db / 10.0)
        noise *= math.sqrt(target / np.sum(noise**2))
    return SceneTruth(
        X=signal + noise, B=B, groups=groups, M=M, active_signature=active,
        signal=signal, noise=noise,
    )


def make_scene(cfg: SceneConfig) -> SceneTruth:
    M = generate_abundances(cfg)
    B, groups = generate_bundles(cfg)
    return mix_scene(M, B, groups, cfg)


def true_extended_abundance(truth: SceneTruth) -> np.ndarray:
    """r x n abundance placing each material's weight on its drawn signature."""
    A = np.zeros((truth.B.shape[1], truth.X.shape[1]))
    cols = np.arange(truth.X.shape[1])
    for l in range(truth.groups.k):
        A[truth.active_signature[l], cols] += truth.M[l]
    return A
