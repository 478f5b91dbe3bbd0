"""Evaluation metrics: kinetic features, Frechet distance, diversity,
beat tracks and beat alignment, R-precision, multimodal distance and
multimodality.

All metrics are pure functions; anything stochastic takes an explicit
rng so results are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, EmptyDanceTrackError, EmptyMusicTrackError, ValidationError


@dataclass(frozen=True)
class KineticFeature:
    """Per-joint per-axis mean kinetic energy, flattened to 3J."""

    values: np.ndarray


@dataclass(frozen=True)
class BeatTrack:
    """Strictly increasing, non-negative beat timestamps in seconds."""

    times: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=np.float64).reshape(-1))
        if self.times.size and (np.any(np.diff(self.times) <= 0) or self.times[0] < 0):
            raise ValidationError("beat times must be non-negative and strictly increasing")

    def __len__(self):
        return self.times.size


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self):
        if self.cov.shape != (self.mean.shape[0], self.mean.shape[0]):
            raise DimensionError("covariance shape must match the mean dimension")
        if not np.allclose(self.cov, self.cov.T, atol=1e-9):
            raise ValidationError("covariance must be symmetric")
        if self.n < 2:
            raise ValidationError("need at least two samples behind the statistics")


def gaussian_stats(features: np.ndarray) -> GaussianStats:
    """Mean and unbiased covariance of an N x k feature matrix."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValidationError("need an N x k feature matrix with N >= 2")
    mean = features.mean(axis=0)
    cov = np.cov(features, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    return GaussianStats(mean=mean, cov=cov, n=features.shape[0])


def kinetic_features(positions: np.ndarray, fps: float) -> KineticFeature:
    """Mean kinetic energy (1/2 v^2) per joint and axis from T x J x 3 positions."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 3 or positions.shape[2] != 3:
        raise DimensionError(f"positions must be T x J x 3, got {positions.shape}")
    if positions.shape[0] < 2:
        raise ValidationError("need at least two frames for velocities")
    vel = (positions[1:] - positions[:-1]) * fps
    energy = 0.5 * (vel**2).mean(axis=0)
    return KineticFeature(values=energy.reshape(-1))


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    w, q = np.linalg.eigh(mat)
    w = np.clip(w, 0.0, None)
    return (q * np.sqrt(w)) @ q.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    The cross term uses the symmetric eigen route on
    S_a^{1/2} S_b S_a^{1/2} with eigenvalues clamped at zero.
    """
    if a.mean.shape != b.mean.shape:
        raise ValidationError("feature dimensions differ")
    diff = a.mean - b.mean
    a_half = _psd_sqrt(a.cov)
    inner = a_half @ b.cov @ a_half
    w = np.clip(np.linalg.eigvalsh(inner), 0.0, None)
    tr_cross = np.sqrt(w).sum()
    return float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * tr_cross)


def diversity(features: np.ndarray, num_pairs: int | None, rng=None) -> float:
    """Mean Euclidean distance over random distinct-index pairs.

    num_pairs=None averages over all unordered pairs exhaustively.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n < 2:
        raise ValidationError("diversity needs at least two feature rows")
    if num_pairs is None:
        iu = np.triu_indices(n, k=1)
        d = np.linalg.norm(features[iu[0]] - features[iu[1]], axis=1)
        return float(d.mean())
    if rng is None:
        raise ValidationError("sampled diversity needs an rng")
    i = rng.integers(0, n, size=num_pairs)
    j = rng.integers(0, n - 1, size=num_pairs)
    j = np.where(j >= i, j + 1, j)  # distinct indices
    return float(np.linalg.norm(features[i] - features[j], axis=1).mean())


def smooth_speed_curve(positions: np.ndarray, smooth_window: int = 5) -> np.ndarray:
    """Joint-mean speed per frame step, centered-moving-average smoothed."""
    positions = np.asarray(positions, dtype=np.float64)
    vel = positions[1:] - positions[:-1]
    speed = np.linalg.norm(vel, axis=2).mean(axis=1)
    if smooth_window < 1 or smooth_window % 2 == 0:
        raise ValidationError("smooth_window must be a positive odd integer")
    if smooth_window == 1 or speed.size < smooth_window:
        return speed
    pad = smooth_window // 2
    padded = np.pad(speed, pad, mode="edge")
    kernel = np.ones(smooth_window) / smooth_window
    return np.convolve(padded, kernel, mode="valid")


def kinematic_beats(positions: np.ndarray, fps: float, smooth_window: int = 5) -> BeatTrack:
    """Strict local minima of the smoothed speed curve; plateaus do not count."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape[0] < 3:
        return BeatTrack(times=np.empty(0))
    s = smooth_speed_curve(positions, smooth_window)
    interior = (s[1:-1] < s[:-2]) & (s[1:-1] < s[2:])
    idx = np.flatnonzero(interior) + 1
    return BeatTrack(times=idx / fps)


def beat_align_score(music: BeatTrack, dance: BeatTrack, sigma: float = 3.0) -> float:
    """Mean Gaussian-kernel proximity of each music beat to its nearest dance beat."""
    if len(music) == 0:
        raise EmptyMusicTrackError("music beat track is empty")
    if len(dance) == 0:
        raise EmptyDanceTrackError("dance beat track is empty")
    d2 = (music.times[:, None] - dance.times[None, :]) ** 2
    nearest = d2.min(axis=1)
    return float(np.exp(-nearest / (2.0 * sigma**2)).mean())


def r_precision(motion_feats: np.ndarray, text_feats: np.ndarray, k_top: int, batch: int = 32, rng=None) -> float:
    """Fraction of items whose own caption ranks in the Euclidean top-k
    within a batch of candidates."""
    motion_feats = np.asarray(motion_feats, dtype=np.float64)
    text_feats = np.asarray(text_feats, dtype=np.float64)
    if motion_feats.shape != text_feats.shape:
        raise ValidationError("motion and text feature arrays must have the same shape")
    n = motion_feats.shape[0]
    if k_top < 1:
        raise ValidationError("k_top must be >= 1")
    order = np.arange(n) if rng is None else rng.permutation(n)
    hits, total = 0, 0
    for lo in range(0, n, batch):
        idx = order[lo : lo + batch]
        if len(idx) < 2:
            continue
        m = motion_feats[idx]
        t = text_feats[idx]
        d = np.linalg.norm(m[:, None, :] - t[None, :, :], axis=2)
        own = np.diagonal(d)
        rank = (d < own[:, None]).sum(axis=1)
        hits += int((rank < k_top).sum())
        total += len(idx)
    if total == 0:
        raise ValidationError("not enough items for any batch")
    return hits / total


def multimodal_distance(motion_feats: np.ndarray, text_feats: np.ndarray) -> float:
    """Mean distance between paired motion and caption features."""
    motion_feats = np.asarray(motion_feats, dtype=np.float64)
    text_feats = np.asarray(text_feats, dtype=np.float64)
    if motion_feats.shape != text_feats.shape:
        raise ValidationError("motion and text feature arrays must have the same shape")
    return float(np.linalg.norm(motion_feats - text_feats, axis=1).mean())


def multimodality(groups: list, num_pairs: int | None = None, rng=None) -> float:
    """Mean within-group pairwise distance, averaged over caption groups."""
    if not groups:
        raise ValidationError("need at least one generation group")
    per_group = [diversity(np.asarray(g), num_pairs, rng) for g in groups]
    return float(np.mean(per_group))
