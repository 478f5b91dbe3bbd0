"""Pluggable condition encoders and multi-modal fusion.

The toy encoders stand in for large pretrained text/music/vocal models
while exposing the same interface: a token sequence becomes per-token
context features plus a pooled global feature taken at the EOS slot;
audio becomes per-frame band-energy features projected to a common
width, with learned placeholder rows substituting for absent
modalities. Real encoder outputs can be slotted in through the external
feature-file format instead.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, parameter
from .errors import ValidationError
from .mwnet import AttentionParams, time_wise_sa
from .nn import Module

UNK, EOS = 0, 1

DEFAULT_VOCAB = [
    "<unk>", "<eos>",
    "slow", "fast", "arm", "leg",
    "a", "dancer", "performs", "to", "music", "in", "male", "female",
    "dances", "speaker", "dance",
]

_PUNCT = re.compile(r"[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase whitespace tokenization with punctuation stripped."""
    return _PUNCT.sub(" ", text.lower()).split()


@dataclass
class ConditionBundle:
    """Encoded conditions consumed by both branches.

    text_seq: (L, d) or (B, L, d) context features; text_global the
    pooled EOS feature; audio_seq optional per-frame control features.
    """

    text_seq: Tensor | None = None
    text_global: Tensor | None = None
    text_mask: np.ndarray | None = None
    audio_seq: np.ndarray | None = None
    has_text: bool = False
    has_music: bool = False
    has_vocal: bool = False


class ToyTextEncoder(Module):
    """Embedding table plus one time-wise self-attention mixing layer."""

    def __init__(self, d: int, vocab: list[str] | None = None, heads: int = 2, seed: int = 1, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(seed)
        words = list(vocab) if vocab is not None else list(DEFAULT_VOCAB)
        self.vocab = {w: i for i, w in enumerate(words)}
        # unit-ish embedding scale keeps caption features (and their
        # gradients) on the same footing as the motion stream
        self.table = parameter((0.25 * rng.standard_normal((len(words), d))).astype(dtype))
        self.mix = AttentionParams(rng, d, heads, dtype)

    def ids(self, tokens: list[str]) -> np.ndarray:
        return np.array([self.vocab.get(t, UNK) for t in tokens] + [EOS], dtype=np.int64)


def encode_text(tokens: list[str], enc: ToyTextEncoder):
    """(text_seq, text_global) for one caption; EOS is always appended."""
    ids = enc.ids(tokens)
    emb = ad.embedding(enc.table, ids)  # (L, d)
    mixed = emb + time_wise_sa(emb, enc.mix)
    return mixed, mixed[ids.shape[0] - 1]


def encode_text_batch(token_lists: list[list[str]], enc: ToyTextEncoder):
    """Batched encoding with EOS padding; returns a ConditionBundle."""
    ids = [enc.ids(toks) for toks in token_lists]
    lengths = np.array([len(i) for i in ids])
    lmax = int(lengths.max())
    padded = np.full((len(ids), lmax), EOS, dtype=np.int64)
    mask = np.zeros((len(ids), lmax), dtype=bool)
    for i, row in enumerate(ids):
        padded[i, : len(row)] = row
        mask[i, : len(row)] = True
    emb = ad.embedding(enc.table, padded)  # (B, L, d)
    mixed = emb + time_wise_sa(emb, enc.mix, mask=mask)
    text_global = mixed[np.arange(len(ids)), lengths - 1]
    return ConditionBundle(text_seq=mixed, text_global=text_global, text_mask=mask, has_text=True)


class ToyAudioEncoder(Module):
    """Band-energy featurizer plus per-modality projections and placeholders."""

    def __init__(self, d_c: int = 32, bands: int = 8, seed: int = 2, dtype=np.float32):
        super().__init__()
        if d_c % 2 != 0:
            raise ValidationError("audio feature width must be even (two modality halves)")
        rng = np.random.default_rng(seed)
        half = d_c // 2
        self.bands = bands
        self.d_c = d_c
        self.music_proj = parameter((rng.standard_normal((bands, half)) / np.sqrt(bands)).astype(dtype))
        self.vocal_proj = parameter((rng.standard_normal((bands, half)) / np.sqrt(bands)).astype(dtype))
        self.music_placeholder = parameter((0.02 * rng.standard_normal(half)).astype(dtype))
        self.vocal_placeholder = parameter((0.02 * rng.standard_normal(half)).astype(dtype))

    def featurize(self, waveform: np.ndarray, sample_rate: float, fps: float) -> np.ndarray:
        """Per-frame log band energies at the motion frame rate."""
        waveform = np.asarray(waveform, dtype=np.float64).reshape(-1)
        hop = int(round(sample_rate / fps))
        if hop < 2 * self.bands:
            raise ValidationError("sample rate too low for the band count")
        n_frames = len(waveform) // hop
        if n_frames < 1:
            raise ValidationError("waveform shorter than one motion frame")
        segs = waveform[: n_frames * hop].reshape(n_frames, hop)
        power = np.abs(np.fft.rfft(segs, axis=1)) ** 2
        bins = power[:, 1:]  # drop DC
        edges = np.linspace(0, bins.shape[1], self.bands + 1).astype(int)
        feats = np.stack([bins[:, lo:hi].mean(axis=1) for lo, hi in zip(edges[:-1], edges[1:])], axis=1)
        return np.log1p(feats)


def fuse_audio(vocal: np.ndarray | None, music: np.ndarray | None, enc: ToyAudioEncoder, length: int = 1) -> np.ndarray:
    """Project each present modality to half width and concatenate.

    Absent modalities contribute their learned placeholder row; with
    both absent the result is `length` placeholder rows.
    """
    if music is not None and vocal is not None and len(music) != len(vocal):
        n = min(len(music), len(vocal))
        music, vocal = music[:n], vocal[:n]
    n = len(music) if music is not None else (len(vocal) if vocal is not None else length)
    if music is not None:
        m = np.asarray(music, dtype=np.float64) @ enc.music_proj.data.astype(np.float64)
    else:
        m = np.broadcast_to(enc.music_placeholder.data.astype(np.float64), (n, enc.d_c // 2))
    if vocal is not None:
        v = np.asarray(vocal, dtype=np.float64) @ enc.vocal_proj.data.astype(np.float64)
    else:
        v = np.broadcast_to(enc.vocal_placeholder.data.astype(np.float64), (n, enc.d_c // 2))
    return np.concatenate([m, v], axis=1)


def align_audio_to_motion(features: np.ndarray, audio_fps: float, num_frames: int, motion_fps: float) -> np.ndarray:
    """Nearest-frame resample onto the motion timeline, exactly num_frames rows.

    Audio shorter than the motion keeps repeating its last frame.
    """
    features = np.asarray(features)
    if features.ndim != 2 or len(features) == 0:
        raise ValidationError("audio features must be a non-empty 2-d array")
    if num_frames < 1:
        raise ValidationError("num_frames must be >= 1")
    idx = np.floor(np.arange(num_frames) * (audio_fps / motion_fps) + 0.5).astype(int)
    return features[np.minimum(idx, len(features) - 1)].copy()


def pseudo_caption(meta: dict) -> str:
    """Template caption from dance metadata; absent fields are dropped."""
    gender = meta.get("gender")
    genre = meta.get("genre")
    situation = meta.get("situation")
    subject = f"A {gender} dancer" if gender else "A dancer"
    action = f"performs {genre}" if genre else "performs"
    where = f" in {situation}" if situation else ""
    return f"{subject} {action}{where} to music."


def beat_click_waveform(times: np.ndarray, duration: float, sample_rate: float = 1600.0) -> np.ndarray:
    """Synthetic music: clicks at the beat times over a carrier whose
    loudness follows a raised-cosine bump between consecutive beats and
    whose pitch sweeps upward across each interval, so the band energies
    trace both the rhythm (quiet exactly on the beats) and the position
    within the current beat interval."""
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    if times.size == 0:
        return np.zeros(n)
    # extend the anchor grid over the full clip using the edge intervals
    gaps = np.diff(times)
    lead = gaps[0] if gaps.size else max(duration, 1.0)
    tail = gaps[-1] if gaps.size else max(duration, 1.0)
    anchors = list(times)
    while anchors[0] > 0:
        anchors.insert(0, anchors[0] - lead)
    while anchors[-1] < duration:
        anchors.append(anchors[-1] + tail)
    anchors = np.asarray(anchors)
    seg = np.clip(np.searchsorted(anchors, t, side="right") - 1, 0, len(anchors) - 2)
    u = (t - anchors[seg]) / (anchors[seg + 1] - anchors[seg])
    envelope = (0.5 * (1.0 - np.cos(2.0 * np.pi * u))) ** 2  # loudness traces the dance speed profile
    freq = 120.0 + 500.0 * u  # pitch encodes the beat phase
    phase = 2.0 * np.pi * np.cumsum(freq) / sample_rate
    wav = 0.8 * envelope * np.sin(phase)
    click_len = max(1, int(0.01 * sample_rate))
    burst = np.sin(2.0 * np.pi * 760.0 * np.arange(click_len) / sample_rate) * np.hanning(click_len)
    for b in times:
        i = int(round(b * sample_rate))
        j = min(n, i + click_len)
        if i < n:
            wav[i:j] += burst[: j - i]
    return wav


def control_features_from_beats(times, num_frames: int, fps: float, enc: ToyAudioEncoder) -> np.ndarray:
    """Beat times -> synthetic waveform -> band energies -> fused, aligned features."""
    duration = num_frames / fps
    sr = 80.0 * fps
    wav = beat_click_waveform(np.asarray(times, dtype=np.float64), duration, sr)
    feats = enc.featurize(wav, sr, fps)
    fused = fuse_audio(None, feats, enc, length=num_frames)
    return align_audio_to_motion(fused, fps, num_frames, fps)


def make_null_condition(enc: ToyTextEncoder) -> ConditionBundle:
    """Unconditioned bundle: the empty caption (EOS only)."""
    return encode_text_batch([[]], enc)
