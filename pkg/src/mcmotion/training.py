"""Two-stage training, synthetic data with known conditional structure,
sampling helpers, and finite-difference gradient verification.

Toy samples move one joint on a circle so the caption is recoverable
from the signal: the speed word sets the rotation frequency (visible as
the zero-crossing rate of the active channels) and the body-part word
picks the joint. Control-tracked samples instead advance the circle
with a raised-cosine speed profile between beat times, so the motion
halts exactly on the beats and the kinematic beat track coincides with
the control track by construction.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .bridge import McmModel, build_mcm, mcm_forward, set_stage
from .conditioning import (
    ConditionBundle,
    ToyAudioEncoder,
    ToyTextEncoder,
    control_features_from_beats,
    encode_text_batch,
)
from .errors import ConfigError, NumericError, ValidationError
from .metrics import BeatTrack
from .motion import FRAME_DIM, JOINT_POS, JOINT_VEL, MotionSequence
from .mwnet import ModelConfig, MwNetModel, mwnet_forward
from .nn import Adam, param_checksum
from .schedule import PredictionTarget, linear_beta_schedule, q_sample, sample_loop
from . import fileio

SLOW_HZ, FAST_HZ = 0.5, 2.0
# joint chains driven by the body-part word; the last entry is the joint
# whose x channel the caption checks ride on
ARM_CHAIN = (13, 16, 18, 20)  # L_collar, L_shoulder, L_elbow, L_wrist
LEG_CHAIN = (1, 4, 10, 7)  # L_hip, L_knee, L_foot, L_ankle
ARM_JOINT, LEG_JOINT = ARM_CHAIN[-1], LEG_CHAIN[-1]
ACTIVE_AMPLITUDE = 0.8
ROOT_HEIGHT_M = 0.9
CONTACT_JOINTS = (7, 10, 8, 11)  # L/R heel and toe stand-ins
CONTACT_THRESHOLD = 0.002


@dataclass
class TrainConfig:
    stage: int = 1
    lr: float = 2e-4
    batch: int = 16
    epochs: int = 400
    target: PredictionTarget = PredictionTarget.PREDICT_X0
    seed: int = 0
    t_diff: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if isinstance(self.target, str):
            self.target = PredictionTarget.parse(self.target)
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        if self.stage not in (1, 2):
            raise ValidationError(f"stage must be 1 or 2, got {self.stage}")


@dataclass
class ToySample:
    motion: MotionSequence
    tokens: list[str]
    beats: BeatTrack | None = None
    meta: dict = field(default_factory=dict)


def active_channels(joint: int) -> tuple[int, int]:
    """263-vector channels of the x/y coordinates of a non-root joint."""
    base = JOINT_POS.start + (joint - 1) * 3
    return base, base + 1


def _phase_anchors(beats: np.ndarray, duration: float) -> np.ndarray:
    """Extend the beat grid over [0, duration] using the edge intervals."""
    if beats.size == 0:
        raise ValidationError("need at least one beat to anchor the phase")
    gaps = np.diff(beats)
    lead = gaps[0] if gaps.size else duration
    tail = gaps[-1] if gaps.size else duration
    anchors = list(beats)
    while anchors[0] > 0:
        anchors.insert(0, anchors[0] - lead)
    while anchors[-1] < duration:
        anchors.append(anchors[-1] + tail)
    return np.asarray(anchors)


def _control_phase(t: np.ndarray, beats: np.ndarray, turns: int) -> np.ndarray:
    """Rotation angle advancing `turns` per beat interval with angular
    speed proportional to (1 - cos(2 pi u))^2: the motion dwells at the
    beats (wide flat halts) and bursts through the interval middle."""
    anchors = _phase_anchors(beats, float(t[-1]) if len(t) else 1.0)
    seg = np.clip(np.searchsorted(anchors, t, side="right") - 1, 0, len(anchors) - 2)
    u = (t - anchors[seg]) / (anchors[seg + 1] - anchors[seg])
    # integral of (1 - cos(2 pi v))^2 over [0, u], normalized to 1 at u=1
    ramp = (1.5 * u - np.sin(2.0 * np.pi * u) / np.pi + np.sin(4.0 * np.pi * u) / (8.0 * np.pi)) / 1.5
    return 2.0 * np.pi * turns * (seg + ramp)


def _assemble_frames(theta: np.ndarray, joints) -> np.ndarray:
    from .motion import detect_foot_contacts

    t = theta.shape[0]
    frames = np.zeros((t, FRAME_DIM), dtype=np.float64)
    frames[:, 3] = ROOT_HEIGHT_M
    for joint in joints:
        c0, c1 = active_channels(joint)
        frames[:, c0] = ACTIVE_AMPLITUDE * np.cos(theta)
        frames[:, c1] = ACTIVE_AMPLITUDE * np.sin(theta)
    pos = frames[:, JOINT_POS].reshape(t, 21, 3)
    vel = np.zeros((t, 22, 3))
    vel[:-1, 1:] = pos[1:] - pos[:-1]
    if t > 1:
        vel[-1] = vel[-2]
    frames[:, JOINT_VEL] = vel.reshape(t, 66)
    speeds = np.linalg.norm(vel[:, CONTACT_JOINTS, :], axis=2)
    frames[:, 259:263] = detect_foot_contacts(speeds, CONTACT_THRESHOLD)
    return frames


def make_toy_dataset(n: int, frames: int, seed: int, with_control: bool = False, fps: float = 20.0) -> list[ToySample]:
    """Synthesize n captioned motions; bit-identical for a given seed."""
    rng = np.random.default_rng(seed)
    out = []
    times = np.arange(frames) / fps
    duration = frames / fps
    for _ in range(n):
        speed_word = "slow" if rng.integers(2) == 0 else "fast"
        part_word = "arm" if rng.integers(2) == 0 else "leg"
        chain = ARM_CHAIN if part_word == "arm" else LEG_CHAIN
        freq = SLOW_HZ if speed_word == "slow" else FAST_HZ
        if with_control:
            period = min(rng.uniform(2.0, 3.0), max(0.5, duration / 2.0))
            first = rng.uniform(0.5 * period, period)
            beats = np.arange(first, duration, period)
            if beats.size == 0:
                beats = np.array([duration / 2.0])
            turns = 1 if speed_word == "slow" else 2
            theta = _control_phase(times, beats, turns)
            track = BeatTrack(times=beats)
            meta = {"part": part_word, "joint": chain[-1], "period": float(period), "turns": turns}
        else:
            theta = 2.0 * np.pi * freq * times
            track = None
            meta = {"part": part_word, "joint": chain[-1], "frequency": freq}
        motion = MotionSequence(frames=_assemble_frames(theta, chain), fps=fps, label=f"{speed_word} {part_word}")
        out.append(ToySample(motion=motion, tokens=[speed_word, part_word], beats=track, meta=meta))
    return out


def zero_crossings(x: np.ndarray) -> int:
    """Strict sign changes between consecutive samples."""
    x = np.asarray(x, dtype=np.float64)
    return int(np.sum(x[:-1] * x[1:] < 0))


def dominant_frequency(x: np.ndarray, fps: float) -> float:
    """Frequency estimate from the zero-crossing count."""
    duration = len(x) / fps
    return zero_crossings(x) / (2.0 * duration)


def mse_loss(pred, target):
    """Mean squared error over every entry."""
    return ad.mean(ad.square(pred - ad.astensor(target)))


def _epoch_record(epoch: int, losses: list[float], t0: float, params) -> dict:
    return {
        "epoch": epoch,
        "loss": float(np.mean(losses)),
        "wall_ms": int((time.monotonic() - t0) * 1000),
        "checksum": param_checksum(params),
    }


def train_stage1(model: MwNetModel, data: list[ToySample], cfg: TrainConfig) -> list[dict]:
    """Text-to-motion stage: Adam on (x0, t, eps) triples over the whole model."""
    if not data:
        raise ValidationError("empty dataset")
    sched = linear_beta_schedule(cfg.t_diff, cfg.beta_start, cfg.beta_end)
    rng = np.random.default_rng(cfg.seed)
    dtype = model.cfg.np_dtype
    params = model.named_parameters()
    opt = Adam(params, lr=cfg.lr)
    x0_all = np.stack([s.motion.frames for s in data]).astype(dtype)
    tokens = [s.tokens for s in data]
    log = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.monotonic()
        perm = rng.permutation(len(data))
        losses = []
        for lo in range(0, len(data), cfg.batch):
            idx = perm[lo : lo + cfg.batch]
            losses.append(_train_step(model, None, x0_all[idx], [tokens[i] for i in idx], None, sched, cfg, rng, opt))
        log.append(_epoch_record(epoch, losses, t0, params))
    return log


def train_stage2(mcm: McmModel, data: list[ToySample], cfg: TrainConfig, audio_enc: ToyAudioEncoder | None = None) -> list[dict]:
    """Control stage: only control branch, bridges, and control_in move."""
    if cfg.stage != 2:
        raise ValidationError("train_stage2 requires cfg.stage == 2")
    if mcm.stage != 2:
        raise ValidationError("call set_stage(model, 2) before stage-2 training")
    if not data:
        raise ValidationError("empty dataset")
    if any(s.beats is None for s in data):
        raise ValidationError("stage-2 data needs a control track on every sample")
    sched = linear_beta_schedule(cfg.t_diff, cfg.beta_start, cfg.beta_end)
    rng = np.random.default_rng(cfg.seed)
    dtype = mcm.cfg.np_dtype
    enc = audio_enc if audio_enc is not None else default_audio_encoder(mcm.cfg)
    params = mcm.trainable_parameters()
    opt = Adam(params, lr=cfg.lr)
    x0_all = np.stack([s.motion.frames for s in data]).astype(dtype)
    tokens = [s.tokens for s in data]
    fps = data[0].motion.fps
    frames = x0_all.shape[1]
    sig_all = np.stack([control_features_from_beats(s.beats.times, frames, fps, enc) for s in data]).astype(dtype)
    log = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.monotonic()
        perm = rng.permutation(len(data))
        losses = []
        for lo in range(0, len(data), cfg.batch):
            idx = perm[lo : lo + cfg.batch]
            losses.append(_train_step(None, mcm, x0_all[idx], [tokens[i] for i in idx], sig_all[idx], sched, cfg, rng, opt))
        log.append(_epoch_record(epoch, losses, t0, mcm.named_parameters()))
    return log


def _train_step(model, mcm, x0, token_lists, control_sig, sched, cfg, rng, opt) -> float:
    t = rng.integers(0, cfg.t_diff, size=x0.shape[0])
    eps = rng.standard_normal(x0.shape, dtype=x0.dtype)
    x_t = q_sample(x0, t, eps, sched)
    if mcm is not None:
        bundle = encode_text_batch(token_lists, mcm.main.text_encoder)
        pred = mcm_forward(x_t, t, bundle, control_sig, mcm)
        owner = mcm
    else:
        bundle = encode_text_batch(token_lists, model.text_encoder)
        pred = mwnet_forward(x_t, t, bundle, model)
        owner = model
    target = x0 if cfg.target is PredictionTarget.PREDICT_X0 else eps
    loss = mse_loss(pred, target)
    if not np.isfinite(loss.data):
        raise NumericError("loss became non-finite")
    owner.zero_grad()
    loss.backward()
    opt.step()
    return float(loss.data)


def default_text_encoder(cfg: ModelConfig) -> ToyTextEncoder:
    return ToyTextEncoder(cfg.d, seed=cfg.init_seed + 1, dtype=cfg.np_dtype)


def default_audio_encoder(cfg: ModelConfig) -> ToyAudioEncoder:
    return ToyAudioEncoder(d_c=cfg.d_c, seed=cfg.init_seed + 2, dtype=cfg.np_dtype)


def build_model(cfg: ModelConfig) -> MwNetModel:
    return MwNetModel(cfg, text_encoder=default_text_encoder(cfg))


def sample_motion(
    model,
    caption_tokens: list[str],
    frames: int,
    sched,
    rng,
    mode: PredictionTarget,
    control_beats=None,
    control_features=None,
    text_features=None,
    audio_enc: ToyAudioEncoder | None = None,
    guidance: float | None = None,
    posterior_noise: bool = True,
    fps: float = 20.0,
) -> MotionSequence:
    """Reverse-chain generation bound to a caption (and optionally beats).

    control_features (T x d_c) bypasses the beat-to-waveform pipeline;
    text_features (L x d, pooled feature in the last row) bypasses the
    toy text encoder, e.g. to slot in a real encoder's output.
    """
    is_mcm = isinstance(model, McmModel)
    text_encoder = model.main.text_encoder if is_mcm else model.text_encoder
    if text_features is not None:
        feats = np.asarray(text_features, dtype=model.cfg.np_dtype)
        bundle = ConditionBundle(text_seq=ad.Tensor(feats[None]), text_global=ad.Tensor(feats[None, -1]), has_text=True)
    else:
        bundle = encode_text_batch([caption_tokens], text_encoder)
    null_bundle = encode_text_batch([[]], text_encoder) if guidance is not None else None
    control_sig = None
    if is_mcm:
        if control_features is not None:
            control_sig = np.asarray(control_features, dtype=model.cfg.np_dtype)
            if control_sig.shape[0] != frames:
                raise ValidationError(f"control features have {control_sig.shape[0]} rows, need {frames}")
        elif control_beats is not None:
            enc = audio_enc if audio_enc is not None else default_audio_encoder(model.cfg)
            control_sig = control_features_from_beats(np.asarray(control_beats, dtype=np.float64), frames, fps, enc)
            control_sig = control_sig.astype(model.cfg.np_dtype)
        else:
            raise ValidationError("an MCM model needs control beats or features (or sample its main branch)")

    def pred_fn(x_t, t):
        if is_mcm:
            out = mcm_forward(x_t, t, bundle, control_sig, model).data
            if guidance is not None:
                base = mcm_forward(x_t, t, null_bundle, control_sig, model).data
                out = base + guidance * (out - base)
        else:
            out = mwnet_forward(x_t, t, bundle, model).data
            if guidance is not None:
                base = mwnet_forward(x_t, t, null_bundle, model).data
                out = base + guidance * (out - base)
        return out

    dtype = model.cfg.np_dtype
    x = sample_loop(pred_fn, frames, sched, rng, mode, dim=FRAME_DIM, posterior_noise=posterior_noise, dtype=dtype)
    return MotionSequence(frames=x, fps=fps, label=" ".join(caption_tokens))


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float]

    @property
    def passed(self) -> bool:
        return self.max_rel_error < 1e-4


def grad_check(model, x_t, t, tokens, h: float = 1e-5, param_names=None, control_sig=None) -> GradCheckReport:
    """Central differences against the tape gradient of 0.5 * ||forward||^2.

    Requires a float64 model; perturbs every entry of every requested
    parameter tensor. The caption is re-encoded inside the loss so the
    check also covers the text-encoder parameters.
    """
    params = model.named_parameters()
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise ConfigError(f"gradient check requires a float64 model (found {p.data.dtype} in {name})")
    if param_names is not None:
        missing = [n for n in param_names if n not in params]
        if missing:
            raise ValidationError(f"unknown parameters requested: {missing}")
        params = {n: params[n] for n in param_names}
    is_mcm = isinstance(model, McmModel)
    encoder = model.main.text_encoder if is_mcm else model.text_encoder

    def loss_value():
        cond = encode_text_batch([tokens], encoder)
        if is_mcm:
            out = mcm_forward(x_t, t, cond, control_sig, model)
        else:
            out = mwnet_forward(x_t, t, cond, model)
        return ad.mul(ad.sum_(ad.square(out)), 0.5)

    model.zero_grad()
    loss_value().backward()
    analytic = {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for n, p in params.items()}
    per_param = {}
    for name, p in params.items():
        worst = 0.0
        ga = analytic[name].reshape(-1)
        for i in range(p.data.size):
            orig = p.data.flat[i]
            p.data.flat[i] = orig + h
            lp = float(loss_value().data)
            p.data.flat[i] = orig - h
            lm = float(loss_value().data)
            p.data.flat[i] = orig
            numeric = (lp - lm) / (2.0 * h)
            rel = abs(ga[i] - numeric) / max(abs(ga[i]), abs(numeric), 1e-6)
            worst = max(worst, rel)
        per_param[name] = worst
    return GradCheckReport(max_rel_error=max(per_param.values()), per_param=per_param)


def save_model(path, model, stage: int, extra_meta: dict | None = None) -> None:
    """Write an MCMW checkpoint with the model config in the manifest."""
    is_mcm = isinstance(model, McmModel)
    cfg = model.cfg
    enc = model.main.text_encoder if is_mcm else model.text_encoder
    meta = {
        "kind": "mcm" if is_mcm else "mwnet",
        "stage": stage,
        "config": {**asdict(cfg), "layout": cfg.layout.value},
        "vocab": [w for w, _ in sorted(enc.vocab.items(), key=lambda kv: kv[1])],
    }
    if extra_meta:
        meta.update(extra_meta)
    fileio.write_checkpoint(path, model.named_parameters(), meta)


def load_model(path):
    """Rebuild the model named in a checkpoint and restore its parameters."""
    arrays, meta = fileio.read_checkpoint(path)
    cfg = ModelConfig(**meta["config"])
    text_enc = ToyTextEncoder(cfg.d, vocab=meta["vocab"], seed=cfg.init_seed + 1, dtype=cfg.np_dtype)
    main = MwNetModel(cfg, text_encoder=text_enc)
    if meta["kind"] == "mwnet":
        model = main
    else:
        model = build_mcm(main, d_c=cfg.d_c)
        set_stage(model, meta.get("stage", 2))
    params = model.named_parameters()
    missing = set(params) ^ set(arrays)
    if missing:
        raise ValidationError(f"checkpoint parameter names do not match the model: {sorted(missing)[:4]}...")
    for name, p in params.items():
        arr = arrays[name]
        if tuple(arr.shape) != tuple(p.data.shape):
            raise ValidationError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
        p.data = arr.astype(cfg.np_dtype)
    return model, meta
