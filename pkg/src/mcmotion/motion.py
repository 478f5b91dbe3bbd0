"""263-dim per-frame motion representation: packing, kinematics, slicing.

Frame layout (offsets into the 263-vector):
    0      root angular velocity around Y (rad/frame)
    1:3    root linear velocity on the XZ plane (m/frame)
    3      root height (m)
    4:67   21 non-root joint positions in root space (21 x 3)
    67:193 21 non-root joint rotations, 6d form (21 x 6)
    193:259 22 joint velocities (22 x 3, m/frame)
    259:263 4 binary foot-contact flags

Velocities are stored per frame, not per second; resampling rescales
them so the physical velocity is preserved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, UnsupportedError, ValidationError

FRAME_DIM = 263
NUM_JOINTS = 22
CANONICAL_FPS = 20.0

SEGMENT_SIZES = (1, 2, 1, 63, 126, 66, 4)
SEGMENT_OFFSETS = (0, 1, 3, 4, 67, 193, 259)

ROOT_ANG_VEL = slice(0, 1)
ROOT_LIN_VEL = slice(1, 3)
ROOT_HEIGHT = slice(3, 4)
JOINT_POS = slice(4, 67)
JOINT_ROT = slice(67, 193)
JOINT_VEL = slice(193, 259)
FOOT_CONTACTS = slice(259, 263)

# channels holding per-frame velocities (rescaled on fps change)
VELOCITY_CHANNELS = np.r_[0, 1:3, 193:259]


@dataclass
class MotionFrame:
    """Structured view of one 263-dim frame vector."""

    root_ang_vel: float
    root_lin_vel: np.ndarray  # (2,)
    root_height: float
    joint_pos: np.ndarray  # (21, 3)
    joint_rot: np.ndarray  # (21, 6)
    joint_vel: np.ndarray  # (22, 3)
    foot_contacts: np.ndarray  # (4,)


@dataclass
class MotionSequence:
    """T x 263 frame matrix with fps and an optional caption."""

    frames: np.ndarray
    fps: float = CANONICAL_FPS
    label: str | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2 or self.frames.shape[1] != FRAME_DIM:
            raise DimensionError(f"frames must be T x {FRAME_DIM}, got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise ValidationError("a motion sequence needs at least one frame")
        if self.fps <= 0:
            raise ValidationError(f"fps must be positive, got {self.fps}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def duration(self) -> float:
        return self.frames.shape[0] / self.fps

    def validate_contacts(self) -> bool:
        """True when every foot-contact channel is exactly 0 or 1."""
        c = self.frames[:, FOOT_CONTACTS]
        return bool(np.all((c == 0.0) | (c == 1.0)))


def pack_frame(frame: MotionFrame) -> np.ndarray:
    """Concatenate frame components into the 263-vector."""
    parts = [
        np.atleast_1d(np.asarray(frame.root_ang_vel, dtype=float)),
        np.asarray(frame.root_lin_vel, dtype=float).reshape(-1),
        np.atleast_1d(np.asarray(frame.root_height, dtype=float)),
        np.asarray(frame.joint_pos, dtype=float).reshape(-1),
        np.asarray(frame.joint_rot, dtype=float).reshape(-1),
        np.asarray(frame.joint_vel, dtype=float).reshape(-1),
        np.asarray(frame.foot_contacts, dtype=float).reshape(-1),
    ]
    for part, size in zip(parts, SEGMENT_SIZES):
        if part.shape[0] != size:
            raise DimensionError(f"segment sizes must be {SEGMENT_SIZES}, got length {part.shape[0]} where {size} expected")
    return np.concatenate(parts)


def unpack_frame(v: np.ndarray) -> MotionFrame:
    """Inverse of pack_frame."""
    v = np.asarray(v).reshape(-1)
    if v.shape[0] != FRAME_DIM:
        raise DimensionError(f"frame vector must have length {FRAME_DIM}, got {v.shape[0]}")
    return MotionFrame(
        root_ang_vel=float(v[0]),
        root_lin_vel=v[ROOT_LIN_VEL].copy(),
        root_height=float(v[3]),
        joint_pos=v[JOINT_POS].reshape(21, 3).copy(),
        joint_rot=v[JOINT_ROT].reshape(21, 6).copy(),
        joint_vel=v[JOINT_VEL].reshape(22, 3).copy(),
        foot_contacts=v[FOOT_CONTACTS].copy(),
    )


def detect_foot_contacts(heel_toe_speeds: np.ndarray, threshold: float) -> np.ndarray:
    """Contact flag is 1 iff speed < threshold (strict; ties give 0)."""
    speeds = np.asarray(heel_toe_speeds, dtype=float)
    if np.any(speeds < 0):
        raise ValidationError("joint speeds must be non-negative")
    if threshold <= 0:
        raise ValidationError("contact threshold must be positive")
    return (speeds < threshold).astype(float)


def resample_fps(seq: MotionSequence, dst_fps: float) -> MotionSequence:
    """Downsample to dst_fps, rescaling per-frame velocity channels.

    Integer ratios decimate exactly (frames 0, r, 2r, ...); other
    rational ratios pick the nearest source frame per target time,
    dropping a trailing target frame whose nearest source position
    would fall within half a stride of the end (avoids a duplicated
    final frame).
    """
    if dst_fps <= 0:
        raise ValidationError("dst_fps must be positive")
    if dst_fps > seq.fps:
        raise UnsupportedError(f"upsampling {seq.fps} -> {dst_fps} fps is not supported")
    ratio = seq.fps / dst_fps
    t = seq.num_frames
    if abs(ratio - round(ratio)) < 1e-9:
        r = int(round(ratio))
        idx = np.arange(0, t, r)
    else:
        positions = []
        i = 0
        while i * ratio <= (t - 1) - ratio / 2.0:
            positions.append(i * ratio)
            i += 1
        if not positions:
            positions = [0.0]
        idx = np.floor(np.asarray(positions) + 0.5).astype(int)
    frames = seq.frames[idx].copy()
    frames[:, VELOCITY_CHANNELS] *= ratio
    return MotionSequence(frames=frames, fps=dst_fps, label=seq.label)


def integrate_root(seq: MotionSequence) -> tuple[np.ndarray, np.ndarray]:
    """World root trajectory: (T x 3 positions, T heading angles).

    heading_t is the prefix sum of the angular-velocity channel with
    heading_0 = 0; each step rotates the local XZ velocity by the
    heading at the step's start frame. Y is the height channel.
    """
    f = seq.frames
    t = seq.num_frames
    ang = f[:, 0]
    headings = np.zeros(t, dtype=float)
    headings[1:] = np.cumsum(ang[:-1])
    positions = np.zeros((t, 3), dtype=float)
    positions[:, 1] = f[:, 3]
    cos_h, sin_h = np.cos(headings[:-1]), np.sin(headings[:-1])
    vx, vz = f[:-1, 1], f[:-1, 2]
    # Y-up right-handed rotation of the local XZ step
    step_x = cos_h * vx + sin_h * vz
    step_z = -sin_h * vx + cos_h * vz
    positions[1:, 0] = np.cumsum(step_x)
    positions[1:, 2] = np.cumsum(step_z)
    return positions, headings


def joints_world(seq: MotionSequence) -> np.ndarray:
    """T x 22 x 3 world joint positions.

    The root joint sits at the integrated root position (XZ from the
    velocity integral, Y from the height channel); non-root joints are
    their root-space positions rotated by the heading and translated by
    the root's XZ offset.
    """
    positions, headings = integrate_root(seq)
    t = seq.num_frames
    local = seq.frames[:, JOINT_POS].reshape(t, 21, 3)
    cos_h, sin_h = np.cos(headings), np.sin(headings)
    out = np.zeros((t, NUM_JOINTS, 3), dtype=float)
    out[:, 0] = positions
    wx = cos_h[:, None] * local[:, :, 0] + sin_h[:, None] * local[:, :, 2]
    wz = -sin_h[:, None] * local[:, :, 0] + cos_h[:, None] * local[:, :, 2]
    out[:, 1:, 0] = wx + positions[:, None, 0]
    out[:, 1:, 1] = local[:, :, 1]
    out[:, 1:, 2] = wz + positions[:, None, 2]
    return out


def slice_sequence(seq: MotionSequence, max_seconds: float = 10.0, stride_seconds: float = 1.0) -> list[MotionSequence]:
    """Cut into windows of at most max_seconds at the given stride.

    Window starts advance by the stride until a window reaches the clip
    end; the final window is clipped to the remaining frames.
    """
    if max_seconds <= 0 or stride_seconds <= 0:
        raise ValidationError("slice window and stride must be positive")
    window = max(1, int(round(max_seconds * seq.fps)))
    stride = max(1, int(round(stride_seconds * seq.fps)))
    t = seq.num_frames
    starts = [0]
    while starts[-1] + window < t:
        starts.append(starts[-1] + stride)
    out = []
    for s in starts:
        frames = seq.frames[s : s + window].copy()
        out.append(MotionSequence(frames=frames, fps=seq.fps, label=seq.label))
    return out
