"""Two-branch composition: frozen main denoiser plus a control branch.

The control branch is a parameter copy of the main branch. Its block
outputs pass through zero-initialized per-frame linear bridges and are
added to the inputs of the corresponding main-branch blocks, so a fresh
build is exactly the main branch; training the bridges then blends the
control signal in without touching main-branch weights.
"""

from __future__ import annotations

import copy

import numpy as np

from . import autodiff as ad
from .autodiff import parameter
from .errors import ValidationError
from .mwnet import MwNetModel
from .nn import Linear, Module, param_checksum


class BridgeModule(Module):
    """Per-frame linear map, weight and bias exactly zero at construction."""

    def __init__(self, d: int, dtype=np.float32):
        super().__init__()
        self.weight = parameter(np.zeros((d, d), dtype=dtype))
        self.bias = parameter(np.zeros(d, dtype=dtype))

    def __call__(self, x):
        return x @ self.weight + self.bias


class McmModel(Module):
    """Main branch, control branch, bridges, and the control-input projection."""

    def __init__(self, main: MwNetModel, d_c: int | None = None, control_seed: int = 7):
        super().__init__()
        cfg = main.cfg
        dtype = cfg.np_dtype
        self.cfg = cfg
        self.main = main
        self.control = copy.deepcopy(main)
        self.bridges = [BridgeModule(cfg.d, dtype) for _ in range(cfg.blocks)]
        rng = np.random.default_rng(control_seed)
        self.control_in = Linear(rng, d_c if d_c is not None else cfg.d_c, cfg.d, dtype=dtype)
        self.stage = 2
        self.frozen = frozenset()
        set_stage(self, 2)

    def trainable_parameters(self) -> dict:
        return {n: p for n, p in self.named_parameters().items() if n not in self.frozen}

    def main_checksum(self) -> str:
        return param_checksum(self.main.named_parameters("main/"))

    def __call__(self, x_t, t, cond, control_sig, frame_mask=None):
        return mcm_forward(x_t, t, cond, control_sig, self, frame_mask)


def build_mcm(main: MwNetModel, d_c: int | None = None) -> McmModel:
    """Deep-copy the main branch into a control branch with zero bridges."""
    return McmModel(main, d_c=d_c)


def set_stage(model: McmModel, stage: int) -> None:
    """Stage 1 trains only the main branch; stage 2 freezes it and trains
    the control branch, the bridges, and the control-input projection."""
    if stage not in (1, 2):
        raise ValidationError(f"stage must be 1 or 2, got {stage}")
    names = model.named_parameters()
    if stage == 1:
        frozen = {n for n in names if not n.startswith("main/")}
    else:
        frozen = {n for n in names if n.startswith("main/")}
    model.stage = stage
    model.frozen = frozenset(frozen)


def mcm_forward(x_t, t, cond, control_sig, model: McmModel, frame_mask=None):
    """Control branch first, then the main branch with bridged injections.

    control_sig holds (T, d_c) or (B, T, d_c) control features aligned
    to the motion frames; both branches share the timestep embedding and
    the text context computed by the main branch.
    """
    x = ad.astensor(x_t)
    batched = x.data.ndim == 3
    sig = np.asarray(control_sig)
    sig_t = sig.shape[-2]
    x_frames = x.data.shape[-2]
    if sig_t != x_frames:
        raise ValidationError(f"control signal has {sig_t} frames, motion has {x_frames}")
    tvec = model.main.condition_vector(t, cond)
    ctx = ad.astensor(cond.text_seq)
    ctx_mask = getattr(cond, "text_mask", None)

    h_ctrl, _ = model.control.embed_input(x)
    h_ctrl = h_ctrl + model.control_in(ad.astensor(sig.astype(h_ctrl.data.dtype, copy=False)))
    injections = []
    for block, bridge in zip(model.control.blocks, model.bridges):
        h_ctrl = block(h_ctrl, tvec, ctx, frame_mask=frame_mask, context_mask=ctx_mask)
        injections.append(bridge(h_ctrl))

    h, _ = model.main.embed_input(x)
    for block, inj in zip(model.main.blocks, injections):
        h = block(h + inj, tvec, ctx, frame_mask=frame_mask, context_mask=ctx_mask)
    out = model.main.out_proj(h)
    return out if batched else ad.reshape(out, out.data.shape[1:])
