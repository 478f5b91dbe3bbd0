"""Numpy reference implementation of the fused attention kernel.

Shapes: q (..., n, c), k (..., m, c), v (..., m, p); optional key mask
(..., m) where 0 marks padded keys. Forward returns the output and the
softmax probabilities; backward consumes the saved probabilities, so
masked columns (prob 0) contribute nothing. Softmax runs in place on
the logits buffer to limit temporary traffic.
"""

import numpy as np

BACKEND = "numpy"
NEEDS_CONTIGUOUS = False


def attn_forward(q, k, v, scale, mask=None):
    logits = q @ np.swapaxes(k, -1, -2)
    logits *= scale
    if mask is not None:
        logits[np.broadcast_to(np.expand_dims(mask == 0, -2), logits.shape)] = -np.inf
    logits -= logits.max(axis=-1, keepdims=True)
    probs = np.exp(logits, out=logits)
    probs /= probs.sum(axis=-1, keepdims=True)
    return probs @ v, probs


def attn_backward(gout, q, k, v, probs, scale):
    gv = np.swapaxes(probs, -1, -2) @ gout
    gprobs = gout @ np.swapaxes(v, -1, -2)
    inner = (gprobs * probs).sum(axis=-1, keepdims=True)
    glogits = gprobs
    glogits -= inner
    glogits *= probs
    glogits *= scale
    gq = glogits @ k
    gk = np.swapaxes(glogits, -1, -2) @ q
    return gq, gk, gv
