"""Small numpy/torch dispatch helpers.

The pointwise property models and the residual assembly are written once and
evaluated either on numpy arrays (Newton solver, metrics) or on torch tensors
(physics loss, where gradients must flow).
"""

import numpy as np
import torch


def is_tensor(x):
    return isinstance(x, torch.Tensor)


def clip(x, lo, hi):
    if is_tensor(x):
        return x.clamp(lo, hi)
    return np.clip(x, lo, hi)


def where(cond, a, b):
    if is_tensor(cond) or is_tensor(a) or is_tensor(b):
        return torch.where(cond, a, b)
    return np.where(cond, a, b)


def zeros_like(x):
    if is_tensor(x):
        return torch.zeros_like(x)
    return np.zeros_like(np.asarray(x, dtype=float))


def to_numpy(x):
    if is_tensor(x):
        return x.detach().cpu().numpy()
    return np.asarray(x)
