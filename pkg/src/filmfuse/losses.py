"""Training losses: intensity, Sobel-gradient and MEF-SSIM terms.

The total objective is ``l_int + alpha1 * l_grad + alpha2 * (1 - mef_ssim)``
with per-task weights from :data:`TASKS`. All terms accept torch tensors of
shape ``(B, 1, H, W)`` or ``(H, W)``; numpy arrays are converted to float64.

Subgradient conventions: ``|x|`` at 0 and the gradient magnitude at a flat
point both back-propagate 0. ``max`` is only ever applied to source images,
which carry no gradient; ties resolve to the first argument.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ContractError, UnsupportedTaskError

MEF_WINDOW = 8
MEF_DYNAMIC_RANGE = 1.0
MEF_K = 0.03
MEF_WEIGHT_POWER = 4.0


@dataclass(frozen=True)
class TaskConfig:
    task: str
    alpha1: float
    alpha2: float
    intensity_mode: str
    ssim_enabled: bool
    trainable: bool = True


TASKS = {
    "IVF": TaskConfig("IVF", 10.0, 0.0, "max", False),
    "MFF": TaskConfig("MFF", 50.0, 10.0, "mean", True),
    "MEF": TaskConfig("MEF", 100.0, 1.0, "mean", True),
    # medical fusion reuses the infrared-visible weights without training
    "MIF": TaskConfig("MIF", 0.0, 0.0, "max", False, trainable=False),
}


def task_config(task):
    try:
        return TASKS[task.upper()]
    except KeyError:
        raise ContractError(f"unknown task {task!r}; expected one of {sorted(TASKS)}") from None


def _as_tensor(x):
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float64))
    if x.dim() == 2:
        x = x[None, None]
    if x.dim() != 4 or x.shape[1] != 1:
        raise ContractError(f"expected a single-channel image batch, got shape {tuple(x.shape)}")
    return x


def _triple(f, i1, i2):
    f, i1, i2 = _as_tensor(f), _as_tensor(i1), _as_tensor(i2)
    if not (f.shape == i1.shape == i2.shape):
        raise ContractError(f"shape mismatch: {tuple(f.shape)}, {tuple(i1.shape)}, {tuple(i2.shape)}")
    i1 = i1.to(f.dtype)
    i2 = i2.to(f.dtype)
    return f, i1, i2


def sobel_magnitude(x):
    # differences of shifted slices keep flat regions exactly zero
    p = F.pad(x, (1, 1, 1, 1), mode="replicate")
    gx = (p[..., :-2, 2:] - p[..., :-2, :-2]) + 2.0 * (p[..., 1:-1, 2:] - p[..., 1:-1, :-2]) \
        + (p[..., 2:, 2:] - p[..., 2:, :-2])
    gy = (p[..., 2:, :-2] - p[..., :-2, :-2]) + 2.0 * (p[..., 2:, 1:-1] - p[..., :-2, 1:-1]) \
        + (p[..., 2:, 2:] - p[..., :-2, 2:])
    sq = gx * gx + gy * gy
    nz = sq > 0
    return torch.where(nz, torch.sqrt(torch.where(nz, sq, torch.ones_like(sq))), torch.zeros_like(sq))


def l_int(f, i1, i2, mode="max"):
    f, i1, i2 = _triple(f, i1, i2)
    if mode == "max":
        target = torch.maximum(i1, i2)
    elif mode == "mean":
        target = 0.5 * (i1 + i2)
    else:
        raise ContractError(f"unknown intensity mode {mode!r}")
    return torch.mean(torch.abs(f - target))


def l_grad(f, i1, i2):
    f, i1, i2 = _triple(f, i1, i2)
    target = torch.maximum(sobel_magnitude(i1), sobel_magnitude(i2))
    return torch.mean(torch.abs(sobel_magnitude(f) - target))


def mef_ssim(f, i1, i2, p=MEF_WEIGHT_POWER):
    """Single-scale MEF-SSIM over all 8x8 windows at stride 1.

    In each window the desired patch has the largest source contrast and the
    structure of the contrast-weighted (``c_k ** p``) mean of the unit source
    structures. The score compares the fused patch with it through the usual
    SSIM contrast/structure ratio and is averaged over windows.
    """
    f, i1, i2 = _triple(f, i1, i2)
    if min(f.shape[-2:]) < MEF_WINDOW:
        raise ContractError(f"MEF-SSIM needs at least {MEF_WINDOW}x{MEF_WINDOW} images")
    c = (MEF_K * MEF_DYNAMIC_RANGE) ** 2

    def mean(x):
        return F.avg_pool2d(x, MEF_WINDOW, stride=1)

    mu_y, mu1, mu2 = mean(f), mean(i1), mean(i2)
    var_y = mean(f * f) - mu_y * mu_y
    v1 = torch.clamp(mean(i1 * i1) - mu1 * mu1, min=0.0)
    v2 = torch.clamp(mean(i2 * i2) - mu2 * mu2, min=0.0)
    c12 = mean(i1 * i2) - mu1 * mu2
    c1y = mean(i1 * f) - mu1 * mu_y
    c2y = mean(i2 * f) - mu2 * mu_y

    chat = torch.sqrt(torch.maximum(v1, v2))
    a1 = v1 ** ((p - 1.0) / 2.0)
    a2 = v2 ** ((p - 1.0) / 2.0)
    q = a1 * a1 * v1 + 2.0 * a1 * a2 * c12 + a2 * a2 * v2
    ok = q > 1e-30
    rho = torch.where(ok, (a1 * c1y + a2 * c2y) / torch.sqrt(torch.where(ok, q, torch.ones_like(q))),
                      torch.zeros_like(q))
    score = (2.0 * chat * rho + c) / (chat * chat + var_y + c)
    return score.mean()


def loss_terms(f, i1, i2, cfg):
    """Tensor-valued terms ``l_int``, ``l_grad``, ``l_ssim`` (None when disabled) and ``total``."""
    if isinstance(cfg, str):
        cfg = task_config(cfg)
    if not cfg.trainable:
        raise UnsupportedTaskError(f"{cfg.task} has no training loss; use the IVF checkpoint directly")
    li = l_int(f, i1, i2, cfg.intensity_mode)
    lg = l_grad(f, i1, i2)
    total = li + cfg.alpha1 * lg
    ls = None
    if cfg.alpha2 != 0.0 and cfg.ssim_enabled:
        ls = 1.0 - mef_ssim(f, i1, i2)
        total = total + cfg.alpha2 * ls
    return {"l_int": li, "l_grad": lg, "l_ssim": ls, "total": total}


def total_loss(f, i1, i2, cfg):
    """Weighted sum of the task's terms plus a float breakdown for logging."""
    terms = loss_terms(f, i1, i2, cfg)
    parts = {k: (float(v.detach()) if v is not None else 0.0) for k, v in terms.items()}
    return terms["total"], parts
