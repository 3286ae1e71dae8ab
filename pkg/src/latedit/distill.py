"""Training gradients for distillation: the score-distillation estimator
applied through guidance-composed priors, the depth regularizer for global
edits, and the masked photometric+depth regularizer for local edits.

The score-distillation term is a *gradient estimator*, not a scalar loss: the
per-pixel gradient ``eps_hat* - eps`` is injected at the rendered-image node
and chain-ruled through renderer, decoder and editor by the caller.  The
functions here therefore return a :class:`GradientBundle` of raw gradients
w.r.t. the rendered RGB and depth, plus scalar diagnostics; callers turn the
bundle into parameter gradients via :func:`surrogate_loss`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import torch

from .core import (
    EditInstruction,
    EditKind,
    GuidanceConfig,
    LossWeights,
    NoiseSchedule,
    noise_sample,
)
from .errors import InputError, InstructionError, ShapeMismatchError
from .prior import EditMask, NoisePrediction, Prior, cfg_t2i, cfg_ti2i


@dataclass
class GradientBundle:
    """Gradients w.r.t. one rendered edited view, plus scalar diagnostics."""

    d_image: torch.Tensor  # (H, W, 3)
    d_depth: torch.Tensor  # (H, W)
    diagnostics: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not torch.isfinite(self.d_image).all() or not torch.isfinite(self.d_depth).all():
            raise InputError("gradient bundle contains non-finite entries")


@dataclass(frozen=True)
class AblationToggles:
    """Which loss terms participate in local-edit gradients."""

    use_ti2i: bool = True
    use_t2i: bool = True
    use_reg: bool = True
    use_mask: bool = True

    @classmethod
    def variant(cls, name: str) -> "AblationToggles":
        table = {
            "none": cls(),
            "no_mask": cls(use_mask=False),
            "no_reg": cls(use_reg=False),
            "no_t2i": cls(use_t2i=False),
            "no_ti2i": cls(use_ti2i=False),
        }
        if name not in table:
            raise InputError(f"unknown ablation variant {name!r}; options: {sorted(table)}")
        return table[name]


# ---------------------------------------------------------------------------
# elementary pieces


def sds_grad(eps_star: NoisePrediction | torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """``eps_hat* - eps``: the per-pixel gradient w.r.t. the rendered edited
    image, before any chain rule.  No gradient flows into the prior."""
    e = eps_star.eps_hat if isinstance(eps_star, NoisePrediction) else eps_star
    if e.shape != eps.shape:
        raise ShapeMismatchError(
            f"prediction shape {tuple(e.shape)} does not match eps shape {tuple(eps.shape)}"
        )
    return (e - eps).detach()


def loss_reg_global(d_e: torch.Tensor, d_s: torch.Tensor) -> torch.Tensor:
    """Mean squared depth difference between edited and source views."""
    if d_e.shape != d_s.shape:
        raise ShapeMismatchError("depth maps differ in shape")
    return ((d_e - d_s) ** 2).mean()


def loss_reg_local(
    x_s: torch.Tensor,
    x_e: torch.Tensor,
    d_s: torch.Tensor,
    d_e: torch.Tensor,
    m: EditMask | torch.Tensor,
    w: LossWeights,
) -> torch.Tensor:
    """Outside the editable region, penalize photometric and depth deviation
    from the source view:

        mean_px[(1 - m) * (lambda_photo * sum_c (x_e - x_s)^2
                           + lambda_depth * (d_e - d_s)^2)]
    """
    mask = m.m if isinstance(m, EditMask) else torch.as_tensor(m)
    if bool((mask < 0).any()) or bool((mask > 1).any()):
        raise InputError("mask entries must lie in [0, 1]")
    if x_s.shape != x_e.shape or d_s.shape != d_e.shape:
        raise ShapeMismatchError("source/edited views differ in shape")
    if mask.shape != d_e.shape or x_e.shape[:2] != d_e.shape:
        raise ShapeMismatchError("mask and views differ in spatial shape")
    photo = ((x_e - x_s) ** 2).sum(-1)
    depth = (d_e - d_s) ** 2
    return ((1.0 - mask) * (w.lambda_photo * photo + w.lambda_depth * depth)).mean()


def surrogate_loss(bundle: GradientBundle, x_e: torch.Tensor, d_e: torch.Tensor) -> torch.Tensor:
    """A scalar whose autograd gradient w.r.t. ``x_e``/``d_e`` is exactly the
    bundle; used to chain the bundle through renderer, decoder and editor."""
    return (x_e * bundle.d_image).sum() + (d_e * bundle.d_depth).sum()


def _grad_of(scalar_fn, *leaves: torch.Tensor):
    """Gradients of ``scalar_fn(*leaves)`` w.r.t. fresh leaf copies, plus the
    detached scalar value."""
    leaf_vars = [leaf.detach().clone().requires_grad_(True) for leaf in leaves]
    value = scalar_fn(*leaf_vars)
    grads = torch.autograd.grad(value, leaf_vars, allow_unused=False)
    return [g.detach() for g in grads], value.detach()


# ---------------------------------------------------------------------------
# per-edit-kind gradient assembly


def global_edit_gradients(
    ti2i: Prior,
    x_s: torch.Tensor,
    x_e: torch.Tensor,
    d_s: torch.Tensor,
    d_e: torch.Tensor,
    y: EditInstruction | str,
    t: int,
    eps: torch.Tensor,
    schedule: NoiseSchedule,
    g: GuidanceConfig,
    w: LossWeights,
    weight_fn: Callable[[int], float] | None = None,
) -> GradientBundle:
    """Distillation pull from the image-to-image prior plus the depth
    regularizer."""
    x_e = x_e.detach()
    d_e = d_e.detach()
    x_t = noise_sample(x_e, schedule, t, eps)
    pred = cfg_ti2i(ti2i, x_t, x_s.detach(), y, t, g)
    grad = sds_grad(pred, eps)
    if weight_fn is not None:
        grad = grad * float(weight_fn(t))
    (depth_grad,), _ = _grad_of(
        lambda leaf: w.lambda_reg_global * loss_reg_global(leaf, d_s.detach()), d_e
    )
    return GradientBundle(
        d_image=w.lambda_ti2i * grad,
        d_depth=depth_grad,
        diagnostics={
            "sds_ti2i": float(grad.pow(2).mean()),
            "reg_global": float(loss_reg_global(d_e, d_s.detach())),
        },
    )


def local_edit_gradients(
    ti2i: Prior,
    t2i: Prior | None,
    x_s: torch.Tensor,
    x_e: torch.Tensor,
    d_s: torch.Tensor,
    d_e: torch.Tensor,
    y: EditInstruction,
    mask: EditMask | None,
    t: int,
    eps: torch.Tensor,
    schedule: NoiseSchedule,
    g: GuidanceConfig,
    w: LossWeights,
    toggles: AblationToggles = AblationToggles(),
    weight_fn: Callable[[int], float] | None = None,
) -> GradientBundle:
    """Distillation pulls from both priors (evaluated at the *same* timestep
    and noise draw) plus the masked locality regularizer."""
    if not isinstance(y, EditInstruction) or y.kind != EditKind.LOCAL:
        raise InstructionError("local_edit_gradients needs a local-kind instruction")
    if y.target_description is None:
        raise InstructionError("local instruction lacks a target description")
    x_e = x_e.detach()
    d_e = d_e.detach()
    x_s = x_s.detach()
    d_s = d_s.detach()
    scale = 1.0 if weight_fn is None else float(weight_fn(t))
    d_image = torch.zeros_like(x_e)
    d_depth = torch.zeros_like(d_e)
    diagnostics: dict[str, float] = {}
    x_t = noise_sample(x_e, schedule, t, eps)
    if toggles.use_ti2i:
        grad = sds_grad(cfg_ti2i(ti2i, x_t, x_s, y, t, g), eps) * scale
        d_image = d_image + w.lambda_ti2i * grad
        diagnostics["sds_ti2i"] = float(grad.pow(2).mean())
    if toggles.use_t2i:
        if t2i is None:
            raise InputError("the text-to-image prior is required unless ablated away")
        grad = sds_grad(cfg_t2i(t2i, x_t, y.target_description, t, g), eps) * scale
        d_image = d_image + w.lambda_t2i * grad
        diagnostics["sds_t2i"] = float(grad.pow(2).mean())
    if toggles.use_reg:
        if toggles.use_mask:
            if mask is None:
                raise InstructionError("local edit with regularizer needs a mask")
            m = mask
        else:
            m = EditMask(torch.zeros_like(d_e))
        (img_grad, depth_grad), reg_value = _grad_of(
            lambda xe, de: loss_reg_local(x_s, xe, d_s, de, m, w), x_e, d_e
        )
        d_image = d_image + img_grad
        d_depth = d_depth + depth_grad
        diagnostics["reg_local"] = float(reg_value)
    return GradientBundle(d_image=d_image, d_depth=d_depth, diagnostics=diagnostics)
