"""2D diffusion priors: single-step noise prediction, classifier-free
guidance composition, and cross-attention mask extraction.

Two prior families are used for distillation: an instruction-following
image-to-image denoiser (conditioned on a source image and an instruction)
and a plain text-to-image denoiser (conditioned on a full target
description).  The analytic Gaussian prior implemented here has a closed-form
optimal denoiser, which is what makes gradient oracles possible without any
pretrained weights.

The mask pipeline is computed in float64 with a fixed operation order, so a
naive loop-based reimplementation reproduces it bit for bit; the test-suite
relies on that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .core import EditInstruction, GuidanceConfig, NoiseSchedule, schedule_at
from .errors import (
    BackendUnavailableError,
    CapabilityError,
    InputError,
    ShapeMismatchError,
    TokenNotFoundError,
)

# ---------------------------------------------------------------------------
# value types


@dataclass
class NoisePrediction:
    eps_hat: torch.Tensor
    t: int

    def __post_init__(self) -> None:
        if not torch.isfinite(self.eps_hat).all():
            raise InputError("noise prediction contains non-finite entries")


@dataclass
class AttentionStack:
    """Per-layer/head 2-D cross-attention maps for one token at one step."""

    maps: list[np.ndarray]
    t: int
    resolution: int = 32

    def __post_init__(self) -> None:
        if not self.maps:
            raise InputError("attention stack is empty")
        norm = []
        for m in self.maps:
            a = np.asarray(m, dtype=np.float64)
            if a.shape != (self.resolution, self.resolution):
                raise InputError(
                    f"attention maps must be {self.resolution}x{self.resolution}, got {a.shape}"
                )
            if (a < 0).any():
                raise InputError("attention maps must be non-negative")
            norm.append(a)
        self.maps = norm


@dataclass
class EditMask:
    """Soft editable-region mask at render resolution, values in [0, 1]."""

    m: torch.Tensor

    def __post_init__(self) -> None:
        self.m = torch.as_tensor(self.m, dtype=torch.float64)
        if self.m.dim() != 2:
            raise InputError("mask must be 2-D")
        if bool((self.m < 0).any()) or bool((self.m > 1).any()):
            raise InputError("mask entries must lie in [0, 1]")


# ---------------------------------------------------------------------------
# prior interface


class Prior:
    """Base class for denoising priors.

    Subclasses implement :meth:`_predict`; the public entry point does the
    capability checks and counts denoiser evaluations so tests (and the
    serving layer) can assert call budgets.
    """

    kind: str = "toy"
    model_id: str = "base"
    supports_image_condition: bool = False
    supports_attention_maps: bool = False
    concurrent_safe: bool = True

    def __init__(self) -> None:
        self.call_count = 0

    def predict_noise(
        self,
        x_t: torch.Tensor,
        image_cond: torch.Tensor | None,
        text_cond: str | None,
        t: int,
    ) -> NoisePrediction:
        if image_cond is not None and not self.supports_image_condition:
            raise CapabilityError(
                f"prior {self.model_id!r} does not support image conditioning"
            )
        if not torch.isfinite(x_t).all():
            raise InputError("x_t contains non-finite entries")
        self.call_count += 1
        return NoisePrediction(self._predict(x_t, image_cond, text_cond, t), int(t))

    def _predict(self, x_t, image_cond, text_cond, t) -> torch.Tensor:
        raise NotImplementedError

    def attention_maps(
        self, x_src: torch.Tensor, text: str, token: str, t: int
    ) -> AttentionStack:
        raise CapabilityError(f"prior {self.model_id!r} does not expose attention maps")

    def reset_call_count(self) -> None:
        self.call_count = 0


class ToyGaussianPrior(Prior):
    """Prior whose data distribution is N(mu, std^2 I) with a condition-
    dependent mean.

    For that distribution the optimal denoiser has the closed form

        eps_hat(x_t, t) = sigma_t * (x_t - alpha_t * mu) / (alpha_t^2 std^2 + sigma_t^2)

    (posterior mean of the injected noise given the noised sample), which the
    test-suite verifies empirically by least squares over draws.
    """

    kind = "TI2I"

    def __init__(
        self,
        schedule: NoiseSchedule,
        mu_fn: Callable[[torch.Tensor | None, str | None, torch.Tensor], torch.Tensor],
        std: float = 0.3,
        kind: str = "TI2I",
        model_id: str = "toy-gaussian",
        attention_fn: Callable[[torch.Tensor, str, str, int], list[np.ndarray]] | None = None,
    ) -> None:
        super().__init__()
        self.schedule = schedule
        self.mu_fn = mu_fn
        self.std = float(std)
        self.kind = kind
        self.model_id = model_id
        self.supports_image_condition = kind == "TI2I"
        self._attention_fn = attention_fn
        self.supports_attention_maps = attention_fn is not None

    def _predict(self, x_t, image_cond, text_cond, t):
        alpha, sigma = schedule_at(self.schedule, t)
        mu = self.mu_fn(image_cond, text_cond, x_t)
        denom = alpha * alpha * self.std * self.std + sigma * sigma
        return sigma * (x_t - alpha * mu) / denom

    def attention_maps(self, x_src, text, token, t):
        if self._attention_fn is None:
            return super().attention_maps(x_src, text, token, t)
        return AttentionStack(maps=self._attention_fn(x_src, text, token, t), t=int(t))


# ---------------------------------------------------------------------------
# classifier-free guidance


def cfg_ti2i(
    prior: Prior,
    x_t: torch.Tensor,
    x_src: torch.Tensor,
    y: str | EditInstruction,
    t: int,
    g: GuidanceConfig,
) -> NoisePrediction:
    """Three-call guidance for the image-to-image prior:

        e* = e(0,0) + gamma_image * (e(x_src,0) - e(0,0))
                   + gamma_text  * (e(x_src,y) - e(x_src,0))
    """
    if not prior.supports_image_condition:
        raise CapabilityError(f"prior {prior.model_id!r} cannot be used for image-to-image guidance")
    text = y.text if isinstance(y, EditInstruction) else y
    e_uu = prior.predict_noise(x_t, None, None, t).eps_hat
    e_iu = prior.predict_noise(x_t, x_src, None, t).eps_hat
    e_it = prior.predict_noise(x_t, x_src, text, t).eps_hat
    out = e_uu + g.gamma_image * (e_iu - e_uu) + g.gamma_text * (e_it - e_iu)
    return NoisePrediction(out, int(t))


def cfg_t2i(
    prior: Prior,
    x_t: torch.Tensor,
    y_e: str,
    t: int,
    g: GuidanceConfig,
) -> NoisePrediction:
    """Two-call guidance for the text-to-image prior:

        e* = e(0) + gamma_text_t2i * (e(y_e) - e(0))
    """
    e_u = prior.predict_noise(x_t, None, None, t).eps_hat
    e_t = prior.predict_noise(x_t, None, y_e, t).eps_hat
    out = e_u + g.gamma_text_t2i * (e_t - e_u)
    return NoisePrediction(out, int(t))


# ---------------------------------------------------------------------------
# mask pipeline
#
# Every stage below is written with an explicit, fixed association order so a
# scalar-loop reference implementation produces bitwise-identical float64
# output.  Do not "simplify" the arithmetic here without updating the naive
# reference in the tests.

MASK_THRESHOLD = 0.5
MASK_DILATE_RADIUS = 10
MASK_BLUR_SIGMA = 5.0
MASK_BLUR_RADIUS = 15  # 3 sigma
MASK_EXTRACTION_T = 600
MASK_RESOLUTION = 128


def normalized_average(maps: Sequence[np.ndarray]) -> np.ndarray:
    """Scale each map to [0, 1] by its own max (all-zero maps contribute
    zeros) and average, accumulating in input order."""
    maps = [np.asarray(m, dtype=np.float64) for m in maps]
    acc = np.zeros_like(maps[0])
    for m in maps:
        mx = m.max()
        if mx > 0:
            acc = acc + m / mx
    return acc / len(maps)


def bilinear_upsample(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-aligned bilinear resampling with clamped source coords."""
    in_h, in_w = a.shape
    sy = in_h / out_h
    sx = in_w / out_w
    oy = (np.arange(out_h, dtype=np.float64) + 0.5) * sy - 0.5
    ox = (np.arange(out_w, dtype=np.float64) + 0.5) * sx - 0.5
    oy = np.clip(oy, 0.0, in_h - 1.0)
    ox = np.clip(ox, 0.0, in_w - 1.0)
    y0 = np.floor(oy).astype(np.int64)
    x0 = np.floor(ox).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = oy - y0
    fx = ox - x0
    v00 = a[y0[:, None], x0[None, :]]
    v01 = a[y0[:, None], x1[None, :]]
    v10 = a[y1[:, None], x0[None, :]]
    v11 = a[y1[:, None], x1[None, :]]
    fy = fy[:, None]
    fx = fx[None, :]
    return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11)


def hard_threshold(a: np.ndarray, threshold: float = MASK_THRESHOLD) -> np.ndarray:
    return (a >= threshold).astype(np.float64)


def dilate(a: np.ndarray, radius: int = MASK_DILATE_RADIUS) -> np.ndarray:
    """Max filter with a square window of the given radius, clipped at the
    image border.  Separable; max is order-insensitive, so this matches a
    direct 2-D window maximum exactly."""

    def pass_along_cols(m: np.ndarray) -> np.ndarray:
        acc = m.copy()
        for d in range(1, radius + 1):
            acc[:, d:] = np.maximum(acc[:, d:], m[:, :-d])
            acc[:, :-d] = np.maximum(acc[:, :-d], m[:, d:])
        return acc

    return pass_along_cols(pass_along_cols(a).T).T


def gaussian_blur(a: np.ndarray, sigma: float = MASK_BLUR_SIGMA,
                  radius: int = MASK_BLUR_RADIUS) -> np.ndarray:
    """Separable Gaussian blur with symmetric border padding.

    The kernel is left unnormalized; each pass divides by the kernel sum at
    the end (computed by the same left-to-right accumulation as the taps), so
    a constant input is an exact fixed point of the blur.
    """
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(d * d) / (2.0 * sigma * sigma))
    ksum = 0.0
    for kv in k:
        ksum += float(kv)

    def pass_along_cols(m: np.ndarray) -> np.ndarray:
        padded = np.pad(m, ((0, 0), (radius, radius)), mode="symmetric")
        acc = np.zeros_like(m)
        for i in range(k.shape[0]):
            acc = acc + k[i] * padded[:, i:i + m.shape[1]]
        return acc / ksum

    return pass_along_cols(pass_along_cols(a).T).T


def mask_pipeline(
    maps: Sequence[np.ndarray],
    out_resolution: int = MASK_RESOLUTION,
    threshold: float = MASK_THRESHOLD,
    dilate_radius: int = MASK_DILATE_RADIUS,
    blur_sigma: float = MASK_BLUR_SIGMA,
    blur_radius: int = MASK_BLUR_RADIUS,
) -> np.ndarray:
    """normalize/average -> upsample -> threshold -> dilate -> blur -> clip."""
    avg = normalized_average(maps)
    up = bilinear_upsample(avg, out_resolution, out_resolution)
    th = hard_threshold(up, threshold)
    di = dilate(th, dilate_radius)
    bl = gaussian_blur(di, blur_sigma, blur_radius)
    return np.clip(bl, 0.0, 1.0)


def extract_edit_mask(
    prior: Prior,
    x_src: torch.Tensor,
    y: str | EditInstruction,
    token: str,
    t: int = MASK_EXTRACTION_T,
    out_resolution: int = MASK_RESOLUTION,
    **pipeline_kwargs,
) -> EditMask:
    """Estimate the editable region for a local instruction from the prior's
    cross-attention maps on the source view."""
    text = y.text if isinstance(y, EditInstruction) else y
    if not prior.supports_attention_maps:
        raise CapabilityError(f"prior {prior.model_id!r} does not expose attention maps")
    words = [w.strip(".,!?;:'\"").lower() for w in text.split()]
    if token.lower() not in words:
        raise TokenNotFoundError(f"token {token!r} does not occur in {text!r}")
    stack = prior.attention_maps(x_src, text, token, t)
    m = mask_pipeline(stack.maps, out_resolution=out_resolution, **pipeline_kwargs)
    return EditMask(torch.from_numpy(m))


def mask_to_png(mask: EditMask, path) -> None:
    """Debug export of a mask as an 8-bit grayscale PNG."""
    from PIL import Image

    a = (mask.m.numpy() * 255.0).round().clip(0, 255).astype(np.uint8)
    Image.fromarray(a, mode="L").save(path)


# ---------------------------------------------------------------------------
# pretrained-backend adapter slots and registry


def _unavailable(model_id: str, files: str) -> BackendUnavailableError:
    import os

    root = os.environ.get("LATEDIT_WEIGHTS", "$LATEDIT_WEIGHTS")
    return BackendUnavailableError(
        f"pretrained prior {model_id!r} is not installed; expected {root}/{files}"
    )


class InstructPix2PixPrior(Prior):
    """Adapter slot for the instruction-following image editor used as the
    global-editing prior."""

    kind = "TI2I"
    model_id = "ip2p"
    supports_image_condition = True

    def __init__(self, weights_root: str | None = None) -> None:
        raise _unavailable(self.model_id, "ip2p/ (diffusers layout)")


class MagicBrushPrior(Prior):
    """Adapter slot for the fine-tuned instruction editor used as the
    local-editing prior and as the attention-map source."""

    kind = "TI2I"
    model_id = "magicbrush"
    supports_image_condition = True
    supports_attention_maps = True

    def __init__(self, weights_root: str | None = None) -> None:
        raise _unavailable(self.model_id, "magicbrush/ (diffusers layout)")


class StableDiffusionPrior(Prior):
    """Adapter slot for the text-to-image prior used in local editing."""

    kind = "T2I"
    model_id = "sd-v1-5"

    def __init__(self, weights_root: str | None = None) -> None:
        raise _unavailable(self.model_id, "sd-v1-5/ (diffusers layout)")


PRIOR_FACTORIES = {
    "ip2p": InstructPix2PixPrior,
    "magicbrush": MagicBrushPrior,
    "sd-v1-5": StableDiffusionPrior,
}


def get_prior(model_id: str, **kwargs) -> Prior:
    if model_id not in PRIOR_FACTORIES:
        raise InputError(f"unknown prior {model_id!r}; available: {sorted(PRIOR_FACTORIES)}")
    return PRIOR_FACTORIES[model_id](**kwargs)
