"""Domain types shared by every other module: latents, edit instructions,
noise schedules, guidance/loss/camera configuration, and the seeded-random
contract.

Conventions fixed here and relied on everywhere else:

* A noised sample is ``x_t = alpha_t * x + sigma_t * eps`` — the signal is
  scaled by alpha and the noise by sigma.
* Schedules are tables over ``T + 1`` steps with ``alpha_0 = 1`` and
  ``sigma_0 = 0``; step ``t`` indexes the table directly.
* Every stochastic operation receives an explicit ``torch.Generator``;
  identical seeds reproduce identical runs on one platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import torch

from .errors import InputError, ShapeMismatchError


# ---------------------------------------------------------------------------
# latents and instructions


@dataclass
class Latent:
    """A 2-D asset code together with the id of the codec that produced it."""

    data: torch.Tensor
    codec_id: str

    def __post_init__(self) -> None:
        if not isinstance(self.data, torch.Tensor):
            self.data = torch.as_tensor(self.data)
        if self.data.dim() != 2:
            raise InputError(f"latent must be 2-D, got shape {tuple(self.data.shape)}")
        if not self.data.dtype.is_floating_point:
            raise InputError(f"latent must be floating point, got {self.data.dtype}")
        if not torch.isfinite(self.data).all():
            raise InputError("latent contains non-finite entries")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.data.shape[0], self.data.shape[1])

    def clone(self) -> "Latent":
        return Latent(self.data.detach().clone(), self.codec_id)


class EditKind(str, Enum):
    GLOBAL = "global"
    LOCAL = "local"


@dataclass(frozen=True)
class EditInstruction:
    """A natural-language edit request.

    Local edits additionally need a full description of the edited object
    (``target_description``) and the word whose cross-attention map marks the
    editable region (``attention_token``).
    """

    text: str
    kind: EditKind = EditKind.GLOBAL
    target_description: str | None = None
    attention_token: str | None = None

    def __post_init__(self) -> None:
        if not self.text:
            raise InputError("instruction text must be non-empty")
        if self.kind == EditKind.LOCAL:
            if not self.target_description or not self.attention_token:
                raise InputError(
                    "local instructions require target_description and attention_token"
                )


# ---------------------------------------------------------------------------
# noise schedules


@dataclass
class NoiseSchedule:
    """Tables of (alpha_t, sigma_t) over steps 0..T.

    The tables always satisfy ``alpha_0 = 1``, ``sigma_0 = 0``, alpha
    non-increasing and sigma non-decreasing.  Entries are kept in float64 so
    table lookups do not add rounding noise of their own.
    """

    alphas: torch.Tensor
    sigmas: torch.Tensor
    convention: str = "signal-times-alpha"

    def __post_init__(self) -> None:
        self.alphas = torch.as_tensor(self.alphas, dtype=torch.float64)
        self.sigmas = torch.as_tensor(self.sigmas, dtype=torch.float64)
        if self.alphas.shape != self.sigmas.shape or self.alphas.dim() != 1:
            raise InputError("alpha/sigma tables must be 1-D and equally long")
        if self.alphas.numel() < 2:
            raise InputError("a schedule needs at least two steps")
        if not bool(torch.isfinite(self.alphas).all() & torch.isfinite(self.sigmas).all()):
            raise InputError("schedule tables must be finite")
        if float(self.alphas[0]) != 1.0 or float(self.sigmas[0]) != 0.0:
            raise InputError("schedules must start at (alpha, sigma) = (1, 0)")
        if bool((self.alphas < 0).any()) or bool((self.alphas > 1).any()):
            raise InputError("alpha entries must lie in [0, 1]")
        if bool((self.sigmas < 0).any()):
            raise InputError("sigma entries must be non-negative")
        if bool((self.alphas.diff() > 0).any()):
            raise InputError("alpha must be non-increasing")
        if bool((self.sigmas.diff() < 0).any()):
            raise InputError("sigma must be non-decreasing")

    @property
    def steps(self) -> int:
        """T: the largest valid step index."""
        return self.alphas.numel() - 1

    @classmethod
    def cosine(cls, steps: int = 1024, s: float = 0.008) -> "NoiseSchedule":
        """Squared-cosine signal schedule, the family used by latent diffusion
        models over image/asset codes.  ``sigma_200`` of the default 1024-step
        table is about 0.311."""
        t = torch.arange(steps + 1, dtype=torch.float64) / steps
        f = torch.cos((t + s) / (1 + s) * math.pi / 2) ** 2
        alpha_bar = f / f[0]
        return cls(alphas=torch.sqrt(alpha_bar), sigmas=torch.sqrt(1 - alpha_bar))

    @classmethod
    def linear_test(cls, steps: int = 10) -> "NoiseSchedule":
        """Tiny schedule with ``sigma_t = t / T``; handy for exact-value tests."""
        sigmas = torch.arange(steps + 1, dtype=torch.float64) / steps
        alphas = torch.sqrt(torch.clamp(1 - sigmas**2, min=0.0))
        return cls(alphas=alphas, sigmas=sigmas)

    @classmethod
    def from_tables(
        cls, alphas: Sequence[float] | torch.Tensor, sigmas: Sequence[float] | torch.Tensor
    ) -> "NoiseSchedule":
        """Build a schedule from externally supplied tables (e.g. read out of a
        pretrained checkpoint's metadata)."""
        return cls(alphas=torch.as_tensor(alphas, dtype=torch.float64),
                   sigmas=torch.as_tensor(sigmas, dtype=torch.float64))


def schedule_at(schedule: NoiseSchedule, t: int) -> tuple[float, float]:
    """Return ``(alpha_t, sigma_t)``. Raises IndexError outside ``0..T``."""
    t = int(t)
    if t < 0 or t > schedule.steps:
        raise IndexError(f"step {t} outside schedule range 0..{schedule.steps}")
    return float(schedule.alphas[t]), float(schedule.sigmas[t])


def noise_sample(x: torch.Tensor, schedule: NoiseSchedule, t: int, eps: torch.Tensor) -> torch.Tensor:
    """``alpha_t * x + sigma_t * eps`` with a shape check."""
    if x.shape != eps.shape:
        raise ShapeMismatchError(
            f"x has shape {tuple(x.shape)} but eps has {tuple(eps.shape)}"
        )
    alpha, sigma = schedule_at(schedule, t)
    return alpha * x + sigma * eps


# ---------------------------------------------------------------------------
# configuration value types


def _require_finite_nonneg(name: str, value: float) -> None:
    if not math.isfinite(value) or value < 0:
        raise InputError(f"{name} must be finite and >= 0, got {value}")


@dataclass(frozen=True)
class GuidanceConfig:
    """Classifier-free guidance scales.

    ``gamma_image``/``gamma_text`` weight the image- and text-conditioned
    terms of the instruction-following (image-to-image) prior;
    ``gamma_text_t2i`` is the text scale of the plain text-to-image prior.
    """

    gamma_image: float = 2.5
    gamma_text: float = 50.0
    gamma_text_t2i: float = 50.0

    def __post_init__(self) -> None:
        _require_finite_nonneg("gamma_image", self.gamma_image)
        _require_finite_nonneg("gamma_text", self.gamma_text)
        _require_finite_nonneg("gamma_text_t2i", self.gamma_text_t2i)

    @classmethod
    def local_default(cls) -> "GuidanceConfig":
        return cls(gamma_image=2.5, gamma_text=7.5, gamma_text_t2i=50.0)


@dataclass(frozen=True)
class LossWeights:
    lambda_ti2i: float = 1.0
    lambda_t2i: float = 1.0
    lambda_photo: float = 1.25
    lambda_depth: float = 0.8
    lambda_reg_global: float = 5.0

    def __post_init__(self) -> None:
        for name in ("lambda_ti2i", "lambda_t2i", "lambda_photo", "lambda_depth",
                     "lambda_reg_global"):
            _require_finite_nonneg(name, getattr(self, name))


@dataclass(frozen=True)
class CameraConfig:
    """Circular-track camera: fixed radius and elevation, azimuth sampled
    uniformly from a range."""

    radius: float = 4.0
    elevation_deg: float = 30.0
    azimuth_range_deg: tuple[float, float] = (-180.0, 180.0)
    render_resolution: int = 128

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise InputError("camera radius must be positive")
        if self.render_resolution <= 0:
            raise InputError("render resolution must be positive")
        lo, hi = self.azimuth_range_deg
        if lo > hi:
            raise InputError("azimuth range must satisfy lo <= hi")
        object.__setattr__(self, "azimuth_range_deg", (float(lo), float(hi)))


# ---------------------------------------------------------------------------
# seeded randomness


def make_generator(seed: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    return gen


def randn(shape, generator: torch.Generator, dtype: torch.dtype = torch.float64) -> torch.Tensor:
    return torch.randn(tuple(shape), generator=generator, dtype=dtype)


def rand_uniform(lo: float, hi: float, generator: torch.Generator) -> float:
    u = torch.rand((), generator=generator, dtype=torch.float64)
    return float(lo + (hi - lo) * u)
