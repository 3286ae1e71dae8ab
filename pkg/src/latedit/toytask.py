"""A fully synthetic editing task for demos and the convergence tests.

The task: add a fixed colour offset ``c`` (a constant RGB shift applied to
every grid cell's colour, densities untouched) to any toy latent.

The trick that makes the task an *exact* oracle: source latents are sampled
so every cell colour has the same luma ``L0`` against a black background.
With the toy renderer's convex colour compositing, the luma of a rendered
pixel is then exactly ``coverage * L0``, so the prior can reconstruct the
per-pixel blob coverage from the source image alone and compute

    target_pixel = source_pixel + coverage * shift_rgb

which equals the rendering of ``latent + c`` from the same viewpoint exactly.
The distillation pull is therefore unbiased toward the true edited latent,
and editors/optimizers can honestly be held to a few-percent error bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .codec import ToyCodec
from .core import EditInstruction, EditKind, Latent, NoiseSchedule
from .prior import ToyGaussianPrior


@dataclass
class ColorShiftTask:
    codec: ToyCodec
    schedule: NoiseSchedule
    prior: ToyGaussianPrior
    instruction: EditInstruction
    shift_rgb: torch.Tensor      # (3,)
    shift_latent: torch.Tensor   # latent-shaped offset c
    base_luma: float

    def sample_source_latent(self, generator: torch.Generator) -> Latent:
        """A random latent from the constant-luma family the task's prior is
        exact for."""
        n = self.codec.grid_size ** 2
        dens = 1.5 + 1.5 * torch.rand(n, generator=generator, dtype=torch.float64)
        r = 0.25 + 0.25 * torch.rand(n, generator=generator, dtype=torch.float64)
        g = 0.25 + 0.25 * torch.rand(n, generator=generator, dtype=torch.float64)
        b = 3.0 * self.base_luma - r - g
        data = torch.stack([dens, r, g, b], dim=1)
        return Latent(data, self.codec.codec_id)

    def target_latent(self, source: Latent) -> Latent:
        return Latent(source.data + self.shift_latent, source.codec_id)

    def edit_error(self, source: Latent, edited: Latent) -> float:
        """Relative error of the recovered offset: ||(edited - source) - c||_inf
        divided by ||c||_inf."""
        residual = edited.data - source.data
        err = (residual - self.shift_latent).abs().max()
        return float(err / self.shift_latent.abs().max())


def make_color_shift_task(
    grid_size: int = 4,
    shift_rgb: tuple[float, float, float] = (0.25, 0.0, 0.0),
    base_luma: float = 0.4,
    prior_std: float = 0.3,
    schedule: NoiseSchedule | None = None,
    march_samples: int = 12,
    instruction_text: str = "shift the colors",
) -> ColorShiftTask:
    """Assemble codec, prior and instruction for the colour-shift task.

    Guidance scales of 1 are intended for this prior (guidance then reduces
    to the fully conditioned prediction, which is the exact target)."""
    schedule = schedule or NoiseSchedule.cosine()
    codec = ToyCodec(grid_size=grid_size, march_samples=march_samples)
    shift = torch.tensor(shift_rgb, dtype=torch.float64)
    n = grid_size * grid_size
    shift_latent = torch.cat(
        [torch.zeros(n, 1, dtype=torch.float64), shift.expand(n, 3).clone()], dim=1
    )

    def mu_fn(image_cond, text_cond, like):
        if image_cond is None:
            return torch.zeros_like(like)
        if text_cond is None:
            return image_cond  # image-conditioned but uninstructed: keep the source
        coverage = image_cond.mean(dim=-1, keepdim=True) / base_luma
        return image_cond + coverage * shift

    prior = ToyGaussianPrior(
        schedule, mu_fn, std=prior_std, kind="TI2I", model_id="toy-shift"
    )
    instruction = EditInstruction(text=instruction_text, kind=EditKind.GLOBAL)
    return ColorShiftTask(
        codec=codec,
        schedule=schedule,
        prior=prior,
        instruction=instruction,
        shift_rgb=shift,
        shift_latent=shift_latent,
        base_luma=base_luma,
    )
