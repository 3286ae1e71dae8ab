"""The latent editor: a feed-forward network mapping (source latent,
instruction) to an edited latent in a single pass.

The editor's input is the channel-stack of a noised copy of the source latent
(at a fixed step tau) with the clean source latent.  Weights are initialized
from a base denoiser; every weight block that touches the newly added clean
channels (and the instruction embeddings) starts at exactly zero, so a fresh
editor reproduces the base denoiser applied to the noised half alone, bit for
bit.  To keep that equivalence exact, expanded input projections are stored
as two separate weight blocks and applied as two matmuls — concatenating them
into one matrix would reorder the floating-point sums.

The toy architecture is a residual MLP with a linear bypass over the
flattened latent; instruction conditioning enters as a learned embedding
added to the hidden pre-activation (the analogue of appending one token to a
transformer context) plus a learned per-instruction output shift.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import containers
from .core import EditInstruction, EditKind, Latent, NoiseSchedule, make_generator, schedule_at
from .errors import InputError, InstructionError, ShapeMismatchError

DEFAULT_TAU = 200


@dataclass
class StackedInput:
    noised: torch.Tensor
    clean: torch.Tensor


def stack_input(
    r_src: Latent | torch.Tensor,
    eps: torch.Tensor,
    schedule: NoiseSchedule,
    tau: int = DEFAULT_TAU,
) -> StackedInput:
    """(alpha_tau * r + sigma_tau * eps, r)."""
    data = r_src.data if isinstance(r_src, Latent) else r_src
    if data.shape != eps.shape:
        raise ShapeMismatchError(
            f"latent shape {tuple(data.shape)} does not match eps shape {tuple(eps.shape)}"
        )
    alpha, sigma = schedule_at(schedule, tau)
    return StackedInput(noised=alpha * data + sigma * eps, clean=data)


class ToyBaseDenoiser(nn.Module):
    """Pretrained-base stand-in: predicts the clean latent from a noised one
    via a residual MLP with a linear bypass."""

    def __init__(self, latent_shape: tuple[int, int], hidden: int = 64,
                 generator: torch.Generator | None = None) -> None:
        super().__init__()
        self.latent_shape = tuple(latent_shape)
        self.hidden = hidden
        d = latent_shape[0] * latent_shape[1]
        gen = generator or make_generator(0)

        def init(rows, cols, scale):
            return torch.randn(rows, cols, generator=gen, dtype=torch.float64) * scale

        self.w_in = nn.Parameter(init(hidden, d, 1.0 / d**0.5))
        self.b_in = nn.Parameter(torch.zeros(hidden, dtype=torch.float64))
        self.w_lin = nn.Parameter(init(d, d, 0.02 / d**0.5))
        self.b_lin = nn.Parameter(torch.zeros(d, dtype=torch.float64))
        self.w_out = nn.Parameter(init(d, hidden, 0.02 / hidden**0.5))
        self.b_out = nn.Parameter(torch.zeros(d, dtype=torch.float64))

    @classmethod
    def identity(cls, latent_shape: tuple[int, int], hidden: int = 64,
                 generator: torch.Generator | None = None) -> "ToyBaseDenoiser":
        """A base whose output equals its input exactly (zero residual path)."""
        base = cls(latent_shape, hidden, generator)
        with torch.no_grad():
            base.w_lin.zero_()
            base.w_out.zero_()
        return base

    def forward(self, x_flat: torch.Tensor) -> torch.Tensor:
        h = torch.nn.functional.silu(torch.matmul(x_flat, self.w_in.t()) + self.b_in)
        lin = torch.matmul(x_flat, self.w_lin.t()) + self.b_lin
        return x_flat + lin + torch.matmul(h, self.w_out.t()) + self.b_out


class ToyLatentEditor(nn.Module):
    """Single-pass latent editor over flattened toy latents."""

    architecture = "toy-mlp-v1"

    def __init__(
        self,
        latent_shape: tuple[int, int],
        instructions: list[EditInstruction],
        schedule: NoiseSchedule,
        hidden: int = 64,
        tau: int = DEFAULT_TAU,
    ) -> None:
        super().__init__()
        if not instructions:
            raise InputError("an editor needs at least one instruction")
        self.latent_shape = tuple(latent_shape)
        self.hidden = hidden
        self.tau = int(tau)
        self.schedule = schedule
        self.instructions = list(instructions)
        self._index = {ins.text: i for i, ins in enumerate(self.instructions)}
        if len(self._index) != len(self.instructions):
            raise InputError("instruction texts must be unique")
        d = latent_shape[0] * latent_shape[1]
        n = len(self.instructions)
        zeros = lambda *shape: nn.Parameter(torch.zeros(*shape, dtype=torch.float64))
        self.w_in_noised = zeros(hidden, d)
        self.w_in_clean = zeros(hidden, d)
        self.b_in = zeros(hidden)
        self.w_lin_noised = zeros(d, d)
        self.w_lin_clean = zeros(d, d)
        self.b_lin = zeros(d)
        self.w_out = zeros(d, hidden)
        self.b_out = zeros(d)
        self.emb_hidden = zeros(n, hidden)
        self.emb_out = zeros(n, d)
        self.forward_count = 0

    # -- bookkeeping --------------------------------------------------------

    def instruction_index(self, text: str) -> int:
        if text not in self._index:
            raise InstructionError(
                f"unknown instruction {text!r}; trained instructions: "
                f"{[i.text for i in self.instructions]}"
            )
        return self._index[text]

    # -- forward ------------------------------------------------------------

    def forward(self, stacked: StackedInput, instruction_idx: int) -> torch.Tensor:
        """One editing pass.  Accepts latent-shaped halves, returns the edited
        latent in the same shape."""
        self.forward_count += 1
        n = stacked.noised.reshape(-1)
        c = stacked.clean.reshape(-1)
        pre = (
            torch.matmul(n, self.w_in_noised.t())
            + torch.matmul(c, self.w_in_clean.t())
            + self.b_in
            + self.emb_hidden[instruction_idx]
        )
        h = torch.nn.functional.silu(pre)
        lin = (
            torch.matmul(n, self.w_lin_noised.t())
            + torch.matmul(c, self.w_lin_clean.t())
            + self.b_lin
            + self.emb_out[instruction_idx]
        )
        out = n + lin + torch.matmul(h, self.w_out.t()) + self.b_out
        return out.reshape(self.latent_shape)

    def edit_latent(self, r_src: Latent, instruction_text: str,
                    generator: torch.Generator) -> Latent:
        """Sample the stacking noise from ``generator`` and run one forward
        pass."""
        idx = self.instruction_index(instruction_text)
        if tuple(r_src.data.shape) != self.latent_shape:
            raise ShapeMismatchError(
                f"latent shape {tuple(r_src.data.shape)} does not match editor shape "
                f"{self.latent_shape}"
            )
        eps = torch.randn(self.latent_shape, generator=generator, dtype=torch.float64)
        stacked = stack_input(r_src, eps, self.schedule, self.tau)
        out = self.forward(stacked, idx)
        return Latent(out, r_src.codec_id)


def edit(editor: ToyLatentEditor, r_src: Latent, y: EditInstruction | str,
         generator: torch.Generator) -> Latent:
    """Feed-forward edit: exactly one editor forward pass."""
    text = y.text if isinstance(y, EditInstruction) else y
    return editor.edit_latent(r_src, text, generator)


def init_from_pretrained(
    base: ToyBaseDenoiser,
    instructions: list[EditInstruction],
    schedule: NoiseSchedule,
    tau: int = DEFAULT_TAU,
    random_init: bool = False,
    generator: torch.Generator | None = None,
) -> ToyLatentEditor:
    """Build an editor from a base denoiser.

    Default: base weights are copied onto the noised-half blocks and every
    new block (clean-half projections, instruction embeddings) is zero, so
    the fresh editor equals the base applied to the noised half.  With
    ``random_init`` the base is ignored and all weights start random — an
    ablation toggle, not a recommended configuration.
    """
    editor = ToyLatentEditor(
        base.latent_shape, instructions, schedule, hidden=base.hidden, tau=tau
    )
    with torch.no_grad():
        if random_init:
            gen = generator or make_generator(0)
            for p in editor.parameters():
                p.copy_(torch.randn(p.shape, generator=gen, dtype=torch.float64)
                        * (1.0 / max(p.shape[-1], 1) ** 0.5))
        else:
            editor.w_in_noised.copy_(base.w_in)
            editor.b_in.copy_(base.b_in)
            editor.w_lin_noised.copy_(base.w_lin)
            editor.b_lin.copy_(base.b_lin)
            editor.w_out.copy_(base.w_out)
            editor.b_out.copy_(base.b_out)
    return editor


# ---------------------------------------------------------------------------
# checkpoints


def config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(editor: ToyLatentEditor, path, training_config: dict | None = None) -> None:
    arrays = {name: p.detach().cpu().numpy() for name, p in editor.state_dict().items()}
    arrays["schedule_alphas"] = editor.schedule.alphas.numpy()
    arrays["schedule_sigmas"] = editor.schedule.sigmas.numpy()
    manifest = {
        "architecture": editor.architecture,
        "latent_shape": list(editor.latent_shape),
        "hidden": editor.hidden,
        "tau": editor.tau,
        "instructions": [
            {
                "text": ins.text,
                "kind": ins.kind.value,
                "target_description": ins.target_description,
                "attention_token": ins.attention_token,
            }
            for ins in editor.instructions
        ],
        "training_config_hash": config_hash(training_config or {}),
    }
    containers.save_arrays(path, arrays, extra=manifest)


def load_checkpoint(path) -> ToyLatentEditor:
    arrays, manifest = containers.load_arrays(path)
    if manifest.get("architecture") != ToyLatentEditor.architecture:
        raise InputError(
            f"checkpoint architecture {manifest.get('architecture')!r} is not loadable here"
        )
    schedule = NoiseSchedule.from_tables(
        arrays.pop("schedule_alphas"), arrays.pop("schedule_sigmas")
    )
    instructions = [
        EditInstruction(
            text=i["text"],
            kind=EditKind(i["kind"]),
            target_description=i.get("target_description"),
            attention_token=i.get("attention_token"),
        )
        for i in manifest["instructions"]
    ]
    editor = ToyLatentEditor(
        tuple(manifest["latent_shape"]), instructions, schedule,
        hidden=manifest["hidden"], tau=manifest["tau"],
    )
    state = {name: torch.from_numpy(a.copy()) for name, a in arrays.items()}
    editor.load_state_dict(state)
    return editor
