"""Arithmetic on edit residuals in latent space.

Every operation here is pure tensor arithmetic on editor outputs — no prior,
no renderer.  An "edit residual" is ``edited - source``; scaling it scales the
edit's strength, and residuals extracted from one instance can be replayed on
another.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch

from .containers import load_arrays, save_arrays
from .core import EditInstruction, Latent
from .errors import InputError, ShapeMismatchError


def _check_same_geometry(a: Latent, b: Latent) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"latent shapes differ: {tuple(a.data.shape)} vs {tuple(b.data.shape)}")
    if a.codec_id != b.codec_id:
        raise InputError(f"latents target different codecs: {a.codec_id!r} vs {b.codec_id!r}")


def scale_edit(r_src: Latent, r_edit: Latent, eta: float) -> Latent:
    """Interpolate (0 < eta < 1) or extrapolate (eta > 1) along the edit
    direction: ``r_src + eta * (r_edit - r_src)``.

    eta=0 returns the source bitwise; eta=1 returns the edit bitwise.
    """
    _check_same_geometry(r_src, r_edit)
    if eta == 0.0:
        return r_src.clone()
    if eta == 1.0:
        return r_edit.clone()
    return Latent(r_src.data + eta * (r_edit.data - r_src.data), r_src.codec_id)


def sequential_edit(
    editor,
    r_src: Latent,
    instructions: list[EditInstruction | str],
    generator: torch.Generator,
) -> list[Latent]:
    """Apply instructions in order, each to the previous output.  Returns the
    intermediate latents, one per instruction."""
    if not instructions:
        raise InputError("sequential_edit needs at least one instruction")
    out: list[Latent] = []
    current = r_src
    for ins in instructions:
        text = ins.text if isinstance(ins, EditInstruction) else ins
        current = editor.edit_latent(current, text, generator)
        out.append(current)
    return out


@dataclass(frozen=True)
class EditVector:
    """A reusable edit direction: the residual of one concrete edit."""

    delta: torch.Tensor
    codec_id: str
    instruction_text: str

    def __post_init__(self) -> None:
        if not torch.isfinite(self.delta).all():
            raise InputError("edit vector contains non-finite values")


def extract_edit_vector(r_src: Latent, r_edit: Latent, instruction: EditInstruction | str) -> EditVector:
    _check_same_geometry(r_src, r_edit)
    text = instruction.text if isinstance(instruction, EditInstruction) else instruction
    return EditVector(
        delta=(r_edit.data - r_src.data).detach().clone(),
        codec_id=r_src.codec_id,
        instruction_text=text,
    )


def apply_edit_vector(r: Latent, vec: EditVector, eta: float = 1.0) -> Latent:
    """Transfer an extracted edit direction onto another latent."""
    if r.data.shape != vec.delta.shape:
        raise ShapeMismatchError(
            f"latent shape {tuple(r.data.shape)} does not match vector shape {tuple(vec.delta.shape)}"
        )
    if r.codec_id != vec.codec_id:
        raise InputError(f"vector was extracted for codec {vec.codec_id!r}, latent is {r.codec_id!r}")
    return Latent(r.data + eta * vec.delta, r.codec_id)


def save_edit_vector(vec: EditVector, path: str | Path) -> None:
    save_arrays(
        path,
        {"delta": vec.delta.detach().cpu().numpy()},
        extra={"codec_id": vec.codec_id, "instruction_text": vec.instruction_text},
    )


def load_edit_vector(path: str | Path) -> EditVector:
    arrays, extra = load_arrays(path)
    try:
        return EditVector(
            delta=torch.from_numpy(arrays["delta"].copy()),
            codec_id=extra["codec_id"],
            instruction_text=extra["instruction_text"],
        )
    except KeyError as exc:
        raise InputError(f"edit vector file {path} is missing field {exc}") from exc
