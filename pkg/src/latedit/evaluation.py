"""Edit-quality metrics and the multi-view evaluation harness.

Three metrics: image-text similarity of the edited views against the target
description, directional similarity between the image-space change and the
text-space change, and a structure distance built on self-similarity
descriptors.  The harness renders each evaluation pair from uniformly spaced
azimuths, resizes every view to a common resolution before any embedding is
computed, and aggregates per-pair means into a report.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .codec import Viewpoint, turntable_viewpoints
from .containers import load_latent
from .core import CameraConfig, EditInstruction, EditKind, Latent, make_generator
from .errors import BackendUnavailableError, InputError, ShapeMismatchError

EMBED_RESOLUTION = 256
DEFAULT_VIEW_COUNT = 20


# ---------------------------------------------------------------------------
# cosine geometry

def cosine_similarity(u: torch.Tensor, v: torch.Tensor) -> float:
    """Cosine of the angle between two flat vectors.

    Computed as dot / sqrt(dot_uu * dot_vv) so that identical inputs give
    exactly 1.0 (sqrt of a squared double is exact).  Either vector being all
    zeros gives 0.0.
    """
    u = u.reshape(-1).to(torch.float64)
    v = v.reshape(-1).to(torch.float64)
    if u.shape != v.shape:
        raise ShapeMismatchError(f"vector sizes differ: {u.shape[0]} vs {v.shape[0]}")
    duv = float((u * v).sum())
    duu = float((u * u).sum())
    dvv = float((v * v).sum())
    if duu == 0.0 or dvv == 0.0:
        return 0.0
    return duv / math.sqrt(duu * dvv)


# ---------------------------------------------------------------------------
# embedders and structure backbones

class ToyEmbedder:
    """Deterministic stand-in for an image-text embedding model.

    Images embed as an average-pooled color grid; texts embed as a fixed
    pseudo-random vector derived from the text's bytes.  Both live in the same
    space, so cosine comparisons are well defined (if semantically empty).
    """

    model_id = "toy-embedder"

    def __init__(self, grid: int = 4) -> None:
        self.grid = grid
        self.dim = grid * grid * 3

    def embed_image(self, image: torch.Tensor) -> torch.Tensor:
        if image.ndim != 3 or image.shape[2] != 3:
            raise InputError(f"expected HxWx3 image, got shape {tuple(image.shape)}")
        chw = image.to(torch.float64).permute(2, 0, 1)[None]
        pooled = torch.nn.functional.adaptive_avg_pool2d(chw, self.grid)
        return pooled.reshape(-1)

    def embed_text(self, text: str) -> torch.Tensor:
        if not text:
            raise InputError("cannot embed empty text")
        seed = int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")
        gen = make_generator(seed % (2**63))
        return torch.randn(self.dim, generator=gen, dtype=torch.float64)


class ToyStructureBackbone:
    """Stand-in structure extractor: patch keys are average-pooled colors and
    the descriptor is their flattened pairwise self-similarity."""

    model_id = "toy-structure"

    def __init__(self, grid: int = 8) -> None:
        self.grid = grid

    def descriptor(self, image: torch.Tensor) -> torch.Tensor:
        if image.ndim != 3 or image.shape[2] != 3:
            raise InputError(f"expected HxWx3 image, got shape {tuple(image.shape)}")
        chw = image.to(torch.float64).permute(2, 0, 1)[None]
        keys = torch.nn.functional.adaptive_avg_pool2d(chw, self.grid)
        keys = keys.reshape(3, -1).T  # (grid*grid, 3)
        sim = keys @ keys.T
        return sim.reshape(-1)


class ClipEmbedder:
    """Image-text embedding via a pretrained contrastive model (external weights)."""

    model_id = "clip-vit-l14"

    def __init__(self, weights_dir: str | None = None) -> None:
        raise BackendUnavailableError(
            "image-text embedding weights are not bundled; place the model under "
            "$LATEDIT_WEIGHTS/clip/model.pt and install its runtime"
        )


class DinoStructureBackbone:
    """Structure descriptors from a self-supervised vision transformer's key
    self-similarity (external weights)."""

    model_id = "dino-vit-b8"

    def __init__(self, weights_dir: str | None = None) -> None:
        raise BackendUnavailableError(
            "structure backbone weights are not bundled; place the model under "
            "$LATEDIT_WEIGHTS/dino/model.pt and install its runtime"
        )


EMBEDDER_FACTORIES = {"toy": ToyEmbedder, "clip": ClipEmbedder}
BACKBONE_FACTORIES = {"toy": ToyStructureBackbone, "dino": DinoStructureBackbone}


# ---------------------------------------------------------------------------
# metrics

def clip_sim(images: list[torch.Tensor], target_text: str, embedder) -> float:
    """Mean cosine between each image's embedding and the target text's."""
    if not images:
        raise InputError("clip_sim needs at least one image")
    text_vec = embedder.embed_text(target_text)
    total = 0.0
    for img in images:
        total += cosine_similarity(embedder.embed_image(img), text_vec)
    return total / len(images)


def clip_dir(
    src_images: list[torch.Tensor],
    edit_images: list[torch.Tensor],
    source_text: str,
    target_text: str,
    embedder,
) -> float:
    """Mean per-view cosine between the image-space edit direction and the
    text-space edit direction.  A view whose image direction is exactly zero
    (edit identical to source) contributes 0.
    """
    if len(src_images) != len(edit_images):
        raise InputError(
            f"view lists differ in length: {len(src_images)} vs {len(edit_images)}"
        )
    if not src_images:
        raise InputError("clip_dir needs at least one view")
    text_dir = embedder.embed_text(target_text) - embedder.embed_text(source_text)
    total = 0.0
    for src, edit in zip(src_images, edit_images):
        img_dir = embedder.embed_image(edit) - embedder.embed_image(src)
        total += cosine_similarity(img_dir, text_dir)
    return total / len(src_images)


def structure_distance(img_a: torch.Tensor, img_b: torch.Tensor, backbone) -> float:
    """1 − cosine between the two images' structure descriptors; exactly 0
    for identical images."""
    if img_a.shape != img_b.shape:
        raise ShapeMismatchError(
            f"image shapes differ: {tuple(img_a.shape)} vs {tuple(img_b.shape)}"
        )
    return 1.0 - cosine_similarity(backbone.descriptor(img_a), backbone.descriptor(img_b))


# ---------------------------------------------------------------------------
# evaluation pairs and the harness

@dataclass(frozen=True)
class EvalPair:
    latent: Latent
    class_label: str
    origin: str
    instruction: EditInstruction
    source_text: str
    target_text: str
    pair_id: str = ""

    def __post_init__(self) -> None:
        if not self.source_text or not self.target_text:
            raise InputError("evaluation pair needs non-empty source and target texts")


@dataclass
class EvalReport:
    per_pair: list[dict]
    aggregates: dict[str, float]
    view_count: int
    resolution: int
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_pair": self.per_pair,
            "aggregates": self.aggregates,
            "view_count": self.view_count,
            "resolution": self.resolution,
            "config": self.config,
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    def write_csv(self, path: str | Path) -> None:
        fields = ["pair_id", "class_label", "instruction", "kind",
                  "clip_sim", "clip_dir", "structure_distance"]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in self.per_pair:
                writer.writerow({k: row.get(k) for k in fields})

    def write_plot(self, path: str | Path) -> None:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        metrics = ["clip_sim", "clip_dir", "structure_distance"]
        fig, axes = plt.subplots(1, len(metrics), figsize=(4 * len(metrics), 3.5))
        for ax, metric in zip(axes, metrics):
            labels, values = [], []
            for row in self.per_pair:
                if row.get(metric) is None:
                    continue
                labels.append(f"{row['class_label']}\n{row['instruction'][:18]}")
                values.append(row[metric])
            ax.bar(range(len(values)), values, color="#4878a8")
            if metric in self.aggregates:
                ax.axhline(self.aggregates[metric], color="#c44e52", linestyle="--",
                           linewidth=1, label=f"mean {self.aggregates[metric]:.3f}")
                ax.legend(fontsize=7)
            ax.set_xticks(range(len(labels)))
            ax.set_xticklabels(labels, fontsize=5, rotation=90)
            ax.set_title(metric)
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)


def resize_view(image: torch.Tensor, resolution: int = EMBED_RESOLUTION) -> torch.Tensor:
    """Bilinear resize of an HxWx3 image to resolution x resolution."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise InputError(f"expected HxWx3 image, got shape {tuple(image.shape)}")
    if image.shape[0] == resolution and image.shape[1] == resolution:
        return image
    chw = image.to(torch.float64).permute(2, 0, 1)[None]
    out = torch.nn.functional.interpolate(
        chw, size=(resolution, resolution), mode="bilinear", align_corners=False
    )
    return out[0].permute(1, 2, 0)


def _render_views(codec, latent: torch.Tensor, viewpoints: list[Viewpoint],
                  render_resolution: int, embed_resolution: int) -> list[torch.Tensor]:
    fields = codec.decode(latent)
    views = []
    for vp in viewpoints:
        with torch.no_grad():
            rendered = codec.render(fields, vp, render_resolution)
        views.append(resize_view(rendered.rgb, embed_resolution))
    return views


def evaluate(
    editor,
    eval_set: list[EvalPair],
    codec,
    embedder,
    backbone=None,
    camera: CameraConfig | None = None,
    view_count: int = DEFAULT_VIEW_COUNT,
    embed_resolution: int = EMBED_RESOLUTION,
    seed: int = 0,
) -> EvalReport:
    """Edit every pair, render source and edited assets from ``view_count``
    uniformly spaced azimuths, and compute all metrics on views resized to
    ``embed_resolution``.

    Structure distance is reported for global-edit pairs only (local edits are
    meant to change structure where the mask allows it).
    """
    if not eval_set:
        raise InputError("evaluation set is empty")
    camera = camera or CameraConfig()
    viewpoints = turntable_viewpoints(camera, view_count)
    gen = make_generator(seed)

    per_pair: list[dict] = []
    sums = {"clip_sim": 0.0, "clip_dir": 0.0}
    structure_sum, structure_n = 0.0, 0
    for i, pair in enumerate(eval_set):
        edited = editor.edit_latent(pair.latent, pair.instruction.text, gen)
        src_views = _render_views(codec, pair.latent.data, viewpoints,
                                  camera.render_resolution, embed_resolution)
        edit_views = _render_views(codec, edited.data, viewpoints,
                                   camera.render_resolution, embed_resolution)
        row = {
            "pair_id": pair.pair_id or f"pair{i:02d}",
            "class_label": pair.class_label,
            "origin": pair.origin,
            "instruction": pair.instruction.text,
            "kind": pair.instruction.kind.value,
            "clip_sim": clip_sim(edit_views, pair.target_text, embedder),
            "clip_dir": clip_dir(src_views, edit_views, pair.source_text,
                                 pair.target_text, embedder),
            "structure_distance": None,
        }
        if pair.instruction.kind == EditKind.GLOBAL and backbone is not None:
            dist = 0.0
            for sv, ev in zip(src_views, edit_views):
                dist += structure_distance(sv, ev, backbone)
            row["structure_distance"] = dist / len(src_views)
            structure_sum += row["structure_distance"]
            structure_n += 1
        sums["clip_sim"] += row["clip_sim"]
        sums["clip_dir"] += row["clip_dir"]
        per_pair.append(row)

    aggregates = {k: v / len(eval_set) for k, v in sums.items()}
    if structure_n:
        aggregates["structure_distance"] = structure_sum / structure_n
    return EvalReport(
        per_pair=per_pair,
        aggregates=aggregates,
        view_count=view_count,
        resolution=embed_resolution,
        config={
            "embedder": getattr(embedder, "model_id", "unknown"),
            "backbone": getattr(backbone, "model_id", None) if backbone else None,
            "editor_architecture": getattr(editor, "architecture", "unknown"),
            "seed": seed,
        },
    )


# ---------------------------------------------------------------------------
# evaluation-set loading

def load_eval_pairs(path: str | Path) -> list[EvalPair]:
    """Read an evaluation-set file: JSON with a ``pairs`` list whose entries
    name a latent container plus instruction and text fields."""
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read evaluation set {path}: {exc}") from exc
    pairs = []
    for i, entry in enumerate(spec.get("pairs", [])):
        try:
            ins = entry["instruction"]
            instruction = EditInstruction(
                text=ins["text"],
                kind=EditKind(ins["kind"]),
                target_description=ins.get("target_description"),
                attention_token=ins.get("attention_token"),
            )
            latent_path = path.parent / entry["latent"]
            pairs.append(EvalPair(
                latent=load_latent(latent_path),
                class_label=entry["class_label"],
                origin=entry.get("origin", "generated"),
                instruction=instruction,
                source_text=entry["source_text"],
                target_text=entry["target_text"],
                pair_id=entry.get("pair_id", f"pair{i:02d}"),
            ))
        except KeyError as exc:
            raise InputError(f"evaluation pair {i} is missing field {exc}") from exc
    if not pairs:
        raise InputError(f"evaluation set {path} contains no pairs")
    return pairs


def load_full_scale_eval_manifest() -> dict:
    """The instance-instruction table of the held-out full-scale evaluation
    set (instances themselves are external assets)."""
    from importlib import resources

    with resources.files("latedit").joinpath("data/full_scale_eval_set.json").open() as fh:
        return json.load(fh)
