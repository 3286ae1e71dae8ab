"""End-to-end training of the latent editor, plus the per-latent test-time
optimization baseline.

One training step: sample (source latent, instruction) pairs, a shared random
viewpoint per pair, render source and edited views, assemble the
edit-kind-appropriate gradient bundle, and chain it through renderer, decoder
and editor into an optimizer update.  Source latents are encoded once and
cached; prior and codec weights are never touched.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import torch

from . import editor as editor_mod
from .codec import AssetSource, sample_viewpoint
from .core import (
    CameraConfig,
    EditInstruction,
    EditKind,
    GuidanceConfig,
    Latent,
    LossWeights,
    make_generator,
)
from .distill import (
    AblationToggles,
    global_edit_gradients,
    local_edit_gradients,
    surrogate_loss,
)
from .errors import DatasetError, DivergenceError, InputError, LateditError
from .prior import MASK_EXTRACTION_T, Prior, extract_edit_mask

# ---------------------------------------------------------------------------
# datasets


@dataclass
class DatasetEntry:
    class_label: str
    origin: str  # "generated" | "scanned"
    instance_id: str
    latent: Latent | None = None
    asset: AssetSource | None = None
    clip_score: float | None = None

    def __post_init__(self) -> None:
        if self.latent is None and self.asset is None:
            raise InputError(f"entry {self.instance_id!r} has neither latent nor asset")
        if self.origin not in ("generated", "scanned"):
            raise InputError(f"origin must be 'generated' or 'scanned', got {self.origin!r}")


@dataclass
class TrainingDataset:
    entries: list[DatasetEntry]
    instruction_validity: dict[str, set[str]]

    def valid_pairs(self, instructions: list[EditInstruction]) -> list[tuple[DatasetEntry, EditInstruction]]:
        pairs = []
        for ins in instructions:
            valid = self.instruction_validity.get(ins.text)
            for entry in self.entries:
                if valid is None or entry.class_label in valid:
                    pairs.append((entry, ins))
        return pairs


def build_dataset(
    sources: list[DatasetEntry],
    instruction_validity: dict[str, set[str]],
    clip_filter_threshold: float | None = None,
    top_k_per_class: int = 10,
) -> TrainingDataset:
    """Filter generated entries by image-text score and drop entries whose
    class is valid for no instruction.

    With an absolute ``clip_filter_threshold``, scored generated entries below
    it are dropped; otherwise the top ``top_k_per_class`` scored generated
    entries are kept per class.  Scanned and unscored entries pass through.
    """
    validity = {text: set(classes) for text, classes in instruction_validity.items()}
    all_valid_classes = set().union(*validity.values()) if validity else set()

    kept: list[DatasetEntry] = []
    scored_by_class: dict[str, list[DatasetEntry]] = {}
    for entry in sources:
        if entry.origin == "generated" and entry.clip_score is not None:
            scored_by_class.setdefault(entry.class_label, []).append(entry)
        else:
            kept.append(entry)
    for label, group in scored_by_class.items():
        if clip_filter_threshold is not None:
            kept.extend(e for e in group if e.clip_score >= clip_filter_threshold)
        else:
            group = sorted(group, key=lambda e: e.clip_score, reverse=True)
            kept.extend(group[:top_k_per_class])

    kept = [e for e in kept if e.class_label in all_valid_classes]
    if not kept:
        raise DatasetError("dataset construction produced no entries")
    order = {id(e): i for i, e in enumerate(sources)}
    kept.sort(key=lambda e: order[id(e)])
    return TrainingDataset(entries=kept, instruction_validity=validity)


def load_full_scale_manifest() -> dict:
    """Class lists and per-instruction validity tables of the full-scale
    training corpus (the corpus itself — meshes and scans — is external)."""
    from importlib import resources

    with resources.files("latedit").joinpath("data/full_scale_dataset.json").open() as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# training configuration and schedules


@dataclass(frozen=True)
class PriorSet:
    """The priors a training run draws gradients from, keyed by role."""

    ti2i_global: Prior | None = None
    ti2i_local: Prior | None = None
    t2i: Prior | None = None
    mask_source: Prior | None = None  # defaults to ti2i_local

    def for_kind(self, kind: EditKind) -> tuple[Prior, Prior | None]:
        if kind == EditKind.GLOBAL:
            if self.ti2i_global is None:
                raise InputError("global edits need an image-to-image prior")
            return self.ti2i_global, None
        if self.ti2i_local is None:
            raise InputError("local edits need an image-to-image prior")
        return self.ti2i_local, self.t2i

    @property
    def attention_prior(self) -> Prior | None:
        return self.mask_source or self.ti2i_local


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 64
    learning_rate: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-2
    optimizer: str = "adamw"  # "adamw" | "sgd"
    momentum: float = 0.9  # sgd only
    lr_schedule: str = "constant"  # "constant" | "cosine"
    warmup_epochs: int | None = None  # None: 10% of epochs
    anneal_start_epoch: int = 100
    anneal_ratio: float = 0.8
    anneal_every: int = 10
    t_min_frac: float = 0.02
    t_max_frac: float = 0.98
    tau: int = editor_mod.DEFAULT_TAU
    seed: int = 0
    prompt_mode: str = "single"  # "single" | "multi"
    camera: CameraConfig = field(default_factory=CameraConfig)
    guidance_global: GuidanceConfig = field(default_factory=GuidanceConfig)
    guidance_local: GuidanceConfig = field(default_factory=GuidanceConfig.local_default)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    toggles: AblationToggles = field(default_factory=AblationToggles)
    mask_extraction_t: int = MASK_EXTRACTION_T
    max_steps: int | None = None
    checkpoint_every: int = 0  # 0: final checkpoint only
    divergence_patience: int = 3

    def __post_init__(self) -> None:
        if not 0 < self.anneal_ratio < 1:
            raise InputError("anneal ratio must lie in (0, 1)")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise InputError("epochs and batch size must be positive")
        if self.prompt_mode not in ("single", "multi"):
            raise InputError("prompt_mode must be 'single' or 'multi'")
        if self.optimizer not in ("adamw", "sgd"):
            raise InputError("optimizer must be 'adamw' or 'sgd'")
        if self.lr_schedule not in ("constant", "cosine"):
            raise InputError("lr_schedule must be 'constant' or 'cosine'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(d["betas"])
        d["camera"]["azimuth_range_deg"] = list(d["camera"]["azimuth_range_deg"])
        return d


def anneal_max_timestep(epoch: int, cfg: TrainConfig) -> float:
    """Upper end of the timestep-sampling range as a fraction of T.

    Constant at ``t_max_frac`` before the annealing start, then multiplied by
    ``anneal_ratio`` once per ``anneal_every`` epochs.  Computed with exact
    decimal arithmetic (the parameters are decimal rates), so e.g.
    0.98 * 0.8^2 is exactly 0.6272.
    """
    if epoch < cfg.anneal_start_epoch:
        return cfg.t_max_frac
    k = (epoch - cfg.anneal_start_epoch) // cfg.anneal_every
    return float(Fraction(repr(cfg.t_max_frac)) * Fraction(repr(cfg.anneal_ratio)) ** k)


def photometric_warmup(epoch: int, cfg: TrainConfig) -> float:
    """Linear ramp of the photometric weight from 0 to its configured value
    over the warm-up epochs."""
    warmup = cfg.warmup_epochs
    if warmup is None:
        warmup = max(1, round(0.1 * cfg.epochs))
    lam = cfg.loss_weights.lambda_photo
    if epoch >= warmup:
        return lam
    return lam * (epoch / warmup)


# ---------------------------------------------------------------------------
# metrics sink


class MetricsLog:
    """Line-delimited JSON log of per-term training diagnostics."""

    def __init__(self, path: str | Path | None) -> None:
        self.path = Path(path) if path is not None else None
        self._fh = open(self.path, "w") if self.path is not None else None
        self.records: list[dict] = []

    def log(self, term: str, value: float, t: int, epoch: int, step: int) -> None:
        rec = {"term": term, "value": value, "t": t, "epoch": epoch, "step": step}
        self.records.append(rec)
        if self._fh is not None:
            self._fh.write(json.dumps(rec) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


# ---------------------------------------------------------------------------
# the training loop


@dataclass
class TrainResult:
    checkpoints: list[Path]
    metrics_path: Path | None
    steps_run: int
    epochs_run: int


def _sample_step_bundle(
    entry_latent: torch.Tensor,
    instruction: EditInstruction,
    edited_latent: torch.Tensor,
    codec,
    priors: PriorSet,
    cfg: TrainConfig,
    schedule,
    t: int,
    gen: torch.Generator,
    weights: LossWeights,
):
    """Render the shared-viewpoint pair and build the gradient bundle for one
    (latent, instruction) sample.  Returns (bundle, edited view)."""
    vp = sample_viewpoint(gen, cfg.camera)
    res = cfg.camera.render_resolution
    with torch.no_grad():
        v_s = codec.render(codec.decode(entry_latent), vp, res)
    v_e = codec.render(codec.decode(edited_latent), vp, res)
    eps_img = torch.randn(v_e.rgb.shape, generator=gen, dtype=torch.float64)
    if instruction.kind == EditKind.GLOBAL:
        prior, _ = priors.for_kind(EditKind.GLOBAL)
        bundle = global_edit_gradients(
            prior, v_s.rgb, v_e.rgb, v_s.depth, v_e.depth, instruction,
            t, eps_img, schedule, cfg.guidance_global, weights,
        )
    else:
        ti2i, t2i = priors.for_kind(EditKind.LOCAL)
        mask = None
        if cfg.toggles.use_reg and cfg.toggles.use_mask:
            mask = extract_edit_mask(
                priors.attention_prior, v_s.rgb, instruction,
                instruction.attention_token, t=cfg.mask_extraction_t,
                out_resolution=res,
            )
        bundle = local_edit_gradients(
            ti2i, t2i, v_s.rgb, v_e.rgb, v_s.depth, v_e.depth, instruction,
            mask, t, eps_img, schedule, cfg.guidance_local, weights,
            toggles=cfg.toggles,
        )
    return bundle, v_e


def _sample_t(gen: torch.Generator, schedule, t_min_frac: float, t_max_frac: float) -> int:
    lo = int(math.ceil(t_min_frac * schedule.steps))
    hi = max(int(math.floor(t_max_frac * schedule.steps)), lo)
    return int(torch.randint(lo, hi + 1, (1,), generator=gen))


def _param_groups(editor: editor_mod.ToyLatentEditor, weight_decay: float) -> list[dict]:
    """Two optimizer groups: weight decay on the mixing matrices only.

    Biases and the per-instruction embedding rows are exempt — they carry the
    input-independent component of an edit, and shrinking them biases every
    edit toward the identity.  Decaying only the matrices pushes whatever part
    of an edit is constant across inputs into the embedding, which is the part
    that transfers to unseen latents.
    """
    decay, exempt = [], []
    for name, param in editor.named_parameters():
        (exempt if name.startswith(("b_", "emb_")) else decay).append(param)
    return [
        {"params": decay, "weight_decay": weight_decay},
        {"params": exempt, "weight_decay": 0.0},
    ]


def _build_optimizer(editor: editor_mod.ToyLatentEditor, cfg: TrainConfig) -> torch.optim.Optimizer:
    groups = _param_groups(editor, cfg.weight_decay)
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(groups, lr=cfg.learning_rate, momentum=cfg.momentum)
    return torch.optim.AdamW(groups, lr=cfg.learning_rate, betas=cfg.betas)


def train(
    cfg: TrainConfig,
    data: TrainingDataset,
    editor: editor_mod.ToyLatentEditor,
    codec,
    priors: PriorSet,
    out_dir: str | Path | None = None,
    metrics_path: str | Path | None = None,
) -> TrainResult:
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        if metrics_path is None:
            metrics_path = out_dir / "metrics.jsonl"
    metrics = MetricsLog(metrics_path)

    instructions = editor.instructions
    if cfg.prompt_mode == "single" and len(instructions) != 1:
        raise InputError("single-prompt training expects an editor with exactly one instruction")
    pairs = data.valid_pairs(instructions)
    if not pairs:
        raise DatasetError("no valid (entry, instruction) pairs to train on")

    gen = make_generator(cfg.seed)
    schedule = editor.schedule
    opt = _build_optimizer(editor, cfg)
    scheduler = None
    if cfg.lr_schedule == "cosine":
        planned = cfg.epochs * max(1, math.ceil(len(pairs) / cfg.batch_size))
        if cfg.max_steps is not None:
            planned = min(planned, cfg.max_steps)
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(1, planned))

    latent_cache: dict[str, Latent] = {}

    def source_latent(entry: DatasetEntry) -> Latent:
        if entry.instance_id not in latent_cache:
            latent_cache[entry.instance_id] = (
                entry.latent if entry.latent is not None else codec.encode(entry.asset)
            )
        return latent_cache[entry.instance_id]

    checkpoints: list[Path] = []
    step = 0
    epochs_run = 0
    bad_steps = 0
    stop = False

    def checkpoint(tag: str) -> Path:
        path = (out_dir or Path(".")) / f"editor_{tag}.ckpt"
        editor_mod.save_checkpoint(editor, path, training_config=cfg.to_dict())
        checkpoints.append(path)
        return path

    try:
        for epoch in range(cfg.epochs):
            if stop:
                break
            t_max = anneal_max_timestep(epoch, cfg)
            weights = replace(cfg.loss_weights, lambda_photo=photometric_warmup(epoch, cfg))
            order = torch.randperm(len(pairs), generator=gen).tolist()
            for batch_start in range(0, len(order), cfg.batch_size):
                batch = [pairs[i] for i in order[batch_start:batch_start + cfg.batch_size]]
                opt.zero_grad()
                step_failed = False
                for entry, instruction in batch:
                    r_s = source_latent(entry)
                    try:
                        r_e = editor.edit_latent(r_s, instruction.text, gen)
                        t = _sample_t(gen, schedule, cfg.t_min_frac, t_max)
                        bundle, v_e = _sample_step_bundle(
                            r_s, instruction, r_e.data, codec, priors, cfg,
                            schedule, t, gen, weights,
                        )
                        loss = surrogate_loss(bundle, v_e.rgb, v_e.depth) / len(batch)
                        if not torch.isfinite(loss):
                            raise InputError("non-finite surrogate loss")
                        loss.backward()
                    except InputError:
                        step_failed = True
                        break
                    for term, value in bundle.diagnostics.items():
                        metrics.log(term, value, t, epoch, step)
                if step_failed:
                    bad_steps += 1
                    if bad_steps >= cfg.divergence_patience:
                        snapshot = checkpoint(f"divergence_step{step}")
                        raise DivergenceError(
                            f"losses non-finite for {bad_steps} consecutive steps; "
                            f"snapshot at {snapshot}"
                        )
                    continue
                bad_steps = 0
                opt.step()
                if scheduler is not None:
                    scheduler.step()
                step += 1
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    stop = True
                    break
            epochs_run = epoch + 1
            if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                checkpoint(f"epoch{epoch + 1:04d}")
        checkpoint("final")
    finally:
        metrics.close()
    return TrainResult(
        checkpoints=checkpoints,
        metrics_path=metrics.path,
        steps_run=step,
        epochs_run=epochs_run,
    )


# ---------------------------------------------------------------------------
# test-time optimization baseline


def test_time_optimize(
    r_src: Latent,
    y: EditInstruction,
    codec,
    priors: PriorSet,
    steps: int,
    schedule=None,
    learning_rate: float = 1e-2,
    lr_schedule: str = "constant",
    cfg: TrainConfig | None = None,
) -> Latent:
    """Gradient descent on a single latent under the same per-kind losses, in
    lieu of a learned editor.  ``steps=0`` returns the source unchanged."""
    cfg = cfg or TrainConfig(epochs=1, batch_size=1)
    if schedule is None:
        raise InputError("test_time_optimize needs the diffusion schedule")
    if lr_schedule not in ("constant", "cosine"):
        raise InputError("lr_schedule must be 'constant' or 'cosine'")
    latent = r_src.data.detach().clone().requires_grad_(True)
    opt = torch.optim.Adam([latent], lr=learning_rate)
    decay = None
    if lr_schedule == "cosine":
        decay = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(1, int(steps)))
    gen = make_generator(cfg.seed)
    weights = cfg.loss_weights
    for k in range(int(steps)):
        opt.zero_grad()
        t = _sample_t(gen, schedule, cfg.t_min_frac, cfg.t_max_frac)
        bundle, v_e = _sample_step_bundle(
            r_src.data, y, latent, codec, priors, cfg, schedule, t, gen, weights,
        )
        loss = surrogate_loss(bundle, v_e.rgb, v_e.depth)
        if not torch.isfinite(loss):
            raise DivergenceError(f"non-finite loss at optimization step {k}")
        loss.backward()
        opt.step()
        if decay is not None:
            decay.step()
    return Latent(latent.detach(), r_src.codec_id)
