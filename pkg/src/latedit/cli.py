"""Command-line entry points: training, per-latent optimization, evaluation,
serving, latent arithmetic, and small utilities for generating synthetic data
and rendering turntables.

Full-scale backends (pretrained diffusion priors, the production codec,
embedding models) are selected by name but require external weights; the
``toy`` variants run anywhere and back all the demos.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import torch
import yaml

from . import editor as editor_mod
from . import evaluation, latent_ops, service, toytask, trainer
from .codec import ToyCodec, get_codec, load_point_cloud, turntable_viewpoints
from .config import AppConfig, load_config
from .containers import load_latent, save_depth_png, save_latent, save_rgb_png
from .core import CameraConfig, EditInstruction, EditKind, make_generator
from .errors import BackendUnavailableError, InputError, LateditError


def _read_train_file(path: str | None):
    """The train config file: regular app configuration plus optional
    ``train`` (loop hyper-parameters), ``prior`` and ``task`` sections."""
    raw = {}
    if path:
        raw = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(raw, dict):
            raise InputError(f"top level of {path} must be a mapping")
    app = AppConfig.from_dict(raw)
    train_kwargs = dict(raw.get("train", {}))
    task_kwargs = dict(raw.get("task", {}))
    prior_name = raw.get("prior", "toy-shift")
    return app, train_kwargs, task_kwargs, prior_name


def _prompts_from_args(args) -> list[str]:
    prompts: list[str] = []
    if getattr(args, "prompt", None):
        prompts.append(args.prompt)
    if getattr(args, "prompt_file", None):
        lines = Path(args.prompt_file).read_text().splitlines()
        prompts.extend(line.strip() for line in lines if line.strip())
    return prompts


def _toy_task_for(prompts: list[str], app: AppConfig, task_kwargs: dict):
    text = prompts[0] if prompts else "shift the colors"
    kwargs = {"schedule": app.schedule.build(), "instruction_text": text}
    kwargs.update(task_kwargs)
    return toytask.make_color_shift_task(**kwargs)


def _load_dataset_dir(path: Path) -> trainer.TrainingDataset:
    manifest_path = path / "dataset.json"
    if not manifest_path.exists():
        raise InputError(f"{path} has no dataset.json manifest")
    manifest = json.loads(manifest_path.read_text())
    entries = []
    for e in manifest.get("entries", []):
        latent = asset = None
        if "latent" in e:
            latent = load_latent(path / e["latent"])
        elif "asset" in e:
            asset = load_point_cloud(path / e["asset"], class_label=e.get("class_label", ""))
        entries.append(trainer.DatasetEntry(
            class_label=e["class_label"],
            origin=e.get("origin", "generated"),
            instance_id=e.get("instance_id", Path(e.get("latent", e.get("asset", ""))).stem),
            latent=latent,
            asset=asset,
            clip_score=e.get("clip_score"),
        ))
    validity = {
        text: set(classes)
        for text, classes in manifest.get("instruction_validity", {}).items()
    }
    return trainer.build_dataset(entries, validity)


def _toy_dataset(task, count: int, prompts: list[str], seed: int) -> trainer.TrainingDataset:
    gen = make_generator(seed)
    entries = [
        trainer.DatasetEntry(
            class_label="toy",
            origin="generated",
            instance_id=f"toy{i:03d}",
            latent=task.sample_source_latent(gen),
        )
        for i in range(count)
    ]
    texts = prompts or [task.instruction.text]
    return trainer.build_dataset(entries, {text: {"toy"} for text in texts})


def _codec_for_checkpoint(name: str, latent_shape: tuple[int, int]):
    if name == "toy":
        grid = int(math.isqrt(latent_shape[0]))
        if grid * grid != latent_shape[0] or latent_shape[1] != 4:
            raise InputError(
                f"checkpoint latent shape {latent_shape} is not a toy grid latent"
            )
        return ToyCodec(grid_size=grid)
    return get_codec(name)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_train(args) -> int:
    app, train_kwargs, task_kwargs, prior_name = _read_train_file(args.config)
    prompts = _prompts_from_args(args)
    if prior_name != "toy-shift":
        from .prior import get_prior

        get_prior(prior_name)  # full-scale priors raise until weights exist
        raise InputError("only the toy prior is runnable without external weights")
    data = None
    if not args.data.startswith("toy:"):
        data = _load_dataset_dir(Path(args.data))
        if "grid_size" not in task_kwargs:
            first = next((e.latent for e in data.entries if e.latent is not None), None)
            if first is not None:
                task_kwargs["grid_size"] = int(math.isqrt(first.data.shape[0]))
    task = _toy_task_for(prompts, app, task_kwargs)
    instructions = [
        EditInstruction(text=t, kind=EditKind.GLOBAL) for t in (prompts or [task.instruction.text])
    ]
    if "prompt_mode" not in train_kwargs:
        train_kwargs["prompt_mode"] = "single" if len(instructions) == 1 else "multi"
    cfg = trainer.TrainConfig(
        tau=app.tau,
        guidance_global=app.guidance_global,
        guidance_local=app.guidance_local,
        loss_weights=app.loss_weights,
        camera=app.camera_train,
        **train_kwargs,
    )

    if data is None:
        count = int(args.data.split(":", 1)[1])
        data = _toy_dataset(task, count, [i.text for i in instructions], cfg.seed)

    if args.resume:
        editor = editor_mod.load_checkpoint(args.resume)
    else:
        base = editor_mod.ToyBaseDenoiser.identity(
            task.codec.latent_shape, generator=make_generator(cfg.seed)
        )
        editor = editor_mod.init_from_pretrained(
            base, instructions, task.schedule, tau=cfg.tau
        )
    priors = trainer.PriorSet(ti2i_global=task.prior, ti2i_local=task.prior)
    result = trainer.train(cfg, data, editor, task.codec, priors, out_dir=args.out)
    print(f"trained {result.epochs_run} epochs / {result.steps_run} steps")
    print(f"checkpoint: {result.checkpoints[-1]}")
    if result.metrics_path:
        print(f"metrics: {result.metrics_path}")
    return 0


def _cmd_optimize_latent(args) -> int:
    app, train_kwargs, task_kwargs, _ = _read_train_file(args.config)
    task = _toy_task_for([args.prompt], app, task_kwargs)
    source = load_latent(args.latent)
    cfg = trainer.TrainConfig(
        tau=app.tau,
        guidance_global=app.guidance_global,
        loss_weights=app.loss_weights,
        camera=app.camera_train,
        **train_kwargs,
    )
    result = trainer.test_time_optimize(
        source, task.instruction, task.codec,
        trainer.PriorSet(ti2i_global=task.prior),
        steps=args.steps, schedule=task.schedule,
        learning_rate=args.learning_rate, cfg=cfg,
    )
    out = args.out or str(Path(args.latent).with_suffix(".optimized.lat"))
    save_latent(out, result)
    delta = (result.data - source.data).abs().max()
    print(f"optimized latent written to {out} (max |delta| = {float(delta):.4f})")
    return 0


def _cmd_evaluate(args) -> int:
    editor = editor_mod.load_checkpoint(args.ckpt)
    pairs = evaluation.load_eval_pairs(args.eval_set)
    codec = _codec_for_checkpoint(args.codec, editor.latent_shape)
    embedder = evaluation.EMBEDDER_FACTORIES[args.embedder]()
    backbone = None
    if args.backbone != "none":
        backbone = evaluation.BACKBONE_FACTORIES[args.backbone]()
    camera = CameraConfig(render_resolution=args.render_res)
    report = evaluation.evaluate(
        editor, pairs, codec, embedder, backbone,
        camera=camera, view_count=args.views, seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "report.json")
    report.write_csv(out / "report.csv")
    report.write_plot(out / "report.png")
    for name, value in sorted(report.aggregates.items()):
        print(f"{name}: {value:.4f}")
    print(f"report written to {out}")
    return 0


def _cmd_serve(args) -> int:
    editor = editor_mod.load_checkpoint(args.ckpt)
    codec = _codec_for_checkpoint(args.codec, editor.latent_shape)
    config = load_config(args.config)
    service.serve(editor, codec, args.store, port=args.port, host=args.host,
                  config=config)
    return 0


def _cmd_latent_op(args) -> int:
    if args.op == "scale":
        src = load_latent(args.src)
        edit = load_latent(args.edit)
        save_latent(args.out, latent_ops.scale_edit(src, edit, args.eta))
        print(f"scaled latent written to {args.out}")
    elif args.op == "chain":
        editor = editor_mod.load_checkpoint(args.ckpt)
        source = load_latent(args.latent)
        gen = make_generator(args.seed)
        results = latent_ops.sequential_edit(editor, source, args.prompts, gen)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for i, latent in enumerate(results):
            save_latent(out_dir / f"step_{i:02d}.lat", latent)
        print(f"{len(results)} chained latents written to {out_dir}")
    elif args.op == "extract-vector":
        src = load_latent(args.src)
        edit = load_latent(args.edit)
        vec = latent_ops.extract_edit_vector(src, edit, args.instruction)
        latent_ops.save_edit_vector(vec, args.out)
        print(f"edit vector written to {args.out}")
    elif args.op == "apply-vector":
        latent = load_latent(args.latent)
        vec = latent_ops.load_edit_vector(args.vector)
        save_latent(args.out, latent_ops.apply_edit_vector(latent, vec, args.eta))
        print(f"edited latent written to {args.out}")
    else:  # pragma: no cover - argparse restricts choices
        raise InputError(f"unknown latent-op {args.op!r}")
    return 0


def _cmd_render(args) -> int:
    latent = load_latent(args.latent)
    codec = _codec_for_checkpoint(args.codec, tuple(latent.data.shape))
    camera = CameraConfig(render_resolution=args.res)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fields = codec.decode(latent)
    for i, vp in enumerate(turntable_viewpoints(camera, args.frames)):
        with torch.no_grad():
            view = codec.render(fields, vp, args.res)
        save_rgb_png(out / f"frame_{i:03d}.png", view.rgb)
        if args.depth:
            save_depth_png(out / f"depth_{i:03d}.png", view.depth,
                           far=codec.far_plane(vp))
    print(f"{args.frames} frames written to {out}")
    return 0


def _cmd_toy_data(args) -> int:
    task = toytask.make_color_shift_task(grid_size=args.grid_size,
                                         instruction_text=args.prompt)
    gen = make_generator(args.seed)
    out = Path(args.out)
    (out / "latents").mkdir(parents=True, exist_ok=True)
    entries = []
    pairs = []
    for i in range(args.count):
        latent = task.sample_source_latent(gen)
        rel = f"latents/toy{i:03d}.lat"
        save_latent(out / rel, latent)
        entries.append({
            "latent": rel,
            "class_label": "toy",
            "origin": "generated",
            "instance_id": f"toy{i:03d}",
        })
        pairs.append({
            "latent": rel,
            "class_label": "toy",
            "origin": "generated",
            "instruction": {"text": args.prompt, "kind": "global"},
            "source_text": "a toy grid object",
            "target_text": f"a toy grid object, {args.prompt}",
            "pair_id": f"toy{i:03d}",
        })
    (out / "dataset.json").write_text(json.dumps(
        {"entries": entries, "instruction_validity": {args.prompt: ["toy"]}},
        indent=2,
    ))
    (out / "eval_set.json").write_text(json.dumps({"pairs": pairs}, indent=2))
    print(f"{args.count} toy latents written to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latedit",
        description="feed-forward text-instructed 3D edits in latent space",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the latent editor")
    p.add_argument("--config", help="YAML configuration file")
    p.add_argument("--data", required=True,
                   help="dataset directory with dataset.json, or toy:<count>")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--prompt", help="single instruction to train")
    p.add_argument("--prompt-file", help="file with one instruction per line")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("optimize-latent",
                       help="optimize a single latent (no learned editor)")
    p.add_argument("--latent", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--config", help="YAML configuration file")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--learning-rate", type=float, default=1e-2)
    p.add_argument("--out", help="output latent path")
    p.set_defaults(func=_cmd_optimize_latent)

    p = sub.add_parser("evaluate", help="run the multi-view evaluation harness")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--eval-set", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--codec", default="toy")
    p.add_argument("--embedder", default="toy",
                   choices=sorted(evaluation.EMBEDDER_FACTORIES))
    p.add_argument("--backbone", default="toy",
                   choices=sorted(evaluation.BACKBONE_FACTORIES) + ["none"])
    p.add_argument("--views", type=int, default=evaluation.DEFAULT_VIEW_COUNT)
    p.add_argument("--render-res", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("serve", help="serve the editing API")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--codec", default="toy")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--store", default="./sessions")
    p.add_argument("--config", help="YAML configuration file")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("latent-op", help="latent-space edit arithmetic")
    op_sub = p.add_subparsers(dest="op", required=True)
    sp = op_sub.add_parser("scale", help="interpolate/extrapolate an edit")
    sp.add_argument("--src", required=True)
    sp.add_argument("--edit", required=True)
    sp.add_argument("--eta", type=float, required=True)
    sp.add_argument("--out", required=True)
    sp = op_sub.add_parser("chain", help="apply instructions sequentially")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--latent", required=True)
    sp.add_argument("--prompt", action="append", dest="prompts", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp = op_sub.add_parser("extract-vector", help="turn one edit into a vector")
    sp.add_argument("--src", required=True)
    sp.add_argument("--edit", required=True)
    sp.add_argument("--instruction", required=True)
    sp.add_argument("--out", required=True)
    sp = op_sub.add_parser("apply-vector", help="apply a stored edit vector")
    sp.add_argument("--latent", required=True)
    sp.add_argument("--vector", required=True)
    sp.add_argument("--eta", type=float, default=1.0)
    sp.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_latent_op)

    p = sub.add_parser("render", help="render a turntable from a latent")
    p.add_argument("--latent", required=True)
    p.add_argument("--codec", default="toy")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=12)
    p.add_argument("--res", type=int, default=128)
    p.add_argument("--depth", action="store_true", help="also write depth maps")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("toy-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--grid-size", type=int, default=4)
    p.add_argument("--prompt", default="shift the colors")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_toy_data)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BackendUnavailableError as exc:
        print(f"backend unavailable: {exc}", file=sys.stderr)
        return 3
    except LateditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
