import json

import pytest
import torch

from latedit.core import (
    CameraConfig,
    EditInstruction,
    EditKind,
    GuidanceConfig,
    Latent,
    LossWeights,
    make_generator,
)
from latedit.editor import ToyBaseDenoiser, init_from_pretrained, load_checkpoint
from latedit.errors import DatasetError, DivergenceError, InputError
from latedit.prior import Prior
from latedit.toytask import make_color_shift_task
from latedit.trainer import (
    DatasetEntry,
    MetricsLog,
    PriorSet,
    TrainConfig,
    TrainingDataset,
    _sample_t,
    anneal_max_timestep,
    build_dataset,
    load_full_scale_manifest,
    photometric_warmup,
    train,
)
from latedit.trainer import test_time_optimize as run_tto  # avoid test collection


# -- timestep annealing ------------------------------------------------------

def test_anneal_constant_before_start():
    cfg = TrainConfig()
    assert anneal_max_timestep(0, cfg) == 0.98
    assert anneal_max_timestep(99, cfg) == 0.98


def test_anneal_decimal_exact_sequence():
    cfg = TrainConfig()
    assert anneal_max_timestep(100, cfg) == 0.98
    assert anneal_max_timestep(110, cfg) == 0.784
    assert anneal_max_timestep(120, cfg) == 0.6272
    assert anneal_max_timestep(130, cfg) == 0.50176


def test_anneal_steps_are_piecewise_constant():
    cfg = TrainConfig()
    for epoch in range(100, 110):
        assert anneal_max_timestep(epoch, cfg) == 0.98
    for epoch in range(110, 120):
        assert anneal_max_timestep(epoch, cfg) == 0.784


def test_anneal_monotone_nonincreasing():
    cfg = TrainConfig()
    values = [anneal_max_timestep(e, cfg) for e in range(0, 200)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_anneal_ratio_validated():
    with pytest.raises(InputError):
        TrainConfig(anneal_ratio=1.0)
    with pytest.raises(InputError):
        TrainConfig(anneal_ratio=0.0)


# -- photometric warm-up -----------------------------------------------------

def test_warmup_endpoints_exact():
    cfg = TrainConfig(epochs=150)  # default warm-up: 15 epochs
    lam = cfg.loss_weights.lambda_photo
    assert photometric_warmup(0, cfg) == 0.0
    assert photometric_warmup(15, cfg) == lam
    assert photometric_warmup(149, cfg) == lam


def test_warmup_linear_ramp():
    cfg = TrainConfig(epochs=150, warmup_epochs=4)
    lam = cfg.loss_weights.lambda_photo
    assert photometric_warmup(1, cfg) == lam * 0.25
    assert photometric_warmup(2, cfg) == lam * 0.5
    assert photometric_warmup(3, cfg) == lam * 0.75
    assert photometric_warmup(4, cfg) == lam


def test_warmup_defaults_to_tenth_of_epochs():
    cfg = TrainConfig(epochs=20)
    lam = cfg.loss_weights.lambda_photo
    assert photometric_warmup(1, cfg) == lam * 0.5
    assert photometric_warmup(2, cfg) == lam


# -- dataset construction ----------------------------------------------------

def _latent(n=4):
    return Latent(torch.zeros(n, 4, dtype=torch.float64), "toy-grid-2")


def _entry(label, origin="generated", score=None, iid=None):
    return DatasetEntry(class_label=label, origin=origin, instance_id=iid or label,
                        latent=_latent(), clip_score=score)


def test_build_dataset_top_k_per_class():
    sources = [_entry("cat", score=0.1 * i, iid=f"cat-{i}") for i in range(12)]
    ds = build_dataset(sources, {"gold": {"cat"}}, top_k_per_class=10)
    assert len(ds.entries) == 10
    kept_scores = {e.clip_score for e in ds.entries}
    assert min(kept_scores) == pytest.approx(0.2)  # two lowest dropped


def test_build_dataset_threshold():
    sources = [_entry("cat", score=s, iid=f"cat-{s}") for s in (0.1, 0.5, 0.9)]
    ds = build_dataset(sources, {"gold": {"cat"}}, clip_filter_threshold=0.5)
    assert sorted(e.clip_score for e in ds.entries) == [0.5, 0.9]


def test_build_dataset_scanned_and_unscored_pass_through():
    sources = [
        _entry("cat", origin="scanned", iid="scan-1"),
        _entry("cat", score=None, iid="unscored"),
        _entry("cat", score=0.01, iid="low"),
    ]
    ds = build_dataset(sources, {"gold": {"cat"}}, clip_filter_threshold=0.5)
    assert {e.instance_id for e in ds.entries} == {"scan-1", "unscored"}


def test_build_dataset_drops_classes_valid_for_nothing():
    sources = [_entry("cat", iid="c"), _entry("lamp", iid="l")]
    ds = build_dataset(sources, {"gold": {"cat"}})
    assert [e.instance_id for e in ds.entries] == ["c"]


def test_build_dataset_preserves_source_order():
    sources = [_entry("cat", score=0.1 * i, iid=f"c{i}") for i in range(5)]
    ds = build_dataset(sources, {"gold": {"cat"}}, top_k_per_class=3)
    ids = [e.instance_id for e in ds.entries]
    assert ids == sorted(ids, key=lambda s: int(s[1:]))


def test_build_dataset_empty_is_an_error():
    with pytest.raises(DatasetError):
        build_dataset([_entry("lamp")], {"gold": {"cat"}})


def test_entry_requires_latent_or_asset():
    with pytest.raises(InputError):
        DatasetEntry(class_label="cat", origin="generated", instance_id="x")
    with pytest.raises(InputError):
        DatasetEntry(class_label="cat", origin="dreamed", instance_id="x",
                     latent=_latent())


def test_valid_pairs_filters_by_instruction():
    gold = EditInstruction(text="gold", kind=EditKind.GLOBAL)
    hat = EditInstruction(text="hat", kind=EditKind.LOCAL,
                          target_description="a cat wearing a hat",
                          attention_token="hat")
    ds = TrainingDataset(
        entries=[_entry("cat", iid="c"), _entry("lamp", iid="l")],
        instruction_validity={"gold": {"cat", "lamp"}, "hat": {"cat"}},
    )
    pairs = ds.valid_pairs([gold, hat])
    assert [(e.instance_id, i.text) for e, i in pairs] == [
        ("c", "gold"), ("l", "gold"), ("c", "hat")]


def test_full_scale_manifest_inventory():
    m = load_full_scale_manifest()
    assert len(m["classes"]["generated"]) == 20
    assert len(m["classes"]["scanned"]) == 21
    assert m["max_instances_per_class"] == 10
    assert len(m["instructions"]) == 5
    texts = [i["text"] for i in m["instructions"]]
    assert "Make it look like made of gold" in texts
    assert "Add a Santa hat to it" in texts
    kinds = {i["text"]: i["kind"] for i in m["instructions"]}
    assert kinds["Make it wear a blue sweater"] == "local"
    assert kinds["Make its color look like rainbow"] == "global"
    locals_ = [i for i in m["instructions"] if i["kind"] == "local"]
    for ins in locals_:
        assert ins["attention_token"] in ins["text"].lower()
        assert "{class}" in ins["target_template"]


# -- config ------------------------------------------------------------------

def test_train_config_defaults():
    cfg = TrainConfig()
    assert cfg.epochs == 150
    assert cfg.batch_size == 64
    assert cfg.learning_rate == 1e-4
    assert cfg.betas == (0.9, 0.999)
    assert cfg.weight_decay == 1e-2
    assert cfg.anneal_start_epoch == 100
    assert cfg.anneal_every == 10
    assert (cfg.t_min_frac, cfg.t_max_frac) == (0.02, 0.98)
    assert cfg.divergence_patience == 3


def test_train_config_to_dict_is_json_ready():
    d = TrainConfig().to_dict()
    json.dumps(d)  # no tuples or exotic types left
    assert d["betas"] == [0.9, 0.999]


def test_prompt_mode_validated():
    with pytest.raises(InputError):
        TrainConfig(prompt_mode="ensemble")


def test_optimizer_and_lr_schedule_validated():
    assert TrainConfig(optimizer="sgd").optimizer == "sgd"
    assert TrainConfig(lr_schedule="cosine").lr_schedule == "cosine"
    with pytest.raises(InputError, match="optimizer"):
        TrainConfig(optimizer="lbfgs")
    with pytest.raises(InputError, match="lr_schedule"):
        TrainConfig(lr_schedule="step")


def test_weight_decay_spares_biases_and_embeddings(task):
    from latedit.editor import ToyBaseDenoiser, init_from_pretrained
    from latedit.trainer import _param_groups

    base = ToyBaseDenoiser.identity(task.codec.latent_shape, hidden=8)
    editor = init_from_pretrained(base, [task.instruction], task.schedule)
    groups = _param_groups(editor, 0.5)
    assert [g["weight_decay"] for g in groups] == [0.5, 0.0]
    by_id = {id(p): name for name, p in editor.named_parameters()}
    decayed = {by_id[id(p)] for p in groups[0]["params"]}
    exempt = {by_id[id(p)] for p in groups[1]["params"]}
    assert decayed | exempt == set(by_id.values())
    assert all(n.startswith("w_") for n in decayed)
    assert all(n.startswith(("b_", "emb_")) for n in exempt)


# -- timestep sampling -------------------------------------------------------

def test_sample_t_respects_bounds():
    from latedit.core import NoiseSchedule

    sched = NoiseSchedule.cosine(steps=1000)
    gen = make_generator(0)
    draws = [_sample_t(gen, sched, 0.02, 0.98) for _ in range(2000)]
    assert min(draws) >= 20
    assert max(draws) <= 980
    # both endpoints are reachable
    assert 20 in draws
    assert 980 in draws


def test_sample_t_collapsed_range():
    from latedit.core import NoiseSchedule

    sched = NoiseSchedule.cosine(steps=100)
    gen = make_generator(1)
    draws = {_sample_t(gen, sched, 0.5, 0.5) for _ in range(10)}
    assert draws == {50}


# -- metrics sink ------------------------------------------------------------

def test_metrics_log_schema(tmp_path):
    path = tmp_path / "metrics.jsonl"
    log = MetricsLog(path)
    log.log("sds_ti2i", 0.5, t=200, epoch=1, step=7)
    log.log("reg_global", 0.25, t=300, epoch=1, step=8)
    log.close()
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 2
    for line in lines:
        rec = json.loads(line)
        assert set(rec) == {"term", "value", "t", "epoch", "step"}
    assert json.loads(lines[0])["term"] == "sds_ti2i"
    assert log.records[1]["value"] == 0.25


# -- the training loop on the synthetic task ---------------------------------

def _toy_setup(task, n_entries=3, hidden=24, seed=0):
    gen = make_generator(seed)
    entries = [
        DatasetEntry(class_label="blob", origin="generated",
                     instance_id=f"blob-{i}", latent=task.sample_source_latent(gen))
        for i in range(n_entries)
    ]
    data = TrainingDataset(entries=entries, instruction_validity={})
    base = ToyBaseDenoiser.identity(task.codec.latent_shape, hidden=hidden)
    editor = init_from_pretrained(base, [task.instruction], task.schedule)
    priors = PriorSet(ti2i_global=task.prior)
    return data, editor, priors


def _smoke_config(**overrides):
    defaults = dict(
        epochs=2,
        batch_size=2,
        learning_rate=1e-3,
        weight_decay=0.0,
        camera=CameraConfig(render_resolution=12),
        guidance_global=GuidanceConfig(gamma_image=1.0, gamma_text=1.0),
        loss_weights=LossWeights(lambda_reg_global=0.1),
        seed=0,
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


def test_train_smoke_writes_checkpoints_and_metrics(task, tmp_path):
    data, editor, priors = _toy_setup(task)
    cfg = _smoke_config()
    result = train(cfg, data, editor, task.codec, priors, out_dir=tmp_path)
    assert result.epochs_run == 2
    assert result.steps_run == 4  # 3 pairs / batch 2 -> 2 steps per epoch
    final = tmp_path / "editor_final.ckpt"
    assert final in result.checkpoints
    assert final.exists()
    records = [json.loads(l) for l in result.metrics_path.read_text().splitlines()]
    assert {r["term"] for r in records} == {"sds_ti2i", "reg_global"}
    assert all(r["epoch"] in (0, 1) for r in records)


def test_train_is_deterministic(task, tmp_path):
    outs = []
    for run in ("a", "b"):
        data, editor, priors = _toy_setup(task)
        cfg = _smoke_config()
        train(cfg, data, editor, task.codec, priors, out_dir=tmp_path / run)
        outs.append(load_checkpoint(tmp_path / run / "editor_final.ckpt"))
    sd_a, sd_b = outs[0].state_dict(), outs[1].state_dict()
    assert sd_a.keys() == sd_b.keys()
    for name in sd_a:
        assert torch.equal(sd_a[name], sd_b[name]), name


def test_train_max_steps_early_stop(task, tmp_path):
    data, editor, priors = _toy_setup(task)
    cfg = _smoke_config(epochs=50, max_steps=3)
    result = train(cfg, data, editor, task.codec, priors, out_dir=tmp_path)
    assert result.steps_run == 3


def test_train_sgd_cosine_smoke(task, tmp_path):
    data, editor, priors = _toy_setup(task)
    cfg = _smoke_config(optimizer="sgd", lr_schedule="cosine", weight_decay=1.0)
    result = train(cfg, data, editor, task.codec, priors, out_dir=tmp_path)
    assert result.steps_run == 4
    assert (tmp_path / "editor_final.ckpt").exists()


def test_train_periodic_checkpoints(task, tmp_path):
    data, editor, priors = _toy_setup(task)
    cfg = _smoke_config(epochs=2, checkpoint_every=1)
    result = train(cfg, data, editor, task.codec, priors, out_dir=tmp_path)
    names = {p.name for p in result.checkpoints}
    assert {"editor_epoch0001.ckpt", "editor_epoch0002.ckpt", "editor_final.ckpt"} <= names


def test_train_encodes_assets_once(task, tmp_path):
    gen = make_generator(3)
    src = task.sample_source_latent(gen)
    asset = task.codec.decode_to_asset(src, class_label="blob", instance_id="b0")
    entries = [DatasetEntry(class_label="blob", origin="scanned",
                            instance_id="b0", asset=asset)]
    data = TrainingDataset(entries=entries, instruction_validity={})
    base = ToyBaseDenoiser.identity(task.codec.latent_shape, hidden=16)
    editor = init_from_pretrained(base, [task.instruction], task.schedule)

    encode_calls = []
    original_encode = task.codec.encode

    class CountingCodec:
        def __getattr__(self, name):
            return getattr(task.codec, name)

        def encode(self, a):
            encode_calls.append(a)
            return original_encode(a)

    cfg = _smoke_config(epochs=2, batch_size=1)
    train(cfg, data, editor, CountingCodec(), PriorSet(ti2i_global=task.prior),
          out_dir=tmp_path)
    assert len(encode_calls) == 1


def test_train_single_prompt_requires_single_instruction(task, tmp_path):
    data, editor, priors = _toy_setup(task)
    other = EditInstruction(text="another edit", kind=EditKind.GLOBAL)
    base = ToyBaseDenoiser.identity(task.codec.latent_shape, hidden=16)
    editor = init_from_pretrained(base, [task.instruction, other], task.schedule)
    with pytest.raises(InputError):
        train(_smoke_config(), data, editor, task.codec, priors, out_dir=tmp_path)


def test_train_requires_valid_pairs(task, tmp_path):
    entries = [DatasetEntry(class_label="blob", origin="generated",
                            instance_id="b", latent=_latent(16))]
    data = TrainingDataset(entries=entries,
                           instruction_validity={task.instruction.text: set()})
    base = ToyBaseDenoiser.identity(task.codec.latent_shape, hidden=16)
    editor = init_from_pretrained(base, [task.instruction], task.schedule)
    with pytest.raises(DatasetError):
        train(_smoke_config(), data, editor, task.codec,
              PriorSet(ti2i_global=task.prior), out_dir=tmp_path)


class ExplodingPrior(Prior):
    """Produces non-finite predictions; the guard must trip after the
    configured number of consecutive failed steps."""

    supports_image_condition = True

    def _predict(self, x_t, image_cond, text_cond, t):
        return torch.full_like(x_t, float("nan"))


def test_divergence_guard_trips_after_patience(task, tmp_path):
    data, editor, priors = _toy_setup(task)
    cfg = _smoke_config(epochs=1, batch_size=1, divergence_patience=3)
    with pytest.raises(DivergenceError):
        train(cfg, data, editor, task.codec,
              PriorSet(ti2i_global=ExplodingPrior()), out_dir=tmp_path)
    snapshots = list(tmp_path.glob("editor_divergence_step*.ckpt"))
    assert len(snapshots) == 1


def test_divergence_guard_resets_on_good_step(task, tmp_path):
    # patience above the number of bad steps available: training completes
    data, editor, priors = _toy_setup(task)
    cfg = _smoke_config(epochs=1, batch_size=1, divergence_patience=10)
    result = train(cfg, data, editor, task.codec,
                   PriorSet(ti2i_global=ExplodingPrior()), out_dir=tmp_path)
    assert result.steps_run == 0
    assert (tmp_path / "editor_final.ckpt").exists()


# -- test-time optimization --------------------------------------------------

def test_tto_zero_steps_returns_source(task):
    gen = make_generator(5)
    src = task.sample_source_latent(gen)
    out = run_tto(src, task.instruction, task.codec,
                             PriorSet(ti2i_global=task.prior), steps=0,
                             schedule=task.schedule)
    assert torch.equal(out.data, src.data)
    assert out.codec_id == src.codec_id


def test_tto_requires_schedule(task):
    gen = make_generator(6)
    src = task.sample_source_latent(gen)
    with pytest.raises(InputError):
        run_tto(src, task.instruction, task.codec,
                           PriorSet(ti2i_global=task.prior), steps=1)


def test_tto_moves_toward_target():
    # high-t sampling keeps the pull's signal-to-noise usable; cosine decay
    # lets the iterate settle below the constant-lr noise floor
    small = make_color_shift_task(grid_size=2)
    src = small.sample_source_latent(make_generator(7))
    cfg = TrainConfig(epochs=1, batch_size=1, t_min_frac=0.7, t_max_frac=0.98,
                      camera=CameraConfig(elevation_deg=60, render_resolution=12),
                      guidance_global=GuidanceConfig(gamma_image=1.0, gamma_text=1.0),
                      seed=0)
    out = run_tto(src, small.instruction, small.codec,
                             PriorSet(ti2i_global=small.prior), steps=400,
                             schedule=small.schedule, learning_rate=3e-2,
                             lr_schedule="cosine", cfg=cfg)
    assert small.edit_error(src, out) < 0.05


def test_tto_rejects_unknown_lr_schedule(task):
    src = task.sample_source_latent(make_generator(7))
    with pytest.raises(InputError, match="lr_schedule"):
        run_tto(src, task.instruction, task.codec,
                           PriorSet(ti2i_global=task.prior), steps=1,
                           schedule=task.schedule, lr_schedule="linear")


def test_tto_divergence_error(task):
    gen = make_generator(8)
    src = task.sample_source_latent(gen)
    with pytest.raises((DivergenceError, InputError)):
        run_tto(src, task.instruction, task.codec,
                           PriorSet(ti2i_global=ExplodingPrior()), steps=2,
                           schedule=task.schedule, cfg=_smoke_config(epochs=1))
