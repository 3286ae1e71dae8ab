"""Edit-residual arithmetic: strength scaling, chaining, reusable vectors."""

import pytest
import torch

from latedit.containers import save_arrays
from latedit.core import EditInstruction, EditKind, Latent, make_generator
from latedit.errors import InputError, ShapeMismatchError
from latedit.latent_ops import (
    EditVector,
    apply_edit_vector,
    extract_edit_vector,
    load_edit_vector,
    save_edit_vector,
    scale_edit,
    sequential_edit,
)

from conftest import assert_bitwise_equal


@pytest.fixture
def pair(task):
    gen = make_generator(3)
    src = task.sample_source_latent(gen)
    edit = task.target_latent(src)
    return src, edit


# -- strength scaling --------------------------------------------------------

def test_eta_zero_returns_source_bitwise(pair):
    src, edit = pair
    out = scale_edit(src, edit, 0.0)
    assert_bitwise_equal(out.data, src.data)
    assert out.data is not src.data  # a copy, safe to mutate downstream


def test_eta_one_returns_edit_bitwise(pair):
    src, edit = pair
    out = scale_edit(src, edit, 1.0)
    assert_bitwise_equal(out.data, edit.data)
    assert out.data is not edit.data


def test_eta_interpolates(pair):
    src, edit = pair
    out = scale_edit(src, edit, 0.5)
    assert_bitwise_equal(out.data, src.data + 0.5 * (edit.data - src.data))


def test_eta_extrapolates_past_the_edit(task, pair):
    src, edit = pair
    out = scale_edit(src, edit, 1.5)
    assert torch.allclose(out.data, src.data + 1.5 * task.shift_latent)


def test_scale_edit_preserves_codec_id(pair):
    src, edit = pair
    assert scale_edit(src, edit, 0.3).codec_id == src.codec_id


def test_scale_edit_shape_mismatch(pair):
    src, _ = pair
    other = Latent(torch.zeros(2, 4, dtype=torch.float64), src.codec_id)
    with pytest.raises(ShapeMismatchError):
        scale_edit(src, other, 0.5)


def test_scale_edit_codec_mismatch(pair):
    src, edit = pair
    with pytest.raises(InputError, match="codec"):
        scale_edit(src, Latent(edit.data, "other-codec"), 0.5)


# -- sequential application --------------------------------------------------

class IncrementEditor:
    """Stand-in editor: every instruction adds its length to the latent."""

    def edit_latent(self, latent, text, generator):
        return Latent(latent.data + float(len(text)), latent.codec_id)


def test_sequential_edit_chains_outputs(pair):
    src, _ = pair
    ins = [
        "ab",
        EditInstruction(text="cde", kind=EditKind.GLOBAL),
        "f",
    ]
    outs = sequential_edit(IncrementEditor(), src, ins, make_generator(0))
    assert len(outs) == 3
    assert_bitwise_equal(outs[0].data, src.data + 2.0)
    assert_bitwise_equal(outs[1].data, outs[0].data + 3.0)
    assert_bitwise_equal(outs[2].data, outs[1].data + 1.0)


def test_sequential_edit_rejects_empty(pair):
    src, _ = pair
    with pytest.raises(InputError):
        sequential_edit(IncrementEditor(), src, [], make_generator(0))


# -- reusable edit vectors ---------------------------------------------------

def test_extract_then_apply_reproduces_edit(pair):
    src, edit = pair
    vec = extract_edit_vector(src, edit, "shift the colors")
    out = apply_edit_vector(src, vec)
    assert_bitwise_equal(out.data, src.data + vec.delta)
    assert vec.instruction_text == "shift the colors"


def test_vector_transfers_to_another_latent(task, pair):
    src, edit = pair
    vec = extract_edit_vector(src, edit, task.instruction)
    fresh = task.sample_source_latent(make_generator(11))
    moved = apply_edit_vector(fresh, vec)
    assert task.edit_error(fresh, moved) < 1e-12


def test_apply_with_eta_scales_delta(pair):
    src, edit = pair
    vec = extract_edit_vector(src, edit, "x")
    out = apply_edit_vector(src, vec, eta=0.25)
    assert_bitwise_equal(out.data, src.data + 0.25 * vec.delta)


def test_extract_detaches_from_autograd(task):
    src = task.sample_source_latent(make_generator(5))
    live = Latent(src.data.clone().requires_grad_(True) * 2.0, src.codec_id)
    vec = extract_edit_vector(src, live, "x")
    assert vec.delta.grad_fn is None
    assert not vec.delta.requires_grad


def test_vector_rejects_non_finite():
    with pytest.raises(InputError):
        EditVector(delta=torch.tensor([float("nan")]), codec_id="c", instruction_text="x")


def test_apply_vector_shape_mismatch(pair):
    src, edit = pair
    vec = extract_edit_vector(src, edit, "x")
    small = Latent(torch.zeros(2, 4, dtype=torch.float64), src.codec_id)
    with pytest.raises(ShapeMismatchError):
        apply_edit_vector(small, vec)


def test_apply_vector_codec_mismatch(pair):
    src, edit = pair
    vec = extract_edit_vector(src, edit, "x")
    with pytest.raises(InputError, match="codec"):
        apply_edit_vector(Latent(src.data, "other-codec"), vec)


# -- serialization -----------------------------------------------------------

def test_vector_round_trips_through_disk(tmp_path, pair):
    src, edit = pair
    vec = extract_edit_vector(src, edit, "shift the colors")
    path = tmp_path / "vec.npz"
    save_edit_vector(vec, path)
    loaded = load_edit_vector(path)
    assert_bitwise_equal(loaded.delta, vec.delta)
    assert loaded.codec_id == vec.codec_id
    assert loaded.instruction_text == vec.instruction_text


def test_load_rejects_file_missing_fields(tmp_path):
    path = tmp_path / "broken.npz"
    save_arrays(path, {"delta": torch.zeros(2, 4).numpy()}, extra={"codec_id": "c"})
    with pytest.raises(InputError, match="missing"):
        load_edit_vector(path)
