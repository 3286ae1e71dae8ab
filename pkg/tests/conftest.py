import pytest
import torch

from latedit import toytask
from latedit.core import CameraConfig, make_generator


@pytest.fixture(scope="session")
def task():
    """Shared colour-shift task: 4x4 grid, 12 march samples."""
    return toytask.make_color_shift_task()


@pytest.fixture
def small_camera():
    return CameraConfig(render_resolution=24)


@pytest.fixture
def gen():
    return make_generator(0)


@pytest.fixture
def source_latent(task):
    return task.sample_source_latent(make_generator(7))


def assert_bitwise_equal(a: torch.Tensor, b: torch.Tensor) -> None:
    assert a.shape == b.shape
    assert float((a.detach() - b.detach()).abs().max()) == 0.0
