"""latedit: feed-forward text-instructed 3D edits in the latent space of a
3D asset auto-encoder, distilled from 2D image-editing diffusion priors."""

from .codec import AssetSource, RenderedView, ToyCodec, Viewpoint, get_codec
from .core import (
    CameraConfig,
    EditInstruction,
    EditKind,
    GuidanceConfig,
    Latent,
    LossWeights,
    NoiseSchedule,
    make_generator,
)
from .editor import (
    ToyBaseDenoiser,
    ToyLatentEditor,
    edit,
    init_from_pretrained,
    load_checkpoint,
    save_checkpoint,
)
from .errors import (
    BackendUnavailableError,
    CapabilityError,
    ConfigError,
    DatasetError,
    DivergenceError,
    InputError,
    InstructionError,
    LateditError,
    SessionNotFoundError,
    ShapeMismatchError,
    TokenNotFoundError,
)
from .evaluation import EvalPair, EvalReport, clip_dir, clip_sim, evaluate, structure_distance
from .latent_ops import (
    EditVector,
    apply_edit_vector,
    extract_edit_vector,
    scale_edit,
    sequential_edit,
)
from .prior import Prior, ToyGaussianPrior, cfg_t2i, cfg_ti2i, extract_edit_mask, get_prior
from .service import create_app
from .trainer import PriorSet, TrainConfig, test_time_optimize, train

__version__ = "0.1.0"

__all__ = [
    "AssetSource",
    "BackendUnavailableError",
    "CameraConfig",
    "CapabilityError",
    "ConfigError",
    "DatasetError",
    "DivergenceError",
    "EditInstruction",
    "EditKind",
    "EditVector",
    "EvalPair",
    "EvalReport",
    "GuidanceConfig",
    "InputError",
    "InstructionError",
    "Latent",
    "LateditError",
    "LossWeights",
    "NoiseSchedule",
    "Prior",
    "PriorSet",
    "RenderedView",
    "SessionNotFoundError",
    "ShapeMismatchError",
    "TokenNotFoundError",
    "ToyBaseDenoiser",
    "ToyCodec",
    "ToyGaussianPrior",
    "ToyLatentEditor",
    "TrainConfig",
    "Viewpoint",
    "apply_edit_vector",
    "cfg_t2i",
    "cfg_ti2i",
    "clip_dir",
    "clip_sim",
    "create_app",
    "edit",
    "evaluate",
    "extract_edit_mask",
    "extract_edit_vector",
    "get_codec",
    "get_prior",
    "init_from_pretrained",
    "load_checkpoint",
    "make_generator",
    "save_checkpoint",
    "scale_edit",
    "sequential_edit",
    "structure_distance",
    "test_time_optimize",
    "train",
]
