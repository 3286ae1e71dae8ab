"""Asset codecs: encoder, decoder and differentiable renderer.

The toy codec used throughout the test-suite decodes a small grid latent into
a field of isotropic Gaussian blobs and renders it orthographically with
alpha compositing, so colours, depths and gradients all have closed forms.
A slot for a pretrained-transformer codec is registered under ``"shap-e"``;
it only describes the weights it would need, since no weights ship with the
package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .core import CameraConfig, Latent, rand_uniform
from .errors import BackendUnavailableError, InputError, ShapeMismatchError

# ---------------------------------------------------------------------------
# value types


@dataclass
class AssetSource:
    """A source 3D object: an RGB point cloud and/or a multi-view image set."""

    points: torch.Tensor | None = None   # (N, 3) xyz
    colors: torch.Tensor | None = None   # (N, 3) rgb
    views: list | None = None
    class_label: str = ""
    instance_id: str = ""

    def __post_init__(self) -> None:
        if self.points is not None:
            self.points = torch.as_tensor(self.points, dtype=torch.float64)
            if self.points.dim() != 2 or self.points.shape[1] != 3:
                raise InputError("points must have shape (N, 3)")
            if self.points.shape[0] == 0:
                raise InputError("point cloud is empty")
            if self.colors is not None:
                self.colors = torch.as_tensor(self.colors, dtype=torch.float64)
                if self.colors.shape != self.points.shape:
                    raise InputError("colors must match points in shape")
        elif self.views is None:
            raise InputError("an asset needs a point cloud or a view set")


@dataclass(frozen=True)
class Viewpoint:
    azimuth_deg: float
    elevation_deg: float
    radius: float


@dataclass
class RenderedView:
    rgb: torch.Tensor    # (H, W, 3) in [0, 1]
    depth: torch.Tensor  # (H, W), world units; background = far sentinel
    viewpoint: Viewpoint


@dataclass
class ToyField:
    """Decoded toy neural field: one Gaussian blob per grid cell."""

    densities: torch.Tensor  # (K*K,) >= 0
    colors: torch.Tensor     # (K*K, 3) in [0, 1]
    centers: torch.Tensor    # (K*K, 3)
    std: float
    decoder_id: str


# ---------------------------------------------------------------------------
# toy codec


class ToyCodec:
    """Grid-of-blobs codec.

    The latent is a ``(K*K, 4)`` matrix: column 0 is a per-cell density and
    columns 1:4 are an RGB colour.  ``decode`` rectifies densities and clamps
    colours; ``decode_to_asset`` is the exact-inverse carrier used by
    ``encode`` round-trips (it keeps raw values, storing density in the point
    height so ``encode . decode_to_asset`` is the identity bit for bit).
    """

    def __init__(
        self,
        grid_size: int = 8,
        blob_std: float | None = None,
        march_samples: int = 24,
        march_half: float = 2.0,
        frustum_half_width: float = 1.4,
        background: tuple[float, float, float] = (0.0, 0.0, 0.0),
        height_scale: float = 0.25,
        ray_chunk: int = 4096,
    ) -> None:
        if grid_size < 1:
            raise InputError("grid size must be >= 1")
        self.grid_size = grid_size
        self.blob_std = float(blob_std) if blob_std is not None else 0.9 / grid_size
        self.march_samples = march_samples
        self.march_half = float(march_half)
        self.frustum_half_width = float(frustum_half_width)
        self.background = torch.tensor(background, dtype=torch.float64)
        self.height_scale = float(height_scale)
        self.ray_chunk = ray_chunk
        self.codec_id = f"toy-grid-{grid_size}"
        # cell centres on the z = 0 plane, row-major over (row i, col j)
        idx = (torch.arange(grid_size, dtype=torch.float64) + 0.5) * (2.0 / grid_size) - 1.0
        yy, xx = torch.meshgrid(idx, idx, indexing="ij")
        self._centers = torch.stack(
            [xx.reshape(-1), yy.reshape(-1), torch.zeros(grid_size * grid_size, dtype=torch.float64)],
            dim=1,
        )

    # -- shapes -------------------------------------------------------------

    @property
    def latent_shape(self) -> tuple[int, int]:
        return (self.grid_size * self.grid_size, 4)

    def _check_latent(self, latent: Latent | torch.Tensor) -> torch.Tensor:
        data = latent.data if isinstance(latent, Latent) else torch.as_tensor(latent)
        if tuple(data.shape) != self.latent_shape:
            raise ShapeMismatchError(
                f"latent shape {tuple(data.shape)} does not match codec shape {self.latent_shape}"
            )
        return data.to(torch.float64)

    def far_plane(self, viewpoint: Viewpoint) -> float:
        """Depth value assigned to fully transparent pixels."""
        return viewpoint.radius + self.march_half

    # -- codec interface ----------------------------------------------------

    def decode(self, latent: Latent | torch.Tensor) -> ToyField:
        data = self._check_latent(latent)
        return ToyField(
            densities=torch.relu(data[:, 0]),
            colors=torch.clamp(data[:, 1:4], 0.0, 1.0),
            centers=self._centers,
            std=self.blob_std,
            decoder_id=self.codec_id,
        )

    def decode_to_asset(self, latent: Latent | torch.Tensor,
                        class_label: str = "", instance_id: str = "") -> AssetSource:
        """One point per cell at ``(cx, cy, height_scale * density)`` with the
        raw (unclamped) cell colour; the exact inverse of :meth:`encode`."""
        data = self._check_latent(latent)
        pts = self._centers.clone()
        pts[:, 2] = data[:, 0] * self.height_scale
        return AssetSource(points=pts, colors=data[:, 1:4].clone(),
                           class_label=class_label, instance_id=instance_id)

    def encode(self, asset: AssetSource) -> Latent:
        if asset.points is None:
            raise InputError("the toy encoder needs a point cloud")
        K = self.grid_size
        counts = torch.zeros(K * K, dtype=torch.float64)
        acc = torch.zeros(K * K, 4, dtype=torch.float64)
        colors = asset.colors
        if colors is None:
            colors = torch.zeros_like(asset.points)
        for p, c in zip(asset.points, colors):
            j = min(max(int(math.floor((float(p[0]) + 1.0) * 0.5 * K)), 0), K - 1)
            i = min(max(int(math.floor((float(p[1]) + 1.0) * 0.5 * K)), 0), K - 1)
            cell = i * K + j
            counts[cell] += 1.0
            acc[cell, 0] += float(p[2]) / self.height_scale
            acc[cell, 1:4] += c
        occupied = counts > 0
        acc[occupied] /= counts[occupied].unsqueeze(1)
        return Latent(acc, self.codec_id)

    # -- rendering ----------------------------------------------------------

    def render(self, fd: ToyField, viewpoint: Viewpoint, resolution: int) -> RenderedView:
        if resolution <= 0:
            raise InputError("resolution must be positive")
        az = math.radians(viewpoint.azimuth_deg)
        el = math.radians(viewpoint.elevation_deg)
        cam = viewpoint.radius * torch.tensor(
            [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)],
            dtype=torch.float64,
        )
        fwd = -cam / torch.linalg.norm(cam)
        z_up = torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64)
        right = torch.linalg.cross(fwd, z_up)
        nrm = torch.linalg.norm(right)
        if float(nrm) < 1e-9:  # looking straight down: pick a stable right axis
            right = torch.tensor([0.0, 1.0, 0.0], dtype=torch.float64)
        else:
            right = right / nrm
        up = torch.linalg.cross(right, fwd)

        res = int(resolution)
        half_w = self.frustum_half_width
        px = ((torch.arange(res, dtype=torch.float64) + 0.5) / res * 2.0 - 1.0) * half_w
        py = (1.0 - (torch.arange(res, dtype=torch.float64) + 0.5) / res * 2.0) * half_w
        origins = (
            cam
            + py[:, None, None] * up
            + px[None, :, None] * right
        ).reshape(-1, 3)  # (res*res, 3), row-major

        S = self.march_samples
        ts = torch.linspace(
            viewpoint.radius - self.march_half, viewpoint.radius + self.march_half, S,
            dtype=torch.float64,
        )
        delta = (2.0 * self.march_half) / (S - 1) if S > 1 else 2.0 * self.march_half
        far = self.far_plane(viewpoint)

        rgb_rows = []
        depth_rows = []
        for start in range(0, origins.shape[0], self.ray_chunk):
            o = origins[start:start + self.ray_chunk]  # (R, 3)
            pts = o[:, None, :] + ts[None, :, None] * fwd  # (R, S, 3)
            d2 = ((pts[:, :, None, :] - fd.centers[None, None, :, :]) ** 2).sum(-1)
            w = torch.exp(-d2 / (2.0 * fd.std * fd.std))  # (R, S, K2)
            rho = w @ fd.densities  # (R, S)
            emis = (w * fd.densities).matmul(fd.colors)  # (R, S, 3)
            chat = emis / torch.clamp(rho, min=1e-12)[..., None]
            alpha = 1.0 - torch.exp(-rho * delta)
            trans_inc = torch.cumprod(1.0 - alpha, dim=1)
            trans = torch.cat(
                [torch.ones_like(trans_inc[:, :1]), trans_inc[:, :-1]], dim=1
            )  # transmittance before each sample
            weight = trans * alpha
            t_fin = trans_inc[:, -1]
            rgb = (weight[..., None] * chat).sum(1) + t_fin[:, None] * self.background
            depth = (weight * ts).sum(1) + t_fin * far
            rgb_rows.append(rgb)
            depth_rows.append(depth)

        rgb = torch.cat(rgb_rows, 0).reshape(res, res, 3).clamp(0.0, 1.0)
        depth = torch.cat(depth_rows, 0).reshape(res, res)
        return RenderedView(rgb=rgb, depth=depth, viewpoint=viewpoint)

    # -- convenience --------------------------------------------------------

    def random_latent(self, generator: torch.Generator,
                      density_range: tuple[float, float] = (0.5, 2.5)) -> Latent:
        n = self.grid_size * self.grid_size
        lo, hi = density_range
        dens = lo + (hi - lo) * torch.rand(n, generator=generator, dtype=torch.float64)
        cols = torch.rand(n, 3, generator=generator, dtype=torch.float64)
        return Latent(torch.cat([dens[:, None], cols], dim=1), self.codec_id)


# ---------------------------------------------------------------------------
# viewpoint sampling


def sample_viewpoint(generator: torch.Generator, cam: CameraConfig) -> Viewpoint:
    lo, hi = cam.azimuth_range_deg
    return Viewpoint(
        azimuth_deg=rand_uniform(lo, hi, generator),
        elevation_deg=cam.elevation_deg,
        radius=cam.radius,
    )


def turntable_viewpoints(cam: CameraConfig, frames: int) -> list[Viewpoint]:
    """``frames`` equally spaced azimuths over the configured range."""
    lo, hi = cam.azimuth_range_deg
    span = hi - lo if hi > lo else 360.0
    return [
        Viewpoint(azimuth_deg=lo + span * k / frames, elevation_deg=cam.elevation_deg,
                  radius=cam.radius)
        for k in range(frames)
    ]


# ---------------------------------------------------------------------------
# geometry file ingestion (ascii PLY and OBJ point clouds)


def load_point_cloud(path: str | Path, class_label: str = "",
                     instance_id: str = "") -> AssetSource:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ply":
        pts, cols = _parse_ply(path)
    elif suffix == ".obj":
        pts, cols = _parse_obj(path)
    else:
        raise InputError(f"unsupported geometry format {suffix!r} (want .ply or .obj)")
    if not pts:
        raise InputError(f"{path} contains no vertices")
    return AssetSource(
        points=torch.tensor(pts, dtype=torch.float64),
        colors=torch.tensor(cols, dtype=torch.float64) if cols else None,
        class_label=class_label or path.stem,
        instance_id=instance_id or path.stem,
    )


def _parse_ply(path: Path):
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise InputError(f"{path} is not a PLY file")
    n_vertices = 0
    props: list[str] = []
    body_at = None
    in_vertex_element = False
    for i, line in enumerate(lines[1:], start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise InputError("only ascii PLY is supported")
        if tok[0] == "element":
            in_vertex_element = tok[1] == "vertex"
            if in_vertex_element:
                n_vertices = int(tok[2])
        elif tok[0] == "property" and in_vertex_element:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            body_at = i + 1
            break
    if body_at is None:
        raise InputError(f"{path} has no end_header")
    idx = {name: k for k, name in enumerate(props)}
    for axis in ("x", "y", "z"):
        if axis not in idx:
            raise InputError(f"{path} vertices lack a {axis!r} property")
    has_color = all(c in idx for c in ("red", "green", "blue"))
    pts, cols = [], []
    for line in lines[body_at:body_at + n_vertices]:
        vals = line.split()
        pts.append([float(vals[idx["x"]]), float(vals[idx["y"]]), float(vals[idx["z"]])])
        if has_color:
            cols.append([float(vals[idx[c]]) / 255.0 for c in ("red", "green", "blue")])
    return pts, cols


def _parse_obj(path: Path):
    pts, cols = [], []
    for line in path.read_text().splitlines():
        tok = line.split()
        if not tok or tok[0] != "v":
            continue
        pts.append([float(tok[1]), float(tok[2]), float(tok[3])])
        if len(tok) >= 7:  # non-standard but common vertex-colour extension
            cols.append([float(tok[4]), float(tok[5]), float(tok[6])])
    if cols and len(cols) != len(pts):
        cols = []
    return pts, cols


# ---------------------------------------------------------------------------
# pretrained-backend adapter slot and registry


class ShapECodec:
    """Adapter slot for the pretrained transmitter/decoder pair that encodes
    16384-point RGB clouds plus 20 views at 256 x 256 into 1024 x 1024 latents.
    Instantiating it without the released weights fails with a description of
    the expected layout."""

    latent_shape = (1024, 1024)

    def __init__(self, weights_root: str | None = None) -> None:
        import os

        root = weights_root or os.environ.get("LATEDIT_WEIGHTS", "")
        raise BackendUnavailableError(
            "pretrained codec weights not found; expected "
            f"{root or '$LATEDIT_WEIGHTS'}/shap-e/ with encoder.pt, decoder.pt and "
            "schedule.json (alpha/sigma tables read via NoiseSchedule.from_tables)"
        )


CODEC_FACTORIES = {
    "toy": ToyCodec,
    "shap-e": ShapECodec,
}


def get_codec(name: str, **kwargs):
    if name not in CODEC_FACTORIES:
        raise InputError(f"unknown codec {name!r}; available: {sorted(CODEC_FACTORIES)}")
    return CODEC_FACTORIES[name](**kwargs)
