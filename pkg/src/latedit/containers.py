"""Binary tensor containers and image export.

A container is a zip archive holding one ``.npy`` file per named array plus a
``manifest.json`` describing shapes/dtypes and any caller-supplied metadata.
Latents additionally get a JSON sidecar next to the container so their codec
id and shape can be inspected without opening the archive.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path
from typing import Mapping

import numpy as np
import torch
from PIL import Image

from .core import Latent
from .errors import InputError

MANIFEST_NAME = "manifest.json"


def save_arrays(path: str | Path, arrays: Mapping[str, np.ndarray],
                extra: dict | None = None) -> None:
    manifest = {
        "arrays": {
            name: {"shape": list(a.shape), "dtype": str(a.dtype)}
            for name, a in arrays.items()
        }
    }
    if extra:
        manifest.update(extra)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr(MANIFEST_NAME, json.dumps(manifest, indent=2, sort_keys=True))
        for name, a in arrays.items():
            buf = io.BytesIO()
            np.save(buf, np.ascontiguousarray(a))
            zf.writestr(f"{name}.npy", buf.getvalue())


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        zf_open = zipfile.ZipFile(path, "r")
    except FileNotFoundError as exc:
        raise InputError(f"no such container: {path}") from exc
    except (IsADirectoryError, zipfile.BadZipFile) as exc:
        raise InputError(f"not a readable container: {path}") from exc
    with zf_open as zf:
        try:
            manifest = json.loads(zf.read(MANIFEST_NAME))
        except KeyError as exc:
            raise InputError(f"container {path} has no manifest") from exc
        arrays = {}
        for name, meta in manifest.get("arrays", {}).items():
            a = np.load(io.BytesIO(zf.read(f"{name}.npy")))
            if list(a.shape) != meta["shape"] or str(a.dtype) != meta["dtype"]:
                raise InputError(f"array {name!r} does not match its manifest entry")
            arrays[name] = a
    return arrays, manifest


def _sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".json")


def save_latent(path: str | Path, latent: Latent) -> None:
    data = latent.data.detach().cpu().numpy()
    save_arrays(path, {"latent": data}, extra={"codec_id": latent.codec_id})
    sidecar = {
        "codec_id": latent.codec_id,
        "shape": list(data.shape),
        "dtype": str(data.dtype),
    }
    _sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_latent(path: str | Path) -> Latent:
    arrays, manifest = load_arrays(path)
    if "latent" not in arrays:
        raise InputError(f"{path} is not a latent container")
    codec_id = manifest.get("codec_id", "unknown")
    sidecar = _sidecar_path(path)
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        if meta.get("shape") != list(arrays["latent"].shape):
            raise InputError(f"sidecar of {path} disagrees with the stored array")
        codec_id = meta.get("codec_id", codec_id)
    return Latent(torch.from_numpy(arrays["latent"].copy()), codec_id)


def _to_numpy(img) -> np.ndarray:
    if isinstance(img, torch.Tensor):
        img = img.detach().cpu().numpy()
    return np.asarray(img)


def save_rgb_png(path: str | Path, rgb) -> None:
    """Write an H x W x 3 image with values in [0, 1] as 8-bit RGB."""
    a = _to_numpy(rgb)
    if a.ndim != 3 or a.shape[2] != 3:
        raise InputError(f"expected HxWx3 rgb image, got shape {a.shape}")
    a8 = np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(a8, mode="RGB").save(path)


def rgb_png_bytes(rgb) -> bytes:
    a = _to_numpy(rgb)
    if a.ndim != 3 or a.shape[2] != 3:
        raise InputError(f"expected HxWx3 rgb image, got shape {a.shape}")
    a8 = np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(a8, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_depth_png(path: str | Path, depth, far: float) -> None:
    """Write a depth map as 16-bit grayscale, scaled so ``far`` maps to 65535."""
    a = _to_numpy(depth)
    if a.ndim != 2:
        raise InputError(f"expected HxW depth map, got shape {a.shape}")
    if far <= 0:
        raise InputError("far plane must be positive")
    a16 = np.clip(np.rint(a / far * 65535.0), 0, 65535).astype(np.uint16)
    Image.fromarray(a16).save(path)
