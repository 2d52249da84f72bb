"""Binary and image I/O: PSF grids, tensors, weight files, images.

PSF grid format: magic "PSFG", version u32, rows u32, cols u32, size
u32, pitch f64 (m), then rows*cols*size^2 float32 samples, all
little-endian, kernels row-major. A JSON sidecar (<path>.meta.json)
carries wavelengths and field coordinates.

Tensor format: magic "FTNS", 4 x u32 dims, float32 data.
Weight format: magic "LSWB", u32 record count, then per record a
u16-length UTF-8 name, u8 ndim, u32 dims, float32 data.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .bridge import BridgeWeights, NormParams
from .errors import FileFormatError, ParameterError, TruncatedFileError
from .optics import PsfGrid, PsfKernel

PSF_MAGIC = b"PSFG"
PSF_VERSION = 1
TENSOR_MAGIC = b"FTNS"
WEIGHTS_MAGIC = b"LSWB"
MAX_GRID_SAMPLES = 1 << 30


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise TruncatedFileError(
            f"expected {n} bytes, got {len(data)}")
    return data


def write_psf_grid(path: str | Path, grid: PsfGrid) -> None:
    path = Path(path)
    size = grid.kernel_size
    with open(path, "wb") as f:
        f.write(PSF_MAGIC)
        f.write(struct.pack("<IIII", PSF_VERSION, grid.rows, grid.cols,
                            size))
        f.write(struct.pack("<d", grid.pixel_pitch))
        for k in grid.kernels:
            f.write(k.samples.astype("<f4").tobytes())
    meta = {
        "wavelengths": list(grid.wavelengths),
        "field_coords": [list(c) for c in grid.field_coords],
    }
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=1))


def read_psf_grid(path: str | Path) -> PsfGrid:
    path = Path(path)
    with open(path, "rb") as f:
        magic = _read_exact(f, 4)
        if magic != PSF_MAGIC:
            raise FileFormatError(
                f"bad magic {magic!r}, expected {PSF_MAGIC!r}")
        version, rows, cols, size = struct.unpack("<IIII", _read_exact(f, 16))
        if version != PSF_VERSION:
            raise FileFormatError(f"unsupported version {version}")
        if rows * cols * size * size > MAX_GRID_SAMPLES:
            raise FileFormatError("grid dimensions overflow sane limits")
        if rows < 1 or cols < 1 or size < 1 or size % 2 != 1:
            raise FileFormatError(
                f"invalid grid header rows={rows} cols={cols} size={size}")
        (pitch,) = struct.unpack("<d", _read_exact(f, 8))
        kernels = []
        for _ in range(rows * cols):
            raw = _read_exact(f, 4 * size * size)
            samples = np.frombuffer(raw, dtype="<f4").astype(
                np.float64).reshape(size, size)
            kernels.append(PsfKernel.from_samples(
                np.clip(samples, 0.0, None), pitch))
    meta_path = Path(str(path) + ".meta.json")
    wavelengths: tuple = ()
    coords: tuple = ()
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        wavelengths = tuple(float(l) for l in meta.get("wavelengths", []))
        coords = tuple(tuple(c) for c in meta.get("field_coords", []))
    return PsfGrid(rows=rows, cols=cols, kernels=tuple(kernels),
                   field_coords=coords, wavelengths=wavelengths)


def write_tensor(path: str | Path, tensor: np.ndarray) -> None:
    t = np.asarray(tensor, dtype=np.float64)
    if t.ndim != 4:
        raise ParameterError(f"tensor must be 4D, got shape {t.shape}")
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<IIII", *t.shape))
        f.write(t.astype("<f4").tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4)
        if magic != TENSOR_MAGIC:
            raise FileFormatError(
                f"bad magic {magic!r}, expected {TENSOR_MAGIC!r}")
        dims = struct.unpack("<IIII", _read_exact(f, 16))
        count = int(np.prod(dims))
        if count > MAX_GRID_SAMPLES:
            raise FileFormatError("tensor dimensions overflow sane limits")
        raw = _read_exact(f, 4 * count)
    return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(dims)


def _weight_records(w: BridgeWeights) -> dict[str, np.ndarray]:
    recs = {
        "small_conv": w.small_conv,
        "groups": np.array([float(w.groups)]),
        "dw_conv": w.dw_conv,
        "pw_conv": w.pw_conv,
        "lap_kernel": w.lap_kernel,
        "se_w1": w.se_w1, "se_b1": w.se_b1,
        "se_w2": w.se_w2, "se_b2": w.se_b2,
    }
    for name, norm in (("norm_s", w.norm_s), ("norm_l", w.norm_l),
                       ("norm_lap", w.norm_lap), ("norm_out", w.norm_out)):
        recs[f"{name}.gamma"] = norm.gamma
        recs[f"{name}.beta"] = norm.beta
        recs[f"{name}.mean"] = norm.mean
        recs[f"{name}.var"] = norm.var
    return recs


def write_bridge_weights(path: str | Path, w: BridgeWeights) -> None:
    recs = _weight_records(w)
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        f.write(struct.pack("<I", len(recs)))
        for name, arr in recs.items():
            arr = np.asarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f4").tobytes())


def read_bridge_weights(path: str | Path) -> BridgeWeights:
    recs: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        magic = _read_exact(f, 4)
        if magic != WEIGHTS_MAGIC:
            raise FileFormatError(
                f"bad magic {magic!r}, expected {WEIGHTS_MAGIC!r}")
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2))
            name = _read_exact(f, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1))
            dims = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
            n = int(np.prod(dims)) if ndim else 1
            raw = _read_exact(f, 4 * n)
            recs[name] = np.frombuffer(raw, dtype="<f4").astype(
                np.float64).reshape(dims)

    def norm(prefix: str) -> NormParams:
        return NormParams(gamma=recs[f"{prefix}.gamma"],
                          beta=recs[f"{prefix}.beta"],
                          mean=recs[f"{prefix}.mean"],
                          var=recs[f"{prefix}.var"])

    try:
        return BridgeWeights(
            small_conv=recs["small_conv"],
            groups=int(round(float(recs["groups"][0]))),
            norm_s=norm("norm_s"), dw_conv=recs["dw_conv"],
            pw_conv=recs["pw_conv"], norm_l=norm("norm_l"),
            norm_lap=norm("norm_lap"), norm_out=norm("norm_out"),
            se_w1=recs["se_w1"], se_b1=recs["se_b1"],
            se_w2=recs["se_w2"], se_b2=recs["se_b2"],
            lap_kernel=recs["lap_kernel"])
    except KeyError as exc:
        raise FileFormatError(f"missing weight record {exc}") from exc


def load_image(path: str | Path) -> np.ndarray:
    """Load an 8/16-bit grayscale image as float64 in [0, 1]."""
    with Image.open(path) as im:
        if im.mode in ("I", "I;16", "I;16B", "I;16L"):
            arr = np.asarray(im.convert("I"), dtype=np.float64)
            return arr / 65535.0
        arr = np.asarray(im.convert("L"), dtype=np.float64)
        return arr / 255.0


def save_image_u16(path: str | Path, img: np.ndarray) -> None:
    """Write a [0, 1] plane as a 16-bit grayscale PNG."""
    scaled = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    data = np.round(scaled * 65535.0).astype(np.uint16)
    Image.fromarray(data).save(path, format="PNG")


def save_raw_f32(path: str | Path, img: np.ndarray) -> None:
    """Write a plane as raw little-endian float32, row-major."""
    np.asarray(img, dtype=np.float64).astype("<f4").tofile(path)


def resize_bilinear(img: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear resize of a [0, 1] plane to width x height."""
    src = Image.fromarray(np.asarray(img, dtype=np.float32), mode="F")
    out = src.resize((width, height), resample=Image.BILINEAR)
    return np.asarray(out, dtype=np.float64)
