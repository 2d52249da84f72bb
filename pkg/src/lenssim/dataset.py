"""Paired clean/degraded dataset builds and fidelity metrics.

Manifests are JSON-lines files. Input records need a "clean" image path
and may carry a "labels" path with one "class cx cy w h" annotation per
line (normalized). Output records document every artifact written plus
the degradation parameters and per-sample seed.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .degrade import DegradationConfig, apply_noise, degrade_image
from .errors import DatasetBuildError, DimensionError, ParameterError
from .optics import PsfGrid

log = logging.getLogger(__name__)

DEFAULT_TARGET_SIZE = (640, 480)  # (width, height)


@dataclass(frozen=True)
class Annotation:
    """One detection label: class id plus normalized center-size box."""

    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.class_id < 0:
            raise ParameterError("class_id must be >= 0")
        for v in (self.cx, self.cy, self.w, self.h):
            if not 0.0 <= v <= 1.0:
                raise ParameterError(
                    f"normalized box fields must lie in [0, 1]: {self}")
        if self.w <= 0 or self.h <= 0:
            raise ParameterError("box width and height must be > 0")

    def to_line(self) -> str:
        return (f"{self.class_id} {self.cx:.6f} {self.cy:.6f} "
                f"{self.w:.6f} {self.h:.6f}")

    def to_absolute(self, width: int, height: int
                    ) -> tuple[float, float, float, float]:
        """(x_min, y_min, w, h) in pixels."""
        return ((self.cx - self.w / 2) * width,
                (self.cy - self.h / 2) * height,
                self.w * width, self.h * height)

    @staticmethod
    def from_absolute(class_id: int, x: float, y: float, w: float, h: float,
                      width: int, height: int) -> "Annotation":
        """Build from an absolute (x_min, y_min, w, h) pixel box,
        clamped to the frame."""
        x0 = np.clip(x, 0.0, width)
        y0 = np.clip(y, 0.0, height)
        x1 = np.clip(x + w, 0.0, width)
        y1 = np.clip(y + h, 0.0, height)
        return Annotation(class_id=class_id,
                          cx=(x0 + x1) / (2 * width),
                          cy=(y0 + y1) / (2 * height),
                          w=(x1 - x0) / width, h=(y1 - y0) / height)


def rescale_annotations(boxes, from_size: tuple[int, int],
                        to_size: tuple[int, int]) -> list[Annotation]:
    """Rescale boxes between image sizes; sizes are (width, height).

    Normalized Annotation entries are size-invariant and pass through;
    tuple entries are absolute (class_id, x_min, y_min, w, h) pixel
    boxes in the source frame. Zero-area boxes are dropped (counted in
    a warning).
    """
    fw, fh = from_size
    tw, th = to_size
    if min(fw, fh, tw, th) <= 0:
        raise ParameterError("image sizes must be positive")
    sx, sy = tw / fw, th / fh
    out: list[Annotation] = []
    dropped = 0
    for box in boxes:
        if isinstance(box, Annotation):
            ann = box
        else:
            cid, x, y, w, h = box
            x, y, w, h = x * sx, y * sy, w * sx, h * sy
            if w <= 0 or h <= 0:
                dropped += 1
                continue
            try:
                ann = Annotation.from_absolute(int(cid), x, y, w, h, tw, th)
            except ParameterError:
                dropped += 1
                continue
        if ann.w <= 0 or ann.h <= 0:
            dropped += 1
            continue
        out.append(ann)
    if dropped:
        log.warning("dropped %d degenerate boxes during rescale", dropped)
    return out


def load_annotations(path: str | Path) -> list[Annotation]:
    anns = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise ParameterError(f"malformed annotation line: {line!r}")
        anns.append(Annotation(class_id=int(parts[0]),
                               cx=float(parts[1]), cy=float(parts[2]),
                               w=float(parts[3]), h=float(parts[4])))
    return anns


def save_annotations(path: str | Path, anns: list[Annotation]) -> None:
    Path(path).write_text(
        "".join(a.to_line() + "\n" for a in anns))


@dataclass(frozen=True)
class SampleRecord:
    """Provenance of one degraded sample in the output manifest."""

    index: int
    clean_path: str
    degraded_path: str
    annotation_path: str
    q_step: float
    sigma: float
    seed: int
    psf_grid_id: str

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @staticmethod
    def from_json(line: str) -> "SampleRecord":
        return SampleRecord(**json.loads(line))


@dataclass(frozen=True)
class MetricReport:
    """Mean squared error and the derived PSNR in dB."""

    mse: float
    psnr: float


def image_metrics(a: np.ndarray, b: np.ndarray) -> MetricReport:
    """MSE/PSNR between two planes of identical shape."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    psnr = float("inf") if mse == 0.0 else float(10.0 * np.log10(1.0 / mse))
    return MetricReport(mse=mse, psnr=psnr)


def mix_seed(master_seed: int, index: int) -> int:
    """Per-sample 64-bit seed from the master seed and sample index.

    splitmix64 finalizer over the combined value; avalanches so nearby
    indices give unrelated streams.
    """
    z = (master_seed + 0x9E3779B97F4A7C15 * (index + 1)) % (1 << 64)
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) % (1 << 64)
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) % (1 << 64)
    return z ^ (z >> 31)


def read_manifest(path: str | Path) -> list[dict]:
    records = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            records.append(json.loads(line))
    return records


def build_dataset(manifest_in: str | Path, grid: PsfGrid,
                  cfg: DegradationConfig, out_dir: str | Path,
                  target_size: tuple[int, int] = DEFAULT_TARGET_SIZE,
                  master_seed: int | None = None,
                  psf_grid_id: str = "grid",
                  threads: int = 1) -> Path:
    """Degrade every sample in the input manifest; returns the output
    manifest path.

    For each record: load, bilinear-resize to target_size, degrade with
    the PSF grid, add noise with a per-sample derived seed, and write
    clean/degraded/labels artifacts. Unreadable inputs are skipped and
    reported. Two runs with one master seed produce identical bytes.
    """
    out_dir = Path(out_dir)
    for sub in ("clean", "degraded", "labels", "manifests"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    records = read_manifest(manifest_in)
    seed0 = cfg.seed if master_seed is None else master_seed
    tw, th = target_size

    def one(item: tuple[int, dict]):
        i, rec = item
        try:
            img = io.load_image(rec["clean"])
        except Exception as exc:
            log.warning("skipping sample %d (%s): %s", i,
                        rec.get("clean"), exc)
            return None
        src_h, src_w = img.shape
        if (src_w, src_h) != (tw, th):
            img = io.resize_bilinear(img, tw, th)
        img = np.clip(img, 0.0, 1.0)
        seed = mix_seed(seed0, i)
        sample_cfg = dataclasses.replace(cfg, seed=seed)
        degraded = apply_noise(
            degrade_image(img, grid, sample_cfg), sample_cfg)

        stem = f"{i:06d}"
        clean_path = out_dir / "clean" / f"{stem}.png"
        degraded_path = out_dir / "degraded" / f"{stem}.png"
        raw_path = out_dir / "degraded" / f"{stem}.f32"
        label_path = out_dir / "labels" / f"{stem}.txt"
        io.save_image_u16(clean_path, img)
        io.save_image_u16(degraded_path, degraded)
        io.save_raw_f32(raw_path, degraded)
        anns: list[Annotation] = []
        if rec.get("labels"):
            try:
                anns = rescale_annotations(
                    load_annotations(rec["labels"]),
                    from_size=(src_w, src_h), to_size=target_size)
            except (OSError, ParameterError) as exc:
                log.warning("sample %d labels unreadable: %s", i, exc)
        save_annotations(label_path, anns)
        return SampleRecord(
            index=i, clean_path=str(clean_path),
            degraded_path=str(degraded_path),
            annotation_path=str(label_path), q_step=sample_cfg.q_step,
            sigma=sample_cfg.sigma, seed=seed, psf_grid_id=psf_grid_id)

    items = list(enumerate(records))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(it) for it in items]

    written = [r for r in results if r is not None]
    skipped = len(records) - len(written)
    if records and not written:
        raise DatasetBuildError("no samples could be processed")
    if not records:
        log.warning("input manifest is empty; writing empty output")
    manifest_out = out_dir / "manifests" / "manifest.jsonl"
    # single serialized append point keeps output order deterministic
    manifest_out.write_text(
        "".join(r.to_json() + "\n" for r in written))
    if skipped:
        log.warning("skipped %d unreadable samples", skipped)
    return manifest_out
