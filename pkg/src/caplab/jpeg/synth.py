"""Paired-dataset synthesis: bright sources, low-light versions, compressed inputs.

Each source image yields a triplet: the bright reference, a darkened
copy (gamma curve, gain, additive Gaussian noise), and the darkened
copy pushed through the JPEG surrogate. Triplets live under
``out_dir/{bright,low,low_jpeg}/<id>.png`` with a ``manifest.csv``
recording id, train/val split, quality factor, and darken parameters.

A procedural generator is included so the whole lab bootstraps without
any external photographs: layered filtered noise, an illumination ramp,
soft bright blobs, and a crushed-shadow floor that leaves contiguous
exact-black regions (the regime the brightness mask exists for).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import IngestionError, InvalidConfigError
from ..imaging import load_image, save_image, _as_image
from .surrogate import jpeg_roundtrip
from .tables import scale_quant_tables

__all__ = [
    "DarkenParams",
    "DatasetTriplet",
    "ManifestEntry",
    "DatasetManifest",
    "darken",
    "procedural_image",
    "generate_procedural_images",
    "synthesize_dataset",
    "load_manifest",
]

MANIFEST_NAME = "manifest.csv"
MANIFEST_COLUMNS = ("id", "split", "qf", "gamma", "gain", "noise_sigma")
SUBDIRS = ("bright", "low", "low_jpeg")


@dataclass(frozen=True)
class DarkenParams:
    """Low-light degradation knobs: out = clamp(gain * img^gamma + noise)."""

    gamma: float = 2.2
    gain: float = 0.2
    noise_sigma: float = 0.01

    def validate(self) -> None:
        if self.gamma < 1.0:
            raise InvalidConfigError(f"gamma must be >= 1, got {self.gamma}")
        if not 0.0 < self.gain <= 1.0:
            raise InvalidConfigError(f"gain must be in (0, 1], got {self.gain}")
        if self.noise_sigma < 0.0:
            raise InvalidConfigError(
                f"noise_sigma must be >= 0, got {self.noise_sigma}"
            )


@dataclass
class DatasetTriplet:
    """One training example: bright reference and its two degraded versions."""

    id: str
    bright: np.ndarray
    uncompressed_low: np.ndarray
    compressed_low: np.ndarray


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    split: str
    qf: int
    gamma: float
    gain: float
    noise_sigma: float


class DatasetManifest:
    """Index over a synthesized dataset directory."""

    def __init__(self, root, entries: list[ManifestEntry]):
        self.root = Path(root)
        self.entries = list(entries)

    @property
    def path(self) -> Path:
        return self.root / MANIFEST_NAME

    def ids(self, split: str | None = None) -> list[str]:
        return [e.id for e in self.entries if split is None or e.split == split]

    def entry(self, image_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.id == image_id:
                return e
        raise IngestionError(f"id {image_id!r} not in manifest {self.path}")

    def triplet_paths(self, image_id: str) -> dict:
        self.entry(image_id)
        return {sub: self.root / sub / f"{image_id}.png" for sub in SUBDIRS}

    def load_triplet(self, image_id: str) -> DatasetTriplet:
        paths = self.triplet_paths(image_id)
        return DatasetTriplet(
            id=image_id,
            bright=load_image(paths["bright"]),
            uncompressed_low=load_image(paths["low"]),
            compressed_low=load_image(paths["low_jpeg"]),
        )

    def save(self) -> None:
        with open(self.path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS)
            writer.writeheader()
            for e in self.entries:
                writer.writerow(
                    {
                        "id": e.id,
                        "split": e.split,
                        "qf": e.qf,
                        "gamma": f"{e.gamma:.12g}",
                        "gain": f"{e.gain:.12g}",
                        "noise_sigma": f"{e.noise_sigma:.12g}",
                    }
                )


def load_manifest(root) -> DatasetManifest:
    """Read ``manifest.csv`` from a dataset directory (or a direct file path)."""
    root = Path(root)
    path = root if root.name.endswith(".csv") else root / MANIFEST_NAME
    if not path.is_file():
        raise IngestionError(f"no manifest at {path}")
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise IngestionError(f"manifest {path} missing columns {sorted(missing)}")
        for row in reader:
            entries.append(
                ManifestEntry(
                    id=row["id"],
                    split=row["split"],
                    qf=int(row["qf"]),
                    gamma=float(row["gamma"]),
                    gain=float(row["gain"]),
                    noise_sigma=float(row["noise_sigma"]),
                )
            )
    return DatasetManifest(path.parent, entries)


def darken(img, gamma: float, gain: float, noise_sigma: float, seed: int) -> np.ndarray:
    """Synthesize a low-light version of an image, deterministically per seed."""
    DarkenParams(gamma=gamma, gain=gain, noise_sigma=noise_sigma).validate()
    a = _as_image(img)
    out = gain * np.power(a, gamma)
    if noise_sigma > 0.0:
        rng = np.random.default_rng(seed)
        out = out + rng.normal(0.0, noise_sigma, size=a.shape)
    return np.clip(out, 0.0, 1.0)


def _quantize8(a: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid the PNG files actually store."""
    return np.floor(np.clip(a, 0.0, 1.0) * 255.0 + 0.5) / 255.0


def procedural_image(
    seed: int,
    height: int = 128,
    width: int = 128,
    crush: float | None = None,
    detail: float = 1.0,
    shadow_grain: float = 0.0,
) -> np.ndarray:
    """Generate one bright source image from layered filtered noise.

    ``crush`` subtracts a black floor and rescales, leaving the darkest
    smooth regions at exact zero; None draws it from the seed so a
    corpus gets varied shadow coverage.  ``detail`` scales the two
    finest noise layers (0 gives smooth, blobby scenes).  ``shadow_grain``
    adds per-pixel grain weighted toward dark areas, mimicking the
    shadow noise of real low-light photographs; defaults reproduce the
    historical output bit for bit because no extra random draws happen.
    """
    if height < 16 or width < 16:
        raise InvalidConfigError(f"procedural size too small: {height}x{width}")
    if not 0.0 <= detail <= 4.0:
        raise InvalidConfigError(f"detail must be in [0, 4], got {detail}")
    if not 0.0 <= shadow_grain <= 1.0:
        raise InvalidConfigError(f"shadow_grain must be in [0, 1], got {shadow_grain}")
    rng = np.random.default_rng(seed)
    if crush is None:
        crush = float(rng.uniform(0.05, 0.18))
    elif not 0.0 <= crush < 1.0:
        raise InvalidConfigError(f"crush must be in [0, 1), got {crush}")

    base = np.zeros((height, width))
    for scale, amp in (
        (24.0, 1.0),
        (12.0, 0.5),
        (6.0, 0.25 * detail),
        (3.0, 0.12 * detail),
    ):
        base += amp * gaussian_filter(rng.standard_normal((height, width)), scale)
    lo, hi = base.min(), base.max()
    base = (base - lo) / (hi - lo) if hi > lo else np.full_like(base, 0.5)

    yy, xx = np.mgrid[0:height, 0:width]
    theta = rng.uniform(0.0, 2.0 * np.pi)
    ramp = (np.cos(theta) * xx / width + np.sin(theta) * yy / height)
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-12)
    lum = 0.75 * base + 0.25 * ramp

    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        sig = rng.uniform(min(height, width) / 10, min(height, width) / 4)
        amp = rng.uniform(0.25, 0.55)
        lum += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig * sig))

    lum = np.clip(lum, 0.0, 1.0)
    lum = np.clip((lum - crush) / (1.0 - crush), 0.0, 1.0)

    gains = rng.uniform(0.75, 1.0, size=3)
    chroma = np.stack(
        [gaussian_filter(rng.standard_normal((height, width)), 10.0) for _ in range(3)],
        axis=2,
    )
    img = lum[:, :, None] * gains[None, None, :] + 0.05 * chroma * lum[:, :, None]
    img = np.clip(img, 0.0, 1.0)
    if shadow_grain > 0.0:
        weight = (1.0 - lum) ** 2
        grain = shadow_grain * rng.standard_normal((height, width, 3))
        img = np.clip(img + grain * weight[:, :, None], 0.0, 1.0)
    return img


def generate_procedural_images(
    out_dir,
    count: int,
    seed: int = 0,
    height: int = 128,
    width: int = 128,
    crush: float | None = None,
    detail: float = 1.0,
    shadow_grain: float = 0.0,
) -> list[Path]:
    """Write ``count`` procedural bright sources as PNGs and return their paths."""
    if count < 1:
        raise InvalidConfigError(f"count must be >= 1, got {count}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        img = procedural_image(int(np.random.SeedSequence([seed, i]).generate_state(1)[0]),
                               height, width, crush=crush, detail=detail,
                               shadow_grain=shadow_grain)
        p = out / f"proc_{i:04d}.png"
        save_image(p, img)
        paths.append(p)
    return paths


def _list_sources(bright_dir: Path) -> list[Path]:
    exts = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}
    files = sorted(p for p in bright_dir.iterdir() if p.suffix.lower() in exts)
    if len(files) < 2:
        raise IngestionError(
            f"need at least 2 source images in {bright_dir}, found {len(files)}"
        )
    return files


def synthesize_dataset(
    bright_dir,
    out_dir,
    qf: int = 80,
    darken_params: DarkenParams | None = None,
    split: float = 0.8,
    seed: int = 0,
    subsampling: str = "4:4:4",
) -> DatasetManifest:
    """Build the paired dataset from a directory of bright images.

    Deterministic for a fixed seed: the train/val assignment comes from
    one seeded permutation of the sorted file list, and each image's
    darkening noise uses a seed derived from (seed, image index). The
    low image is snapped to the 8-bit grid before compression so the
    stored PNGs satisfy low_jpeg = roundtrip(low) as closely as 8-bit
    files can.
    """
    params = darken_params or DarkenParams()
    params.validate()
    scale_quant_tables(qf)
    if not 0.0 <= split <= 1.0:
        raise InvalidConfigError(f"split must be in [0, 1], got {split}")
    bright_dir = Path(bright_dir)
    if not bright_dir.is_dir():
        raise IngestionError(f"source directory {bright_dir} does not exist")
    files = _list_sources(bright_dir)

    out = Path(out_dir)
    for sub in SUBDIRS:
        (out / sub).mkdir(parents=True, exist_ok=True)

    n = len(files)
    n_train = int(round(split * n))
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = set(int(i) for i in perm[:n_train])

    bad = []
    entries = []
    for i, src in enumerate(files):
        image_id = src.stem
        try:
            bright = load_image(src)
        except Exception as exc:
            bad.append(f"{src}: {exc}")
            continue
        if bright.ndim == 2:
            bright = np.repeat(bright[:, :, None], 3, axis=2)
        img_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        low = _quantize8(
            darken(bright, params.gamma, params.gain, params.noise_sigma, img_seed)
        )
        low_jpeg = jpeg_roundtrip(low, qf=qf, subsampling=subsampling)
        save_image(out / "bright" / f"{image_id}.png", bright)
        save_image(out / "low" / f"{image_id}.png", low)
        save_image(out / "low_jpeg" / f"{image_id}.png", low_jpeg)
        entries.append(
            ManifestEntry(
                id=image_id,
                split="train" if i in train_idx else "val",
                qf=int(qf),
                gamma=params.gamma,
                gain=params.gain,
                noise_sigma=params.noise_sigma,
            )
        )
    if bad:
        raise IngestionError("unreadable source images: " + "; ".join(bad))

    manifest = DatasetManifest(out, entries)
    manifest.save()
    return manifest
