"""Where does compression lose information? Loss maps and binned stats.

A loss map is the per-pixel channel-mean absolute difference between an
image and its compression roundtrip. Binning those losses by the
luminance of the reference image turns "loss concentrates in darker
regions" into numbers: per-bin mean loss, the fraction of pixels in the
bin, and the fraction of total loss the bin accounts for.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidConfigError, InvalidInputError
from ..imaging import to_grayscale, _as_image

__all__ = ["LossReport", "loss_map", "binned_loss_stats"]

CSV_COLUMNS = ("bin_low", "bin_high", "pixel_fraction", "mean_abs_loss", "loss_fraction")


@dataclass
class LossReport:
    """Luminance-binned compression-loss statistics for one image.

    ``bin_edges`` has K+1 entries partitioning [0, 1] into K equal-width
    bins; the three per-bin arrays each have K entries. ``loss_fraction``
    sums to 1 when any loss exists, and is all zeros for a perfect
    reconstruction.
    """

    bin_edges: np.ndarray
    mean_abs_loss: np.ndarray
    pixel_fraction: np.ndarray
    loss_fraction: np.ndarray
    qf: int | None = None

    @property
    def num_bins(self) -> int:
        return len(self.mean_abs_loss)

    def rows(self) -> list[dict]:
        out = []
        for i in range(self.num_bins):
            out.append(
                {
                    "bin_low": float(self.bin_edges[i]),
                    "bin_high": float(self.bin_edges[i + 1]),
                    "pixel_fraction": float(self.pixel_fraction[i]),
                    "mean_abs_loss": float(self.mean_abs_loss[i]),
                    "loss_fraction": float(self.loss_fraction[i]),
                }
            )
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            for row in self.rows():
                writer.writerow({k: f"{v:.12g}" for k, v in row.items()})


def loss_map(orig, recon) -> np.ndarray:
    """Per-pixel mean over channels of the absolute difference."""
    a = _as_image(orig, "orig")
    b = _as_image(recon, "recon")
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = np.abs(a - b)
    if d.ndim == 3:
        d = d.mean(axis=2)
    return d


def binned_loss_stats(orig, lmap, k: int, qf: int | None = None) -> LossReport:
    """Bin a loss map by the luminance of the reference image.

    Luminance is split into ``k`` equal-width bins over [0, 1]; a pixel
    at luminance exactly 1.0 falls in the last bin. Empty bins report
    zero mean loss.
    """
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool) or k < 2:
        raise InvalidConfigError(f"bin count must be an integer >= 2, got {k!r}")
    lum = to_grayscale(orig)
    lm = _as_image(lmap, "loss map")
    if lm.ndim != 2 or lm.shape != lum.shape:
        raise InvalidInputError(
            f"loss map shape {lm.shape} does not match image {lum.shape}"
        )
    k = int(k)
    idx = np.clip((lum * k).astype(np.int64), 0, k - 1).ravel()
    counts = np.bincount(idx, minlength=k).astype(np.float64)
    sums = np.bincount(idx, weights=lm.ravel(), minlength=k)
    n = lum.size
    total = float(sums.sum())
    mean_abs = np.divide(sums, counts, out=np.zeros(k), where=counts > 0)
    loss_frac = sums / total if total > 0 else np.zeros(k)
    return LossReport(
        bin_edges=np.linspace(0.0, 1.0, k + 1),
        mean_abs_loss=mean_abs,
        pixel_fraction=counts / n,
        loss_fraction=loss_frac,
        qf=qf,
    )
