"""Delay-and-sum beamforming, coherent compounding, and B-mode conversion."""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np
import scipy.signal

from .forward_model import apodization_weight, propagation_delay

__all__ = [
    "RfImage",
    "BModeImage",
    "das_beamform",
    "compound",
    "envelope",
    "log_compress",
    "export_pgm",
    "export_png",
]


@dataclass
class RfImage:
    """Real-valued image on an ImagingGrid (RF or envelope domain)."""

    data: np.ndarray  # (nz, nx)
    grid: object

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != self.grid.shape:
            raise ValueError(
                "image shape %s does not match grid %s"
                % (self.data.shape, self.grid.shape)
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image contains non-finite values")

    def to_vector(self):
        return self.data.reshape(-1, order="F")


@dataclass
class BModeImage:
    """Log-compressed display image in dB, max 0, floor -dynamic_range."""

    data: np.ndarray  # (nz, nx), values in [-dynamic_range, 0]
    grid: object
    dynamic_range: float = 60.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.dynamic_range <= 0:
            raise ValueError("dynamic_range must be positive")
        if self.data.shape != self.grid.shape:
            raise ValueError("image shape does not match grid")
        if self.data.size and (
            self.data.min() < -self.dynamic_range - 1e-9 or self.data.max() > 1e-9
        ):
            raise ValueError("B-mode values must lie in [-dynamic_range, 0]")


def das_beamform(ch, grid, apod):
    """Delay-and-sum image of one plane-wave acquisition.

    Each pixel sums apodization-weighted, linearly interpolated channel
    samples at the pixel's round-trip delay; delays falling outside the
    recorded window contribute zero.
    """
    probe = ch.probe
    fs = probe.sampling_freq
    t0 = probe.t0_offset
    m_count = ch.num_samples
    z_flat = np.repeat(grid.z_positions, grid.nx)
    x_flat = np.tile(grid.x_positions, grid.nz)
    acc = np.zeros(grid.num_pixels)
    for n, elem_x in enumerate(probe.element_positions):
        tau = propagation_delay((z_flat, x_flat), elem_x, ch.tx, probe.sound_speed)
        s = (tau - t0) * fs
        valid = (s >= 0.0) & (s <= m_count - 1)
        i0 = np.clip(np.floor(s).astype(np.int64), 0, m_count - 1)
        i1 = np.clip(i0 + 1, 0, m_count - 1)
        frac = s - i0
        trace = ch.samples[:, n]
        vals = (1.0 - frac) * trace[i0] + frac * trace[i1]
        w = apodization_weight((z_flat, x_flat), elem_x, apod)
        acc += np.where(valid, w * vals, 0.0)
    return RfImage(data=acc.reshape(grid.shape), grid=grid)


def compound(images):
    """Coherent compounding: element-wise mean of RF images on one grid."""
    if not images:
        raise ValueError("cannot compound an empty image list")
    grid = images[0].grid
    for img in images[1:]:
        if img.grid != grid:
            raise ValueError("all images must share one grid")
    data = np.mean([img.data for img in images], axis=0)
    return RfImage(data=data, grid=grid)


def envelope(img):
    """Envelope via the analytic signal along the axial (row) direction.

    Computed per column by one-sided spectral doubling; output is
    nonnegative.
    """
    if img.grid.nz < 4:
        raise ValueError("envelope needs at least 4 axial samples")
    analytic = scipy.signal.hilbert(img.data, axis=0)
    return RfImage(data=np.abs(analytic), grid=img.grid)


def log_compress(env, dynamic_range=60.0):
    """Convert a nonnegative envelope to dB relative to its maximum.

    Values are clamped to [-dynamic_range, 0]; an all-zero envelope maps to
    a uniform floor.
    """
    if dynamic_range <= 0:
        raise ValueError("dynamic_range must be positive")
    data = env.data
    if data.size and data.min() < 0:
        raise ValueError("envelope must be nonnegative")
    peak = data.max() if data.size else 0.0
    if peak <= 0:
        db = np.full(data.shape, -dynamic_range)
    else:
        with np.errstate(divide="ignore"):
            db = 20.0 * np.log10(data / peak)
        db = np.clip(db, -dynamic_range, 0.0)
    return BModeImage(data=db, grid=env.grid, dynamic_range=dynamic_range)


def _to_gray(bmode):
    scale = 255.0 / bmode.dynamic_range
    gray = np.rint((bmode.data + bmode.dynamic_range) * scale)
    return np.clip(gray, 0, 255).astype(np.uint8)


def export_pgm(bmode, path):
    """Write an 8-bit binary PGM with dB mapped linearly to [0, 255]."""
    gray = _to_gray(bmode)
    header = b"P5\n%d %d\n255\n" % (gray.shape[1], gray.shape[0])
    with open(path, "wb") as f:
        f.write(header)
        f.write(gray.tobytes())


def export_png(bmode, path):
    """Write an 8-bit grayscale PNG (stdlib zlib, no imaging dependency)."""
    gray = _to_gray(bmode)
    nz, nx = gray.shape
    raw = b"".join(b"\x00" + gray[r].tobytes() for r in range(nz))

    def chunk(tag, payload):
        body = tag + payload
        return struct.pack(">I", len(payload)) + body + struct.pack(
            ">I", zlib.crc32(body) & 0xFFFFFFFF
        )

    ihdr = struct.pack(">IIBBBBB", nx, nz, 8, 0, 0, 0, 0)  # 8-bit grayscale
    png = (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(raw, 9))
        + chunk(b"IEND", b"")
    )
    with open(path, "wb") as f:
        f.write(png)
