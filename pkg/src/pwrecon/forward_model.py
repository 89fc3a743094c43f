"""Sparse system matrix mapping image pixels to plane-wave channel samples.

A channel sample at time t receives contributions from every pixel whose
round-trip delay tau lands within one sampling period of t. Contributing
pixels are weighted by 1 - |t - tau| / t_max, where t_max is the largest
such mismatch among the sample's contributors, then scaled by the receive
apodization window. Rows are ordered sample-major within element
(row = element * M + sample); image vectors are axial-major within lateral
(column = ix * nz + iz), i.e. Fortran-order flattening of (nz, nx) arrays.

The assembled matrix is immutable and safe to share across threads; products
use fixed-order accumulation so results are bit-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .acquisition import ImagingGrid, PlaneWaveTx, ProbeGeometry

__all__ = [
    "ApodizationSpec",
    "SparseSystemMatrix",
    "propagation_delay",
    "apodization_weight",
    "build_system_matrix",
    "apply_forward",
    "apply_adjoint",
    "suggest_time_window",
    "save_matrix",
    "load_matrix",
    "cached_system_matrix",
    "MATRIX_MAGIC",
]

MATRIX_MAGIC = b"USJM"
MATRIX_VERSION = 1

WINDOWS = ("rectangular", "hanning", "tukey")


@dataclass(frozen=True)
class ApodizationSpec:
    """Receive apodization: window shape plus f-number aperture growth.

    The active half-aperture at depth z is z / (2 f_number), optionally
    clamped from below by ``min_half_aperture`` so very shallow pixels keep
    at least one element in view.
    """

    window: str = "hanning"
    f_number: float = 0.5
    taper: float = 0.25  # tukey only: tapered fraction of the aperture
    min_half_aperture: float = 0.0

    def __post_init__(self):
        if self.window not in WINDOWS:
            raise ValueError("window must be one of %s" % (WINDOWS,))
        if self.f_number <= 0:
            raise ValueError("f_number must be positive")
        if not 0.0 <= self.taper <= 1.0:
            raise ValueError("tukey taper must lie in [0, 1]")
        if self.min_half_aperture < 0:
            raise ValueError("min_half_aperture must be nonnegative")


def propagation_delay(pixel, element_x, tx, sound_speed):
    """Two-way delay for a pixel: plane-wave transmit plus return to element.

    Transmit leg is (z cos(angle) + x sin(angle)) / c, return leg is the
    euclidean distance from pixel to element over c. Accepts scalars or
    arrays for the pixel coordinates.
    """
    z, x = pixel
    tau_t = (z * np.cos(tx.angle) + x * np.sin(tx.angle)) / sound_speed
    tau_r = np.sqrt(z**2 + (x - element_x) ** 2) / sound_speed
    return tau_t + tau_r


def _window_value(offset, spec):
    """Window amplitude at normalized aperture offset in [-1, 1]."""
    d = np.abs(offset)
    if spec.window == "rectangular":
        return np.where(d <= 1.0, 1.0, 0.0)
    if spec.window == "hanning":
        return np.where(d <= 1.0, np.cos(np.pi * d / 2.0) ** 2, 0.0)
    # tukey: flat for d <= 1 - taper, cosine roll-off to zero at d = 1
    a = spec.taper
    if a == 0.0:
        return np.where(d <= 1.0, 1.0, 0.0)
    flat = d <= 1.0 - a
    ramp = (d > 1.0 - a) & (d <= 1.0)
    val = np.zeros_like(d, dtype=np.float64)
    val = np.where(flat, 1.0, val)
    val = np.where(ramp, 0.5 * (1.0 + np.cos(np.pi * (d - (1.0 - a)) / a)), val)
    return val


def apodization_weight(pixel, element_x, spec):
    """Receive apodization weight in [0, 1] for a pixel-element pair.

    Zero outside the f-number aperture and for pixels at z <= 0 (degenerate
    aperture). Accepts scalars or arrays.
    """
    z, x = pixel
    z = np.asarray(z, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    half = np.maximum(z / (2.0 * spec.f_number), spec.min_half_aperture)
    valid = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        offset = np.where(valid, (x - element_x) / np.where(valid, half, 1.0), 2.0)
    w = np.where(np.abs(offset) <= 1.0, _window_value(offset, spec), 0.0)
    w = np.where(valid, w, 0.0)
    if w.ndim == 0:
        return float(w)
    return w


@dataclass
class SparseSystemMatrix:
    """CSR weighting matrix with apodization folded in, plus its provenance."""

    matrix: sp.csr_matrix  # (M*N, nz*nx)
    probe: ProbeGeometry
    grid: ImagingGrid
    tx: PlaneWaveTx
    apodization: ApodizationSpec
    num_time_samples: int
    fingerprint: str

    @property
    def num_rows(self):
        return self.matrix.shape[0]

    @property
    def num_cols(self):
        return self.matrix.shape[1]

    @property
    def nnz(self):
        return self.matrix.nnz

    def apply(self, x):
        """Forward product: image vector -> channel vector."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.num_cols,):
            raise ValueError(
                "expected image vector of length %d, got shape %s"
                % (self.num_cols, x.shape)
            )
        return self.matrix @ x

    def apply_adjoint(self, y):
        """Transpose product: channel vector -> image vector."""
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.num_rows,):
            raise ValueError(
                "expected channel vector of length %d, got shape %s"
                % (self.num_rows, y.shape)
            )
        return self.matrix.T @ y


def apply_forward(model, x):
    """Noiseless channel vector produced by an image vector."""
    return model.apply(x)


def apply_adjoint(model, y):
    """Adjoint of the forward map applied to a channel vector."""
    return model.apply_adjoint(y)


def _fingerprint(probe, grid, tx, num_samples, apod):
    payload = json.dumps(
        {
            "format": MATRIX_VERSION,
            "probe": [
                probe.num_elements,
                probe.pitch,
                probe.sound_speed,
                probe.sampling_freq,
                probe.center_freq,
                probe.t0_offset,
            ],
            "grid": [grid.nz, grid.nx, grid.dz, grid.dx, grid.z_origin],
            "angle": tx.angle,
            "num_samples": num_samples,
            "apod": [apod.window, apod.f_number, apod.taper, apod.min_half_aperture],
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def build_system_matrix(probe, grid, tx, num_samples, apod):
    """Assemble the sparse pixel-to-sample weighting matrix.

    Parameters
    ----------
    probe, grid, tx : acquisition geometry. The grid spacings must match the
        probe (dz = c / 2fs, dx = pitch).
    num_samples : int
        Number of time samples M per element; rows total M * num_elements.
    apod : ApodizationSpec
        Receive window multiplied into every stored weight.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be at least 1")
    if grid.num_pixels < 1 or probe.num_elements < 1:
        raise ValueError("grid and probe must be nonempty")
    expected_dz = probe.sound_speed / (2.0 * probe.sampling_freq)
    if grid.dz != expected_dz or grid.dx != probe.pitch:
        raise ValueError("grid spacing must be dz = c/(2 fs) and dx = pitch")

    fs = probe.sampling_freq
    t0 = probe.t0_offset
    c = probe.sound_speed
    gate = 1.0 / fs
    m_count = num_samples

    # flat pixel coords, axial-major within lateral (Fortran order)
    z_flat = np.tile(grid.z_positions, grid.nx)
    x_flat = np.repeat(grid.x_positions, grid.nz)
    cos_a = np.cos(tx.angle)
    sin_a = np.sin(tx.angle)
    tau_t = (z_flat * cos_a + x_flat * sin_a) / c
    pix_idx = np.arange(grid.num_pixels, dtype=np.int64)

    rows_out = []
    cols_out = []
    weights_out = []
    for n, elem_x in enumerate(probe.element_positions):
        tau = tau_t + np.sqrt(z_flat**2 + (x_flat - elem_x) ** 2) / c
        base = np.floor((tau - t0) * fs).astype(np.int64)
        samp_list = []
        col_list = []
        dt_list = []
        # each pixel can land within the gate of at most a few neighbor samples
        for k in (-1, 0, 1, 2):
            i = base + k
            t_i = i / fs + t0
            dt = np.abs(t_i - tau)
            ok = (dt <= gate) & (i >= 0) & (i < m_count)
            samp_list.append(i[ok])
            col_list.append(pix_idx[ok])
            dt_list.append(dt[ok])
        samp = np.concatenate(samp_list)
        col = np.concatenate(col_list)
        dt = np.concatenate(dt_list)
        if samp.size == 0:
            continue

        # per-sample max mismatch and contributor count (apodization-independent)
        t_max = np.zeros(m_count)
        np.maximum.at(t_max, samp, dt)
        counts = np.bincount(samp, minlength=m_count)
        raw = 1.0 - dt / np.where(t_max[samp] > 0.0, t_max[samp], 1.0)
        # a sample with a single contributor (or all mismatches zero) keeps it
        # at full weight instead of annihilating the only datum
        raw = np.where((counts[samp] == 1) | (t_max[samp] == 0.0), 1.0, raw)

        apw = apodization_weight((z_flat[col], x_flat[col]), elem_x, apod)
        w = raw * apw
        keep = w > 0.0
        rows_out.append(n * m_count + samp[keep])
        cols_out.append(col[keep])
        weights_out.append(w[keep])

    shape = (m_count * probe.num_elements, grid.num_pixels)
    if rows_out:
        rows = np.concatenate(rows_out)
        cols = np.concatenate(cols_out)
        weights = np.concatenate(weights_out)
        matrix = sp.csr_matrix((weights, (rows, cols)), shape=shape)
    else:
        matrix = sp.csr_matrix(shape)
    matrix.sort_indices()
    return SparseSystemMatrix(
        matrix=matrix,
        probe=probe,
        grid=grid,
        tx=tx,
        apodization=apod,
        num_time_samples=m_count,
        fingerprint=_fingerprint(probe, grid, tx, m_count, apod),
    )


def suggest_time_window(probe, grid, tx, guard=2):
    """Start offset and sample count covering every pixel-element delay.

    Returns (t0_offset, num_samples) such that all round-trip delays over
    the grid fall inside the acquisition window with ``guard`` spare samples
    on each side.
    """
    z = grid.z_positions
    x = grid.x_positions
    zz = np.repeat(z, grid.nx)
    xx = np.tile(x, grid.nz)
    taus = []
    for elem_x in (probe.element_positions[0], probe.element_positions[-1]):
        taus.append(propagation_delay((zz, xx), elem_x, tx, probe.sound_speed))
    for elem_x in probe.element_positions:
        taus.append(
            propagation_delay(
                (np.array([z[0], z[-1]]), np.array([0.0, 0.0])),
                elem_x,
                tx,
                probe.sound_speed,
            )
        )
    lo = min(float(np.min(t)) for t in taus)
    hi = max(float(np.max(t)) for t in taus)
    fs = probe.sampling_freq
    t0 = np.floor(lo * fs - guard) / fs
    if t0 < 0:
        t0 = 0.0
    num = int(np.ceil((hi - t0) * fs)) + 1 + guard
    return t0, num


# --- matrix cache file ------------------------------------------------------
#
# Layout (all little-endian):
#   magic "USJM" | version u16 | meta_len u32 | meta JSON (utf-8)
#   | num_rows u64 | num_cols u64 | nnz u64
#   | indptr  (num_rows+1) i64 | indices nnz i32 | weights nnz f64


def save_matrix(model, path):
    """Write a system matrix to its binary cache format (atomic)."""
    mat = model.matrix
    meta = {
        "fingerprint": model.fingerprint,
        "num_samples": model.num_time_samples,
        "probe": {
            "num_elements": model.probe.num_elements,
            "pitch": model.probe.pitch,
            "sound_speed": model.probe.sound_speed,
            "sampling_freq": model.probe.sampling_freq,
            "center_freq": model.probe.center_freq,
            "t0_offset": model.probe.t0_offset,
        },
        "grid": {
            "nz": model.grid.nz,
            "nx": model.grid.nx,
            "dz": model.grid.dz,
            "dx": model.grid.dx,
            "z_origin": model.grid.z_origin,
        },
        "tx": {"angle": model.tx.angle},
        "apodization": {
            "window": model.apodization.window,
            "f_number": model.apodization.f_number,
            "taper": model.apodization.taper,
            "min_half_aperture": model.apodization.min_half_aperture,
        },
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    indptr = np.asarray(mat.indptr, dtype="<i8")
    indices = np.asarray(mat.indices, dtype="<i4")
    weights = np.asarray(mat.data, dtype="<f8")
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(MATRIX_MAGIC)
        f.write(struct.pack("<HI", MATRIX_VERSION, len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<QQQ", mat.shape[0], mat.shape[1], mat.nnz))
        f.write(indptr.tobytes())
        f.write(indices.tobytes())
        f.write(weights.tobytes())
    os.replace(tmp, path)


def _read_exact(f, n, path, what):
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError("truncated matrix file %s while reading %s" % (path, what))
    return buf


def load_matrix(path):
    """Read a system matrix cache file back into a SparseSystemMatrix."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, path, "magic")
        if magic != MATRIX_MAGIC:
            raise ValueError("bad magic in matrix file %s" % path)
        version, meta_len = struct.unpack("<HI", _read_exact(f, 6, path, "header"))
        if version != MATRIX_VERSION:
            raise ValueError(
                "matrix file %s has version %d, expected %d"
                % (path, version, MATRIX_VERSION)
            )
        meta = json.loads(_read_exact(f, meta_len, path, "metadata"))
        num_rows, num_cols, nnz = struct.unpack(
            "<QQQ", _read_exact(f, 24, path, "dims")
        )
        indptr = np.frombuffer(
            _read_exact(f, 8 * (num_rows + 1), path, "indptr"), dtype="<i8"
        )
        indices = np.frombuffer(_read_exact(f, 4 * nnz, path, "indices"), dtype="<i4")
        weights = np.frombuffer(_read_exact(f, 8 * nnz, path, "weights"), dtype="<f8")
    probe = ProbeGeometry(**meta["probe"])
    grid = ImagingGrid(**meta["grid"])
    tx = PlaneWaveTx(**meta["tx"])
    apod = ApodizationSpec(**meta["apodization"])
    matrix = sp.csr_matrix(
        (weights.copy(), indices.copy(), indptr.copy()), shape=(num_rows, num_cols)
    )
    model = SparseSystemMatrix(
        matrix=matrix,
        probe=probe,
        grid=grid,
        tx=tx,
        apodization=apod,
        num_time_samples=meta["num_samples"],
        fingerprint=meta["fingerprint"],
    )
    expected = _fingerprint(probe, grid, tx, model.num_time_samples, apod)
    if expected != model.fingerprint:
        raise ValueError("fingerprint mismatch in matrix file %s" % path)
    return model


def cached_system_matrix(probe, grid, tx, num_samples, apod, cache_dir=None):
    """Build a system matrix, reusing an on-disk copy when available.

    The cache directory comes from ``cache_dir`` or the PWRECON_CACHE_DIR
    environment variable; with neither set the matrix is built in memory.
    """
    cache_dir = cache_dir or os.environ.get("PWRECON_CACHE_DIR")
    if not cache_dir:
        return build_system_matrix(probe, grid, tx, num_samples, apod)
    fp = _fingerprint(probe, grid, tx, num_samples, apod)
    path = os.path.join(cache_dir, "sysmat_%s.usjm" % fp[:16])
    if os.path.exists(path):
        try:
            model = load_matrix(path)
            if model.fingerprint == fp:
                return model
        except ValueError:
            pass  # stale or corrupt cache entry: rebuild below
    model = build_system_matrix(probe, grid, tx, num_samples, apod)
    os.makedirs(cache_dir, exist_ok=True)
    save_matrix(model, path)
    return model
