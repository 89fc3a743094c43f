"""Container file format and optional PICMUS dataset ingestion.

Container layout (all integers little-endian):

    magic "USJD" | version u16 | kind_len u8 | kind ascii
    | meta_len u32 | metadata JSON (utf-8)
    | count u64 | payload count * f32

The metadata JSON carries dims, units, and enough geometry to rebuild the
typed object. System matrices use their own "USJM" cache format; both
read_container and write_container transparently delegate for those.
Writes are atomic (write to a temp file, then rename).
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from . import forward_model
from .acquisition import (
    ChannelData,
    CystRegion,
    ImagingGrid,
    Phantom,
    PlaneWaveTx,
    PointTarget,
    ProbeGeometry,
)
from .beamform import BModeImage, RfImage
from .psf import Psf

__all__ = [
    "ContainerError",
    "BadMagicError",
    "VersionMismatchError",
    "TruncatedFileError",
    "StructureError",
    "write_container",
    "read_container",
    "ingest_picmus",
    "CONTAINER_MAGIC",
    "CONTAINER_VERSION",
]

CONTAINER_MAGIC = b"USJD"
CONTAINER_VERSION = 1

KINDS = ("channel", "rfimage", "bmode", "psf", "phantom", "matrix")


class ContainerError(ValueError):
    """Base error for malformed container files."""


class BadMagicError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


class TruncatedFileError(ContainerError):
    pass


class StructureError(ContainerError):
    pass


def _probe_meta(probe):
    return {
        "num_elements": probe.num_elements,
        "pitch": probe.pitch,
        "sound_speed": probe.sound_speed,
        "sampling_freq": probe.sampling_freq,
        "center_freq": probe.center_freq,
        "t0_offset": probe.t0_offset,
    }


def _grid_meta(grid):
    return {
        "nz": grid.nz,
        "nx": grid.nx,
        "dz": grid.dz,
        "dx": grid.dx,
        "z_origin": grid.z_origin,
    }


def _annotation_meta(ann):
    if isinstance(ann, PointTarget):
        return {
            "type": "point",
            "iz": ann.iz,
            "ix": ann.ix,
            "z": ann.z,
            "x": ann.x,
            "amplitude": ann.amplitude,
        }
    if isinstance(ann, CystRegion):
        return {"type": "cyst", "z": ann.z, "x": ann.x, "radius": ann.radius}
    raise TypeError("unknown annotation type %r" % type(ann))


def _annotation_from_meta(d):
    if d["type"] == "point":
        return PointTarget(
            iz=d["iz"], ix=d["ix"], z=d["z"], x=d["x"], amplitude=d["amplitude"]
        )
    if d["type"] == "cyst":
        return CystRegion(z=d["z"], x=d["x"], radius=d["radius"])
    raise StructureError("unknown annotation type %r" % d["type"])


def _encode(obj):
    """Return (kind, metadata dict, float payload) for a supported object."""
    if isinstance(obj, ChannelData):
        meta = {
            "dims": list(obj.samples.shape),
            "probe": _probe_meta(obj.probe),
            "tx": {"angle": obj.tx.angle},
        }
        return "channel", meta, obj.samples
    if isinstance(obj, BModeImage):
        meta = {
            "dims": list(obj.data.shape),
            "grid": _grid_meta(obj.grid),
            "dynamic_range": obj.dynamic_range,
        }
        return "bmode", meta, obj.data
    if isinstance(obj, RfImage):
        meta = {"dims": list(obj.data.shape), "grid": _grid_meta(obj.grid)}
        return "rfimage", meta, obj.data
    if isinstance(obj, Psf):
        meta = {"dims": list(obj.kernel.shape), "dz": obj.dz, "dx": obj.dx}
        return "psf", meta, obj.kernel
    if isinstance(obj, Phantom):
        meta = {
            "dims": list(obj.trf.shape),
            "grid": _grid_meta(obj.grid),
            "annotations": [_annotation_meta(a) for a in obj.annotations],
        }
        return "phantom", meta, obj.trf
    raise TypeError("cannot serialize object of type %r" % type(obj).__name__)


def write_container(obj, path):
    """Serialize a supported object to ``path`` atomically."""
    if isinstance(obj, forward_model.SparseSystemMatrix):
        forward_model.save_matrix(obj, path)
        return
    kind, meta, payload = _encode(obj)
    payload = np.ascontiguousarray(payload, dtype="<f4")
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    kind_bytes = kind.encode("ascii")
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(CONTAINER_MAGIC)
        f.write(struct.pack("<HB", CONTAINER_VERSION, len(kind_bytes)))
        f.write(kind_bytes)
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<Q", payload.size))
        f.write(payload.tobytes())
    os.replace(tmp, path)


def _read_exact(f, n, path, what):
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedFileError("%s: truncated while reading %s" % (path, what))
    return buf


def read_container(path):
    """Read a container file back into its typed object."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, path, "magic")
    if magic == forward_model.MATRIX_MAGIC:
        return forward_model.load_matrix(path)
    if magic != CONTAINER_MAGIC:
        raise BadMagicError("%s: bad magic %r" % (path, magic))
    with open(path, "rb") as f:
        f.seek(4)
        version, kind_len = struct.unpack("<HB", _read_exact(f, 3, path, "header"))
        if version != CONTAINER_VERSION:
            raise VersionMismatchError(
                "%s: container version %d, expected %d"
                % (path, version, CONTAINER_VERSION)
            )
        kind = _read_exact(f, kind_len, path, "kind").decode("ascii")
        if kind not in KINDS:
            raise StructureError("%s: unknown kind %r" % (path, kind))
        (meta_len,) = struct.unpack("<I", _read_exact(f, 4, path, "metadata length"))
        try:
            meta = json.loads(_read_exact(f, meta_len, path, "metadata"))
        except json.JSONDecodeError as err:
            raise StructureError("%s: metadata does not parse: %s" % (path, err))
        (count,) = struct.unpack("<Q", _read_exact(f, 8, path, "payload length"))
        payload = np.frombuffer(
            _read_exact(f, 4 * count, path, "payload"), dtype="<f4"
        ).astype(np.float64)
    dims = meta.get("dims")
    if not dims or int(np.prod(dims)) != count:
        raise StructureError(
            "%s: payload length %d does not match dims %s" % (path, count, dims)
        )
    data = payload.reshape(dims)
    if kind == "channel":
        return ChannelData(
            samples=data,
            tx=PlaneWaveTx(**meta["tx"]),
            probe=ProbeGeometry(**meta["probe"]),
        )
    if kind == "rfimage":
        return RfImage(data=data, grid=ImagingGrid(**meta["grid"]))
    if kind == "bmode":
        return BModeImage(
            data=data,
            grid=ImagingGrid(**meta["grid"]),
            dynamic_range=meta["dynamic_range"],
        )
    if kind == "psf":
        return Psf(kernel=data, dz=meta.get("dz"), dx=meta.get("dx"))
    if kind == "phantom":
        return Phantom(
            trf=data,
            grid=ImagingGrid(**meta["grid"]),
            annotations=[_annotation_from_meta(a) for a in meta.get("annotations", [])],
        )
    raise StructureError("%s: unhandled kind %r" % (path, kind))


PICMUS_HINT = (
    "expected a PICMUS HDF5 file; the datasets are distributed by the "
    "plane-wave imaging challenge (see the challenge website) and are not "
    "bundled with this package"
)


def ingest_picmus(path, angle_index=None):
    """Extract one steering angle's RF channel data from a PICMUS HDF5 file.

    Returns (ChannelData, ProbeGeometry). ``angle_index=None`` picks the
    angle closest to normal incidence. Requires the optional h5py
    dependency; IQ-only files (nonzero modulation frequency) are rejected.
    """
    try:
        import h5py
    except ImportError:
        raise RuntimeError("PICMUS ingestion requires the optional h5py dependency")
    if not os.path.exists(path):
        raise FileNotFoundError("dataset not found at %s; %s" % (path, PICMUS_HINT))
    with h5py.File(path, "r") as f:
        if "US" not in f:
            raise StructureError("%s: missing group 'US'; %s" % (path, PICMUS_HINT))
        groups = [k for k in f["US"].keys() if k.startswith("US_DATASET")]
        if not groups:
            raise StructureError(
                "%s: no 'US/US_DATASET*' group; %s" % (path, PICMUS_HINT)
            )
        g = f["US"][sorted(groups)[0]]
        for required in ("angles", "data", "sampling_frequency", "probe_geometry"):
            if required not in g:
                raise StructureError(
                    "%s: missing dataset group %r" % (path, required)
                )
        if "real" not in g["data"]:
            raise StructureError("%s: missing dataset group 'data/real'" % path)
        mod_freq = float(np.asarray(g["modulation_frequency"])) if "modulation_frequency" in g else 0.0
        if mod_freq != 0.0:
            raise StructureError(
                "%s: file holds IQ data (modulation_frequency=%g); RF data is "
                "required" % (path, mod_freq)
            )
        angles = np.asarray(g["angles"], dtype=np.float64).reshape(-1)
        if angle_index is None:
            angle_index = int(np.argmin(np.abs(angles)))
        if not 0 <= angle_index < angles.size:
            raise ValueError(
                "angle index %d out of range (file has %d angles)"
                % (angle_index, angles.size)
            )
        data = np.asarray(g["data"]["real"], dtype=np.float64)
        if data.ndim == 2:
            data = data[None, ...]
        # stored layout is (angles, elements, samples)
        samples = data[angle_index].T.copy()
        geom = np.asarray(g["probe_geometry"], dtype=np.float64)
        if geom.shape[0] != 3 and geom.shape[-1] == 3:
            geom = geom.T
        xs = np.sort(geom[0].reshape(-1))
        pitch = float(np.mean(np.diff(xs)))
        fs = float(np.asarray(g["sampling_frequency"]))
        c = float(np.asarray(g["sound_speed"])) if "sound_speed" in g else 1540.0
        t0 = float(np.asarray(g["initial_time"])) if "initial_time" in g else 0.0
        probe = ProbeGeometry(
            num_elements=xs.size,
            pitch=pitch,
            sound_speed=c,
            sampling_freq=fs,
            center_freq=fs / 4.0,  # RF files carry no center frequency
            t0_offset=t0,
        )
        ch = ChannelData(
            samples=samples, tx=PlaneWaveTx(angle=float(angles[angle_index])), probe=probe
        )
    return ch, probe
