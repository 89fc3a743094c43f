"""Container round trips, error taxonomy, and PICMUS-layout ingestion."""

import json
import struct

import numpy as np
import pytest

from pwrecon import (
    BModeImage,
    ChannelData,
    Phantom,
    PlaneWaveTx,
    Psf,
    RfImage,
    make_point_phantom,
    read_container,
    write_container,
)
from pwrecon.io import (
    BadMagicError,
    StructureError,
    TruncatedFileError,
    VersionMismatchError,
    ingest_picmus,
)


class TestContainerRoundTrip:
    def test_rfimage_payload_bit_identical(self, tiny_grid, rng, tmp_path):
        img = RfImage(rng.standard_normal(tiny_grid.shape), tiny_grid)
        path = tmp_path / "img.usjd"
        write_container(img, path)
        back = read_container(path)
        assert isinstance(back, RfImage)
        assert np.array_equal(
            back.data.astype("<f4"), img.data.astype("<f4")
        )
        assert back.grid == img.grid

    def test_channel_round_trip(self, tiny_probe, rng, tmp_path):
        ch = ChannelData(
            samples=rng.standard_normal((24, 8)),
            tx=PlaneWaveTx(angle=0.05),
            probe=tiny_probe,
        )
        path = tmp_path / "ch.usjd"
        write_container(ch, path)
        back = read_container(path)
        assert isinstance(back, ChannelData)
        assert back.probe == tiny_probe
        assert back.tx.angle == 0.05
        assert np.array_equal(back.samples.astype("<f4"), ch.samples.astype("<f4"))

    def test_bmode_and_psf_and_phantom(self, tiny_grid, rng, tmp_path):
        bm = BModeImage(-60.0 * rng.random(tiny_grid.shape), tiny_grid, 60.0)
        write_container(bm, tmp_path / "b.usjd")
        back = read_container(tmp_path / "b.usjd")
        assert isinstance(back, BModeImage) and back.dynamic_range == 60.0

        psf = Psf(kernel=rng.standard_normal((5, 3)), dz=1e-4, dx=3e-4)
        write_container(psf, tmp_path / "p.usjd")
        back = read_container(tmp_path / "p.usjd")
        assert isinstance(back, Psf) and back.dz == 1e-4

        ph = make_point_phantom(
            tiny_grid, [(tiny_grid.z_positions[4], tiny_grid.x_positions[4])]
        )
        write_container(ph, tmp_path / "ph.usjd")
        back = read_container(tmp_path / "ph.usjd")
        assert isinstance(back, Phantom)
        assert back.annotations[0].iz == 4

    def test_matrix_delegates_to_cache_format(self, tiny_instance, tmp_path):
        from pwrecon import SparseSystemMatrix

        model = tiny_instance["model"]
        path = tmp_path / "m.usjm"
        write_container(model, path)
        back = read_container(path)
        assert isinstance(back, SparseSystemMatrix)
        assert back.fingerprint == model.fingerprint


class TestContainerErrors:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.usjd"
        path.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(BadMagicError):
            read_container(path)

    def test_version_mismatch(self, tiny_grid, rng, tmp_path):
        img = RfImage(rng.standard_normal(tiny_grid.shape), tiny_grid)
        path = tmp_path / "img.usjd"
        write_container(img, path)
        blob = bytearray(path.read_bytes())
        blob[4:6] = struct.pack("<H", 99)
        path.write_bytes(bytes(blob))
        with pytest.raises(VersionMismatchError):
            read_container(path)

    def test_truncated_payload(self, tiny_grid, rng, tmp_path):
        img = RfImage(rng.standard_normal(tiny_grid.shape), tiny_grid)
        path = tmp_path / "img.usjd"
        write_container(img, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-40])
        with pytest.raises(TruncatedFileError):
            read_container(path)

    def test_dims_product_mismatch(self, tiny_grid, rng, tmp_path):
        img = RfImage(rng.standard_normal(tiny_grid.shape), tiny_grid)
        path = tmp_path / "img.usjd"
        write_container(img, path)
        blob = path.read_bytes()
        # corrupt the payload count field only
        meta_len = struct.unpack("<I", blob[14:18])[0]
        count_at = 18 + meta_len
        bad = (
            blob[:count_at]
            + struct.pack("<Q", tiny_grid.num_pixels - 1)
            + blob[count_at + 8 :]
        )
        path.write_bytes(bad)
        with pytest.raises((StructureError, TruncatedFileError)):
            read_container(path)

    def test_unknown_object_rejected(self, tmp_path):
        with pytest.raises(TypeError):
            write_container(object(), tmp_path / "x.usjd")


def make_picmus_file(path, num_angles=5, num_elements=16, num_samples=64,
                     modulation_frequency=0.0):
    h5py = pytest.importorskip("h5py")
    rng = np.random.default_rng(0)
    angles = np.linspace(-0.1, 0.1, num_angles)
    with h5py.File(path, "w") as f:
        g = f.create_group("US").create_group("US_DATASET0000")
        g.create_dataset("angles", data=angles)
        data = g.create_group("data")
        data.create_dataset(
            "real",
            data=rng.standard_normal((num_angles, num_elements, num_samples)),
        )
        data.create_dataset(
            "imag", data=np.zeros((num_angles, num_elements, num_samples))
        )
        g.create_dataset("sampling_frequency", data=20.832e6)
        g.create_dataset("sound_speed", data=1540.0)
        g.create_dataset("initial_time", data=0.0)
        g.create_dataset("modulation_frequency", data=modulation_frequency)
        geom = np.zeros((3, num_elements))
        geom[0] = (np.arange(num_elements) - (num_elements - 1) / 2) * 0.3e-3
        g.create_dataset("probe_geometry", data=geom)
    return angles


class TestPicmusIngest:
    def test_missing_file_has_actionable_error(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="dataset not found"):
            ingest_picmus(tmp_path / "nope.hdf5")

    def test_selects_normal_incidence_by_default(self, tmp_path):
        path = tmp_path / "picmus.hdf5"
        angles = make_picmus_file(path)
        ch, probe = ingest_picmus(path)
        assert ch.tx.angle == pytest.approx(angles[len(angles) // 2])
        assert probe.num_elements == 16
        assert probe.pitch == pytest.approx(0.3e-3, rel=1e-9)
        assert ch.samples.shape == (64, 16)

    def test_explicit_angle_selection(self, tmp_path):
        path = tmp_path / "picmus.hdf5"
        angles = make_picmus_file(path)
        ch, _ = ingest_picmus(path, angle_index=0)
        assert ch.tx.angle == pytest.approx(angles[0])
        with pytest.raises(ValueError, match="angle index"):
            ingest_picmus(path, angle_index=99)

    def test_iq_only_file_rejected(self, tmp_path):
        path = tmp_path / "iq.hdf5"
        make_picmus_file(path, modulation_frequency=5.0e6)
        with pytest.raises(StructureError, match="IQ"):
            ingest_picmus(path)

    def test_missing_group_named_in_error(self, tmp_path):
        h5py = pytest.importorskip("h5py")
        path = tmp_path / "broken.hdf5"
        with h5py.File(path, "w") as f:
            g = f.create_group("US").create_group("US_DATASET0000")
            g.create_dataset("angles", data=np.zeros(3))
        with pytest.raises(StructureError, match="data"):
            ingest_picmus(path)
