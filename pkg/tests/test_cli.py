"""Command-line pipeline: subcommands composing through container files."""

import json

import numpy as np
import pytest

from pwrecon import read_container
from pwrecon.cli import main


@pytest.fixture()
def small_config(tmp_path):
    doc = {
        "probe": {
            "num_elements": 16,
            "pitch": 0.3e-3,
            "sound_speed": 1540.0,
            "sampling_freq": 20.832e6,
            "center_freq": 5.208e6,
        },
        "grid": {"nz": 32, "nx": 16, "z_origin": 3.0e-3},
        "tx_angles": [0.0],
        "apodization": {"window": "hanning", "f_number": 0.5},
        "phantom": {
            "type": "point",
            "points": [[3.5e-3, 0.0], [4.0e-3, 1.0e-3]],
            "amplitude": 1.0,
            "snr_db": None,
            "seed": 0,
            "blur": {"axial_fbw": 0.67, "lateral_sigma": 0.5},
        },
        "psf": {"type": "parametric", "axial_fbw": 0.67, "lateral_sigma": 1.0},
        "solver": {
            "mode": "joint",
            "gamma_d": 1.0,
            "gamma_b": 0.25,
            "beta": 12.0,
            "mu": 0.3,
            "max_iter": 40,
        },
        "metrics": {"kind": "point"},
        "dynamic_range": 60.0,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


class TestPipelineComposition:
    def test_full_pipeline(self, small_config, tmp_path):
        ch = tmp_path / "channel.usjd"
        ph = tmp_path / "phantom.usjd"
        assert main([
            "simulate", "--config", str(small_config),
            "--out", str(ch), "--phantom-out", str(ph),
        ]) == 0

        mat = tmp_path / "model.usjm"
        assert main(["model", "build", "--config", str(small_config), "--out", str(mat)]) == 0
        assert read_container(mat).num_cols == 32 * 16

        das = tmp_path / "das.usjd"
        assert main([
            "das", "--config", str(small_config), "--channel", str(ch), "--out", str(das),
        ]) == 0

        comp = tmp_path / "comp.usjd"
        assert main(["compound", "--out", str(comp), str(das), str(das)]) == 0
        np.testing.assert_allclose(
            read_container(comp).data, read_container(das).data, rtol=1e-12
        )

        result = tmp_path / "joint.usjd"
        report = tmp_path / "report.json"
        assert main([
            "solve", "--config", str(small_config), "--channel", str(ch),
            "--das", str(das), "--out", str(result), "--report", str(report),
        ]) == 0
        rep = json.loads(report.read_text())
        assert rep["mode"] == "joint"
        assert rep["iterations"] >= 1

        metrics = tmp_path / "metrics.json"
        assert main([
            "metrics", "--config", str(small_config), "--image", str(result),
            "--phantom", str(ph), "--kind", "point", "--out", str(metrics),
        ]) == 0
        doc = json.loads(metrics.read_text())
        assert len(doc["fwhm_axial_mm"]) == 2

        png = tmp_path / "img.png"
        assert main(["export-png", "--input", str(result), "--out", str(png)]) == 0
        assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_solve_modes_and_das_autocompute(self, small_config, tmp_path):
        ch = tmp_path / "channel.usjd"
        assert main(["simulate", "--config", str(small_config), "--out", str(ch)]) == 0
        for mode in ("beamform", "deconv", "sequential"):
            out = tmp_path / ("%s.usjd" % mode)
            code = main([
                "solve", "--config", str(small_config), "--channel", str(ch),
                "--mode", mode, "--out", str(out),
            ])
            assert code == 0, mode
            assert np.all(np.isfinite(read_container(out).data))

    def test_preset_applies_published_values(self, small_config, tmp_path, capsys):
        from pwrecon import preset_solver_config

        cfg = preset_solver_config("joint", "sr")
        assert (cfg.gamma_d, cfg.gamma_b, cfg.beta, cfg.mu) == (1.0, 0.1, 500.0, 5.0)
        cfg = preset_solver_config("joint", "sc")
        assert (cfg.gamma_d, cfg.gamma_b, cfg.beta, cfg.mu) == (1.0, 0.1, 1e3, 0.1)
        cfg = preset_solver_config("beamform_only", "sr")
        assert (cfg.gamma_b, cfg.mu, cfg.beta) == (1.0, 5.0, 1e3)
        cfg = preset_solver_config("deconv_only", "cc")
        assert (cfg.mu, cfg.beta) == (0.01, 1e3)
        cfg = preset_solver_config("sequential", "sc")
        assert cfg.stage2 is not None and cfg.stage2.mu == 0.1

    def test_identical_masks_give_gcnr_zero(self, small_config, tmp_path):
        ch = tmp_path / "channel.usjd"
        das = tmp_path / "das.usjd"
        main(["simulate", "--config", str(small_config), "--out", str(ch)])
        main(["das", "--config", str(small_config), "--channel", str(ch), "--out", str(das)])
        out = tmp_path / "metrics.json"
        disc = "0.0035,0.0,0.0005"
        assert main([
            "metrics", "--config", str(small_config), "--image", str(das),
            "--roi", disc, "--background", disc, "--out", str(out),
        ]) == 0
        doc = json.loads(out.read_text())
        assert doc["gcnr"][0] == 0.0


class TestCliErrors:
    def test_missing_input_file_exit_code(self, small_config, tmp_path):
        code = main([
            "das", "--config", str(small_config),
            "--channel", str(tmp_path / "absent.usjd"),
            "--out", str(tmp_path / "o.usjd"),
        ])
        assert code == 3

    def test_bad_container_exit_code(self, small_config, tmp_path):
        bad = tmp_path / "bad.usjd"
        bad.write_bytes(b"JUNKJUNKJUNK")
        code = main([
            "das", "--config", str(small_config), "--channel", str(bad),
            "--out", str(tmp_path / "o.usjd"),
        ])
        assert code == 4

    def test_unknown_flag_exits_2(self, small_config):
        with pytest.raises(SystemExit) as err:
            main(["das", "--config", str(small_config), "--bogus", "x"])
        assert err.value.code == 2

    def test_bad_config_exit_code(self, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"probe": {"num_elements": 1}}))
        code = main([
            "model", "build", "--config", str(cfg), "--out", str(tmp_path / "m.usjm"),
        ])
        assert code == 4

    def test_builtin_config_names_load(self):
        from pwrecon import get_builtin_config, load_run_config

        for name in ("desk_point", "desk_cyst"):
            cfg = load_run_config("builtin:%s" % name)
            assert cfg.grid.num_pixels > 0
            doc = get_builtin_config(name)
            assert doc["solver"]["mode"] == "joint"
