"""CLI behavior: exit codes, config parsing, atomic outputs, artifacts."""

import csv
import json

import numpy as np
import pytest

from depthfuse.cli import (
    CONFIG_DEFAULTS,
    atomic_output,
    effective_config,
    load_config,
    main,
)
from depthfuse.errors import InvalidConfig
from depthfuse.raster import DepthMap, Raster, read_pfm, read_pgm, write_pfm
from depthfuse.synthetic import make_fixture


@pytest.fixture(scope="module")
def fixture_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("maps")
    fx = make_fixture("steps")
    paths = {}
    for key, raster in (("low", fx.d_low.raster), ("high", fx.d_high.raster),
                        ("gt", fx.gt.raster)):
        paths[key] = root / f"{key}.pfm"
        write_pfm(raster, paths[key])
    paths["dir"] = root
    return paths


class TestConfigParsing:
    def test_defaults_and_comments(self, tmp_path):
        p = tmp_path / "cfg.txt"
        p.write_text("# a comment\nalpha = 0.2  # trailing\n\nsteps=7\n")
        cfg = load_config(p)
        assert cfg["alpha"] == 0.2
        assert cfg["steps"] == 7
        assert cfg["beta"] == CONFIG_DEFAULTS["beta"]

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "cfg.txt"
        p.write_text("bogus=1\n")
        with pytest.raises(InvalidConfig):
            load_config(p)

    def test_malformed_line_rejected(self, tmp_path):
        p = tmp_path / "cfg.txt"
        p.write_text("alpha 0.2\n")
        with pytest.raises(InvalidConfig):
            load_config(p)

    def test_bad_value_rejected(self, tmp_path):
        p = tmp_path / "cfg.txt"
        p.write_text("steps=many\n")
        with pytest.raises(InvalidConfig):
            load_config(p)

    def test_flags_override_file(self, tmp_path):
        class Args:
            alpha = 0.3
            beta = None

        p = tmp_path / "cfg.txt"
        p.write_text("alpha=0.2\nbeta=30\n")
        cfg = effective_config(Args(), load_config(p))
        assert cfg["alpha"] == 0.3
        assert cfg["beta"] == 30.0


class TestAtomicOutput:
    def test_no_partial_file_on_failure(self, tmp_path):
        target = tmp_path / "out.bin"
        with pytest.raises(RuntimeError):
            with atomic_output(target) as tmp:
                with open(tmp, "w") as f:
                    f.write("partial")
                raise RuntimeError("boom")
        assert not target.exists()
        assert list(tmp_path.iterdir()) == []

    def test_replaces_on_success(self, tmp_path):
        target = tmp_path / "out.txt"
        target.write_text("old")
        with atomic_output(target) as tmp:
            with open(tmp, "w") as f:
                f.write("new")
        assert target.read_text() == "new"


class TestExitCodes:
    def test_usage_error_is_1(self, capsys):
        assert main(["no-such-command"]) == 1

    def test_missing_file_is_2(self, tmp_path, capsys):
        out = tmp_path / "o.pfm"
        assert main(["fuse-gf", "/nonexistent/low.pfm",
                     "/nonexistent/high.pfm", str(out)]) == 2
        assert not out.exists()

    def test_version_exits_zero(self, capsys):
        assert main(["--version"]) == 0
        assert "depthfuse" in capsys.readouterr().out


class TestFusionCommands:
    def test_fuse_gf(self, fixture_files, tmp_path):
        out = tmp_path / "gf.pfm"
        assert main(["fuse-gf", str(fixture_files["low"]),
                     str(fixture_files["high"]), str(out)]) == 0
        assert read_pfm(out).shape == (192, 192)

    def test_fuse_poisson_dilate_zero_mask_is_near_identity(self, fixture_files,
                                                            tmp_path):
        # dilation 0 keeps only the edge pixels themselves in the mask
        out = tmp_path / "p.pfm"
        assert main(["fuse-poisson", str(fixture_files["low"]),
                     str(fixture_files["high"]), str(out),
                     "--dilate", "1"]) == 0
        assert read_pfm(out).shape == (192, 192)

    def test_edges_pgm(self, fixture_files, tmp_path):
        out = tmp_path / "e.pgm"
        assert main(["edges", str(fixture_files["high"]), str(out)]) == 0
        mask = read_pgm(out)
        assert mask.shape == (192, 192)
        assert mask.values.max() > 0

    def test_sample_pairs_csv(self, fixture_files, tmp_path):
        out = tmp_path / "pairs.csv"
        assert main(["sample-pairs", str(fixture_files["gt"]), str(out),
                     "--beta", "10"]) == 0
        with open(out, newline="") as f:
            rows = list(csv.DictReader(f))
        assert rows
        assert set(rows[0]) == {"i_y", "i_x", "j_y", "j_x", "source",
                                "weight", "z"}
        assert all(r["z"] in ("0", "1") for r in rows)


class TestEval:
    def test_json_report(self, fixture_files, tmp_path, capsys):
        out = tmp_path / "report.json"
        assert main(["eval", str(fixture_files["gt"]),
                     str(fixture_files["gt"]), "--json", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert payload["version"]
        assert payload["config"]["alpha"] == 0.15
        assert payload["metrics"]["absrel"] == 0.0
        assert payload["metrics"]["delta1"] == 1.0
        printed = json.loads(capsys.readouterr().out)
        assert printed == payload


class TestTrainCommand:
    def test_train_writes_params_and_log(self, tmp_path):
        fx = make_fixture("steps", size_low=(16, 16), size_high=(48, 48))
        data = tmp_path / "data"
        data.mkdir()
        write_pfm(fx.d_low.raster, data / "steps_low.pfm")
        write_pfm(fx.d_high.raster, data / "steps_high.pfm")
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("levels=3\nbase_channels=2\nlow_h=16\nlow_w=16\n"
                       "high_h=48\nhigh_w=48\nsteps=4\nbatch=1\n")
        params_path = tmp_path / "net.dfnp"
        assert main(["train", str(data), str(params_path),
                     "--config", str(cfg), "--no-augment", "--seed", "0"]) == 0

        from depthfuse.fusenet import load_params

        params = load_params(params_path)
        assert params.cfg.levels == 3

        with open(data / "train.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 4
        assert [r["step"] for r in rows] == ["0", "1", "2", "3"]
        assert float(rows[0]["total"]) > 0

        out = tmp_path / "fused.pfm"
        assert main(["fuse-net", str(data / "steps_low.pfm"),
                     str(data / "steps_high.pfm"), str(params_path),
                     str(out)]) == 0
        assert read_pfm(out).shape == (48, 48)

    def test_empty_data_dir_is_usage_error(self, tmp_path, capsys):
        data = tmp_path / "empty"
        data.mkdir()
        assert main(["train", str(data), str(tmp_path / "net.dfnp")]) == 1


class TestNoiseSweepCommand:
    def test_sweep_csv(self, tmp_path):
        out = tmp_path / "sweep.csv"
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("low_h=16\nlow_w=16\nhigh_h=48\nhigh_w=48\n")
        assert main(["noise-sweep", str(out), "--pipeline", "guided",
                     "--config", str(cfg)]) == 0
        with open(out, newline="") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 5 * 10  # fixtures x variance grid
        zero = [r for r in rows if float(r["param"]) == 0.0]
        assert all(r["kind"] == "none" for r in zero)
