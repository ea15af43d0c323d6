import math
from pathlib import Path

import numpy as np
import pytest

from cogaction import load_bank, load_flow, parse_config
from cogaction.cli import main
from cogaction.config import ConfigError


def write_config(path, body):
    path.write_text(body, encoding="utf-8")
    return str(path)


BASE = """
[data]
source = synth
pattern = random-texture
period = 8
seed = 7
channels = 1
frames = 6
height = 12
width = 12
velocity = 1.0 0.0

[flow]
source = ground-truth

[train]
steps = {steps}
step_size = 0.5
lambda_m = 1.0
lambda_p = 0.001
lambda_k = 0.001
seed = 12345
init_scale = 0.1

[layer1]
n = 4
k = 3

[output]
dir = out
save_features = {save_features}
"""


def read_tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(Path(root).rglob("*")) if p.is_file() and p.name != ".lock"}


@pytest.fixture
def config_path(tmp_path):
    return write_config(tmp_path / "exp.ini", BASE.format(steps=4, save_features="true"))


class TestConfigParsing:
    def test_valid_config_parses(self, config_path):
        experiment = parse_config(config_path)
        assert experiment.data.frames == 6
        assert len(experiment.layers) == 1
        assert experiment.layers[0].config.seed == 12345 ^ 1

    def test_missing_key_reports_section_and_key(self, tmp_path):
        path = write_config(tmp_path / "bad.ini", "[data]\nsource = synth\n")
        with pytest.raises(ConfigError, match=r"\[data\].*pattern"):
            parse_config(path)

    def test_bad_value_reports_key(self, tmp_path):
        body = BASE.format(steps=4, save_features="true").replace("frames = 6", "frames = six")
        path = write_config(tmp_path / "bad.ini", body)
        with pytest.raises(ConfigError, match="frames"):
            parse_config(path)

    def test_unknown_key_rejected(self, tmp_path):
        body = BASE.format(steps=4, save_features="true") + "\n[data2]\nx = 1\n"
        path = write_config(tmp_path / "bad.ini", body)
        with pytest.raises(ConfigError, match="data2"):
            parse_config(path)

    def test_missing_layer_section(self, tmp_path):
        body = BASE.format(steps=4, save_features="true").replace("[layer1]", "[layer2]")
        path = write_config(tmp_path / "bad.ini", body)
        with pytest.raises(ConfigError, match="layer1"):
            parse_config(path)

    def test_files_source_requires_existing_frames(self, tmp_path):
        body = "[data]\nsource = files\npath_pattern = missing_{t}.pgm\n[layer1]\nn = 2\nk = 3\n"
        path = write_config(tmp_path / "bad.ini", body)
        with pytest.raises(ConfigError, match="missing_0000.pgm"):
            parse_config(path)

    def test_ground_truth_flow_needs_synth(self, tmp_path):
        (tmp_path / "f_0000.pgm").write_bytes(b"P5\n2 2\n255\n" + b"\x00" * 4)
        (tmp_path / "f_0001.pgm").write_bytes(b"P5\n2 2\n255\n" + b"\x00" * 4)
        body = (f"[data]\nsource = files\npath_pattern = {tmp_path}/f_{{t}}.pgm\n"
                "[flow]\nsource = ground-truth\n[layer1]\nn = 2\nk = 3\n")
        path = write_config(tmp_path / "bad.ini", body)
        with pytest.raises(ConfigError, match="ground-truth"):
            parse_config(path)

    def test_seed_override(self, config_path):
        experiment = parse_config(config_path, seed_override=999)
        assert experiment.layers[0].config.seed == 999 ^ 1


class TestSynthCommand:
    def test_outputs_and_flow_roundtrip(self, tmp_path, config_path):
        out = tmp_path / "synth_out"
        assert main(["synth", "--config", config_path, "--out", str(out)]) == 0
        frames = sorted(out.glob("frame_*.pgm"))
        assert len(frames) == 6
        flow = load_flow(out / "flow.bin")
        assert np.all(flow.data[..., 0] == 1.0)
        assert np.all(flow.data[..., 1] == 0.0)

    def test_rerun_bit_identical(self, tmp_path, config_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["synth", "--config", config_path, "--out", str(a)]) == 0
        assert main(["synth", "--config", config_path, "--out", str(b)]) == 0
        assert read_tree(a) == read_tree(b)


class TestTrainCommand:
    def test_outputs_present(self, tmp_path, config_path):
        out = tmp_path / "run"
        assert main(["train", "--config", config_path, "--out", str(out)]) == 0
        trace = (out / "layer1_trace.csv").read_text().splitlines()
        assert trace[0].startswith("step,S_Y,S_cond,I,M,P,K,C_pen,A")
        assert len(trace) == 1 + 4  # header + one row per step
        bank = load_bank(out / "layer1_bank.txt")
        assert bank.n == 4
        summary = (out / "summary.csv").read_text().splitlines()
        assert len(summary) == 3
        maps = list((out / "features" / "layer1").glob("feat*_t*.pgm"))
        assert len(maps) == 4 * 6

    def test_zero_steps_summary_initial_equals_final(self, tmp_path):
        path = write_config(tmp_path / "zero.ini", BASE.format(steps=0, save_features="false"))
        out = tmp_path / "run0"
        assert main(["train", "--config", path, "--out", str(out)]) == 0
        rows = (out / "summary.csv").read_text().splitlines()[1:]
        initial = rows[0].split(",", 2)[2]
        final = rows[1].split(",", 2)[2]
        assert initial == final

    def test_rerun_bit_identical(self, tmp_path, config_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", config_path, "--out", str(a)]) == 0
        assert main(["train", "--config", config_path, "--out", str(b)]) == 0
        assert read_tree(a) == read_tree(b)

    def test_two_layer_run(self, tmp_path):
        body = BASE.format(steps=2, save_features="false") + "\n[layer2]\nn = 3\nk = 3\nsteps = 1\n"
        path = write_config(tmp_path / "deep.ini", body)
        out = tmp_path / "deep"
        assert main(["train", "--config", path, "--out", str(out)]) == 0
        assert (out / "layer2_bank.txt").exists()
        bank2 = load_bank(out / "layer2_bank.txt")
        assert bank2.m_in == 4  # consumes layer 1's feature field

    def test_missing_input_file_exit_1(self, tmp_path, capsys):
        body = "[data]\nsource = files\npath_pattern = gone_{t}.pgm\n[layer1]\nn = 2\nk = 3\n"
        path = write_config(tmp_path / "bad.ini", body)
        assert main(["train", "--config", path, "--out", str(tmp_path / "x")]) == 1
        assert "gone_0000.pgm" in capsys.readouterr().err

    def test_locked_output_exit_2(self, tmp_path, config_path, capsys):
        out = tmp_path / "busy"
        out.mkdir()
        (out / ".lock").touch()
        assert main(["train", "--config", config_path, "--out", str(out)]) == 2
        assert "lock" in capsys.readouterr().err

    def test_lock_released_after_run(self, tmp_path, config_path):
        out = tmp_path / "run"
        assert main(["train", "--config", config_path, "--out", str(out)]) == 0
        assert not (out / ".lock").exists()

    def test_seed_flag_changes_outputs(self, tmp_path, config_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", config_path, "--out", str(a)]) == 0
        assert main(["train", "--config", config_path, "--out", str(b), "--seed", "777"]) == 0
        assert read_tree(a) != read_tree(b)


class TestEvalCommand:
    def test_eval_matches_summary_final(self, tmp_path, config_path):
        run = tmp_path / "run"
        assert main(["train", "--config", config_path, "--out", str(run)]) == 0
        out = tmp_path / "eval"
        assert main(["eval", "--config", config_path, "--bank", str(run / "layer1_bank.txt"),
                     "--out", str(out)]) == 0
        final = (run / "summary.csv").read_text().splitlines()[2].split(",", 2)[2]
        evaluated = (out / "eval.csv").read_text().splitlines()[1].split(",", 2)[2]
        assert final == evaluated

    def test_zero_bank_uniform_maps(self, tmp_path):
        body = BASE.format(steps=0, save_features="true").replace("init_scale = 0.1",
                                                                  "init_scale = 0.0")
        path = write_config(tmp_path / "zero.ini", body)
        run = tmp_path / "run"
        assert main(["train", "--config", path, "--out", str(run)]) == 0
        out = tmp_path / "eval"
        assert main(["eval", "--config", path, "--bank", str(run / "layer1_bank.txt"),
                     "--out", str(out)]) == 0
        row = (out / "eval.csv").read_text().splitlines()[1].split(",")
        assert abs(float(row[4])) <= 1e-12  # information index of the uniform field
        from cogaction.video import _read_pnm

        frame, _ = _read_pnm(out / "features" / "layer1" / "feat0_t0000.pgm")
        assert np.all(np.rint(frame * 255) == round(255 / 4))

    def test_multiplier_change_keeps_terms_changes_total(self, tmp_path, config_path):
        run = tmp_path / "run"
        assert main(["train", "--config", config_path, "--out", str(run)]) == 0
        body = BASE.format(steps=4, save_features="false").replace("lambda_p = 0.001",
                                                                   "lambda_p = 0.5")
        other = write_config(tmp_path / "other.ini", body)
        out1, out2 = tmp_path / "e1", tmp_path / "e2"
        bank = str(run / "layer1_bank.txt")
        assert main(["eval", "--config", config_path, "--bank", bank, "--out", str(out1)]) == 0
        assert main(["eval", "--config", other, "--bank", bank, "--out", str(out2)]) == 0
        row1 = (out1 / "eval.csv").read_text().splitlines()[1].split(",")
        row2 = (out2 / "eval.csv").read_text().splitlines()[1].split(",")
        assert row1[2:9] == row2[2:9]      # S_Y .. C_pen identical
        assert row1[9] != row2[9]          # composite value reweighted

    def test_eval_without_banks_is_config_error(self, config_path, tmp_path):
        assert main(["eval", "--config", config_path, "--out", str(tmp_path / "x")]) == 1

    def test_eval_mismatched_bank_exit_2(self, tmp_path, config_path, capsys):
        from cogaction import init_bank, save_bank

        bank = init_bank(3, 5, 3, "softmax", seed=0, scale=0.1)  # clip has 1 channel
        path = tmp_path / "bad_bank.txt"
        save_bank(bank, path)
        assert main(["eval", "--config", config_path, "--bank", str(path),
                     "--out", str(tmp_path / "x")]) == 2
        assert "layer 1" in capsys.readouterr().err


class TestFilesPipeline:
    def test_train_from_saved_frames_with_estimated_flow(self, tmp_path, config_path):
        data = tmp_path / "data"
        assert main(["synth", "--config", config_path, "--out", str(data)]) == 0
        body = (f"[data]\nsource = files\npath_pattern = {data}/frame_{{t}}.pgm\n"
                "[flow]\nsource = horn-schunck\nalpha = 1.0\niters = 50\n"
                "[train]\nsteps = 2\nstep_size = 0.1\nseed = 3\n"
                "[layer1]\nn = 3\nk = 3\n")
        path = write_config(tmp_path / "files.ini", body)
        out = tmp_path / "run"
        assert main(["train", "--config", path, "--out", str(out)]) == 0
        assert (out / "layer1_bank.txt").exists()
        rows = (out / "layer1_trace.csv").read_text().splitlines()
        assert len(rows) == 3


class TestCheckGrad:
    def test_prints_max_error_and_passes(self, capsys):
        assert main(["check-grad", "--instances", "2"]) == 0
        out = capsys.readouterr().out
        assert "max relative error" in out
        value = float(out.strip().splitlines()[-1].split()[-1])
        assert value <= 1e-5 and math.isfinite(value)


class TestThreadsFlagIsInert:
    def test_outputs_independent_of_threads(self, tmp_path, config_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", config_path, "--out", str(a)]) == 0
        assert main(["train", "--config", config_path, "--out", str(b), "--threads", "8"]) == 0
        assert read_tree(a) == read_tree(b)
