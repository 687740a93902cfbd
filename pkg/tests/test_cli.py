"""End-to-end CLI contract: subcommands, exit codes, file formats."""

import json
import os

import pytest

from fedsim.cli import main

FAST_TRAIN = """
task = smoke
seed = 0
synth.samples = 200
synth.vocab_size = 64
synth.tokens_per_doc = 12
model.vocab_size = 256
fed.K = 2
fed.rounds = 6
"""

FAST_SWEEP = """
task = smoke
seed = 0
synth.samples = 200
synth.vocab_size = 64
synth.tokens_per_doc = 12
model.vocab_size = 256
plan.clients = 1,2,4
plan.baseline_rounds = 4
plan.threshold_rounds = 8
"""

# weak signal and a tight budget force the largest client count to miss the
# target without diverging
FAILING_SWEEP = """
task = weak
seed = 0
synth.samples = 400
synth.signal = 0.3
synth.vocab_size = 64
synth.tokens_per_doc = 12
model.vocab_size = 256
plan.clients = 1,2,8,32
plan.baseline_rounds = 8
plan.threshold_rounds = 10
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def read(*parts):
    with open(os.path.join(*parts), encoding="utf-8") as handle:
        return handle.read()


# --------------------------------------------------------------------- train


def test_train_writes_expected_artifacts(tmp_path):
    config = write(tmp_path, "run.cfg", FAST_TRAIN)
    out = str(tmp_path / "out")
    assert main(["train", "--config", config, "--out", out]) == 0
    curve = read(out, "curve.csv").splitlines()
    assert curve[0] == "task,model,K,seed,round,accuracy,loss,wall_seconds"
    assert len(curve) == 1 + 6  # header + fed.rounds rows
    first = curve[1].split(",")
    assert first[:5] == ["smoke", "softmax-regression", "2", "0", "1"]
    assert first[7] == ""  # timing omitted by default so reruns are stable

    final = json.loads(read(out, "final.json"))
    assert set(final) == {"final_accuracy", "final_loss", "param_count", "config"}
    assert final["param_count"] == 256 * 4 + 4
    assert final["config"]["fed.K"] == 2

    resolved = read(out, "resolved_config.txt").splitlines()
    assert "task = smoke" in resolved
    assert "fed.B = 32" in resolved  # defaults are materialized
    assert "plan.target_fraction = 0.9" in resolved


def test_train_eval_every_row_count(tmp_path):
    config = write(tmp_path, "run.cfg", FAST_TRAIN + "fed.eval_every = 3\n")
    out = str(tmp_path / "out")
    assert main(["train", "--config", config, "--out", out]) == 0
    assert len(read(out, "curve.csv").splitlines()) == 1 + 2


def test_train_reruns_are_byte_identical(tmp_path):
    config = write(tmp_path, "run.cfg", FAST_TRAIN)
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["train", "--config", config, "--out", out1]) == 0
    assert main(["train", "--config", config, "--out", out2]) == 0
    assert read(out1, "curve.csv") == read(out2, "curve.csv")
    finals = []
    for out in (out1, out2):
        payload = json.loads(read(out, "final.json"))
        payload["config"].pop("out_dir")  # the only intentionally differing key
        finals.append(payload)
    assert finals[0] == finals[1]


def test_train_seed_override_changes_results(tmp_path):
    config = write(tmp_path, "run.cfg", FAST_TRAIN)
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["train", "--config", config, "--out", out1]) == 0
    assert main(["train", "--config", config, "--out", out2, "--seed", "99"]) == 0
    assert "seed = 99" in read(out2, "resolved_config.txt")
    assert read(out1, "curve.csv") != read(out2, "curve.csv")


def test_train_unknown_key_exits_2(tmp_path, capsys):
    config = write(tmp_path, "run.cfg", "fed.momentum = 0.9\n")
    assert main(["train", "--config", config]) == 2
    assert "fed.momentum" in capsys.readouterr().err


def test_train_missing_config_exits_2(tmp_path):
    assert main(["train", "--config", str(tmp_path / "absent.cfg")]) == 2


def test_train_threads_do_not_change_output(tmp_path):
    config = write(tmp_path, "run.cfg", FAST_TRAIN.replace("fed.K = 2\n", "fed.K = 8\n"))
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["train", "--config", config, "--out", out1, "--threads", "1"]) == 0
    assert main(["train", "--config", config, "--out", out2, "--threads", "4"]) == 0
    assert read(out1, "curve.csv") == read(out2, "curve.csv")


# --------------------------------------------------------------------- sweep


def test_sweep_artifacts_and_comment(tmp_path):
    config = write(tmp_path, "run.cfg", FAST_SWEEP)
    out = str(tmp_path / "out")
    assert main(["sweep", "--config", config, "--out", out]) == 0
    lines = read(out, "sweep.csv").splitlines()
    assert lines[0] == "# random_baseline=0.25"
    assert lines[1] == "K,final_accuracy_at_budget,rounds_to_target,diverged"
    assert len(lines) == 2 + 3
    assert [line.split(",")[0] for line in lines[2:]] == ["1", "2", "4"]
    for count in (1, 2, 4):
        curve = read(out, f"curve_K{count}.csv").splitlines()
        assert len(curve) == 1 + 8  # threshold budget rows


def test_sweep_failure_row_has_empty_cell(tmp_path):
    config = write(tmp_path, "run.cfg", FAILING_SWEEP)
    out = str(tmp_path / "out")
    assert main(["sweep", "--config", config, "--out", out]) == 0
    rows = {line.split(",")[0]: line.split(",") for line in read(out, "sweep.csv").splitlines()[2:]}
    assert rows["1"][2] != ""
    assert rows["32"][2] == ""  # FAILURE: never reached target
    assert rows["32"][3] == "0"  # but did not diverge
    assert rows["32"][1] != ""


def test_sweep_deterministic_across_threads(tmp_path):
    config = write(tmp_path, "run.cfg", FAST_SWEEP)
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["sweep", "--config", config, "--out", out1, "--threads", "1"]) == 0
    assert main(["sweep", "--config", config, "--out", out2, "--threads", "4"]) == 0
    for name in ("sweep.csv", "curve_K1.csv", "curve_K2.csv", "curve_K4.csv"):
        assert read(out1, name) == read(out2, name)


# ----------------------------------------------------------- export-plotdata


def test_export_plotdata_merges_sorted_and_lossless(tmp_path):
    config = write(tmp_path, "run.cfg", FAST_SWEEP)
    out = str(tmp_path / "out")
    assert main(["sweep", "--config", config, "--out", out]) == 0
    assert main(["export-plotdata", out]) == 0
    lines = read(out, "plotdata.csv").splitlines()
    assert lines[0] == "K,round,accuracy"
    assert len(lines) == 1 + 3 * 8
    parsed = [line.split(",") for line in lines[1:]]
    keys = [(int(k), int(r)) for k, r, _ in parsed]
    assert keys == sorted(keys)
    # accuracy strings must match the per-K curves byte for byte
    for count in (1, 2, 4):
        source = [line.split(",")[5] for line in read(out, f"curve_K{count}.csv").splitlines()[1:]]
        merged = [acc for k, _, acc in parsed if int(k) == count]
        assert merged == source


def test_export_plotdata_missing_inputs_exit_2(tmp_path, capsys):
    assert main(["export-plotdata", str(tmp_path / "nope")]) == 2
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["export-plotdata", str(empty)]) == 2
    assert "curve_K" in capsys.readouterr().err


# ----------------------------------------------------------------- gradcheck


def test_gradcheck_both_models_pass(tmp_path, capsys):
    assert main(["gradcheck"]) == 0
    assert "max_rel_error" in capsys.readouterr().out
    config = write(
        tmp_path,
        "t.cfg",
        "model.kind = tiny-transformer\nmodel.vocab_size = 32\nmodel.embed_dim = 4\nmodel.ff_dim = 8\n",
    )
    assert main(["gradcheck", "--config", config]) == 0


def test_gradcheck_corrupt_negative_control(tmp_path, capsys):
    assert main(["gradcheck", "--corrupt-gradient"]) == 1
    assert "coordinate" in capsys.readouterr().err
