import json

import pytest

from ddf import cli
from ddf.cli import load_run_config, main
from ddf.pipeline import ModelConfig, TrainConfig

from conftest import TINY_MODEL, TINY_TRAIN, cli_determinism_sweep, sine, tiny_config_file


def test_usage_error_is_precondition_failure(capsys):
    assert main(["filter", "--in", "x.wav"]) == 1
    assert main(["nonsense"]) == 1
    assert "error" in capsys.readouterr().err


def test_missing_input_exits_1(tmp_path, capsys):
    code = main(["filter", "--in", str(tmp_path / "nope.wav"), "--out", str(tmp_path / "o.wav"),
                 "--preference", "low"])
    assert code == 1
    assert "ddf: error" in capsys.readouterr().err


def test_nonpassthrough_filter_needs_checkpoint(tmp_path):
    from ddf.frontend import save_waveform
    wav = save_waveform(sine(300.0, 0.2), tmp_path / "in.wav")
    assert main(["filter", "--in", str(wav), "--out", str(tmp_path / "o.wav"), "--preference", "high"]) == 1


def test_low_filter_copies_bytes(tmp_path):
    from ddf.frontend import save_waveform
    wav = save_waveform(sine(300.0, 0.2), tmp_path / "in.wav")
    assert main(["filter", "--in", str(wav), "--out", str(tmp_path / "o.wav"), "--preference", "low"]) == 0
    assert (tmp_path / "o.wav").read_bytes() == wav.read_bytes()
    side = json.loads((tmp_path / "o.wav.json").read_text())
    assert side["provenance"]["branches"] == []


def test_internal_error_exits_2(tmp_path, monkeypatch, capsys):
    def boom(args):
        raise RuntimeError("kaboom")
    monkeypatch.setattr(cli, "cmd_report", boom)
    assert main(["report", "--run", str(tmp_path), "--out", str(tmp_path / "r.json")]) == 2
    assert "internal error" in capsys.readouterr().err


def test_eval_needs_a_metric(tiny_corpus, tmp_path):
    assert main(["eval", "--manifest", str(tiny_corpus), "--checkpoint", str(tmp_path / "x.npz"),
                 "--out", str(tmp_path / "e.json")]) == 1


def test_incomplete_run_exits_1(tmp_path):
    assert main(["report", "--run", str(tmp_path), "--out", str(tmp_path / "r.json")]) == 1


def test_run_config_merges_over_defaults(tmp_path):
    cfg = tiny_config_file(tmp_path / "c.json")
    tcfg, mcfg = load_run_config(cfg)
    assert tcfg == TINY_TRAIN
    assert mcfg == TINY_MODEL
    assert load_run_config(None) == (TrainConfig(), ModelConfig())
    ref = tmp_path / "ref.json"
    ref.write_text(json.dumps({"model": {"reference": True}}))
    assert load_run_config(ref)[1] == ModelConfig.reference()


@pytest.mark.parametrize("text, match", [
    ("{not json", "valid JSON"),
    ('{"optim": {}}', "unknown config sections"),
    ('{"train": {"max_step": 3}}', "unknown configuration key"),
])
def test_bad_run_config(tmp_path, text, match):
    from ddf.errors import PreconditionError
    p = tmp_path / "c.json"
    p.write_text(text)
    with pytest.raises(PreconditionError, match=match):
        load_run_config(p)


def test_unknown_attacker_and_condition(tiny_corpus, tmp_path):
    base = ["attack", "--manifest", str(tiny_corpus), "--out", str(tmp_path / "a.jsonl")]
    assert main(base + ["--models", "lr,knn"]) == 1
    assert main(base + ["--conditions", "medium"]) == 1
    assert main(base + ["--conditions", "high"]) == 1   # needs a checkpoint


@pytest.mark.slow
def test_every_command_is_deterministic(tiny_corpus, tmp_path):
    results = cli_determinism_sweep(tmp_path / "sweep", tiny_corpus, tiny_config_file(tmp_path / "c.json"))
    bad = [name for name, ok, _ in results if not ok]
    assert not bad, f"non-deterministic commands: {bad}"
    assert len(results) == 13
