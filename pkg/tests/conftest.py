"""Shared fixtures: a tiny synthetic corpus and a briefly trained tiny model."""

import numpy as np
import pytest

from ddf.content import ContentEncoderConfig
from ddf.corpus import SynthCorpusSpec, load_synth_params, parse_manifest, synth_corpus
from ddf.frontend import SAMPLE_RATE, Waveform
from ddf.pipeline import ModelConfig, TrainConfig, train
from ddf.speaker import SpeakerEncoderConfig
from ddf.vocoder import VocoderConfig

TINY_MODEL = ModelConfig(
    content=ContentEncoderConfig(channels=16, num_residual_layers=2),
    speaker=SpeakerEncoderConfig(stage_channels=(4, 4, 8, 8), embedding_dim=16, attention_dim=8),
    vocoder=VocoderConfig(ar_hidden=16, cond_hidden=8, cond_layers=1),
    dead_code_steps=10,
    griffin_lim_iterations=8,
)
TINY_TRAIN = TrainConfig(max_steps=12, batch_size=4, segment_frames=16, eval_every=6, speaker_steps=4,
                         speaker_batch_size=4, speaker_segment_frames=32, ar_steps=2, ar_batch_size=2,
                         ar_segment_frames=2)


def sine(freq: float, seconds: float = 1.0, amp: float = 0.5, sr: int = SAMPLE_RATE) -> Waveform:
    t = np.arange(int(round(seconds * sr))) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t), sr)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_corpus")
    spec = SynthCorpusSpec(num_utterances=24, num_speakers=3, num_emotions=2, token_vocab_size=4,
                           duration_range=(0.45, 0.75), seed=3)
    manifest = synth_corpus(spec, out)
    return manifest


@pytest.fixture(scope="session")
def tiny_records(tiny_corpus):
    return parse_manifest(tiny_corpus, require_transcript=True)


@pytest.fixture(scope="session")
def tiny_params(tiny_corpus):
    return load_synth_params(tiny_corpus)


@pytest.fixture(scope="session")
def tiny_models(tiny_records):
    return train(tiny_records, TINY_TRAIN, TINY_MODEL)


def tiny_config_file(path):
    """Write TINY_TRAIN / TINY_MODEL as a ``ddf train --config`` file."""
    import json
    path.write_text(json.dumps({"train": TINY_TRAIN.to_dict(), "model": TINY_MODEL.to_dict()}))
    return path


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def cli_determinism_sweep(work, manifest, config):
    """Run every CLI command twice with identical inputs; return [(command, identical, detail)]."""
    import shutil
    from pathlib import Path

    from ddf.cli import main
    from ddf.pipeline import _state_arrays, load_checkpoint

    def run(argv):
        code = main([str(a) for a in argv])
        if code != 0:
            raise AssertionError(f"ddf {' '.join(map(str, argv))} exited {code}")

    work = Path(work)
    results = []
    for tag in ("a", "b"):
        run(["synth", "--out", work / tag / "corpus", "--utterances", 16, "--speakers", 2, "--emotions", 2,
             "--vocab", 4, "--seed", 7])
    results.append(("synth", _tree_bytes(work / "a" / "corpus") == _tree_bytes(work / "b" / "corpus"), ""))

    for tag in ("a", "b"):
        run(["train", "--manifest", manifest, "--config", config, "--out", work / tag / "ck.npz", "--seed", 1])
    ca, cb = load_checkpoint(work / "a" / "ck.npz"), load_checkpoint(work / "b" / "ck.npz")
    sa, sb = _state_arrays(ca), _state_arrays(cb)
    same = sa.keys() == sb.keys() and all(np.array_equal(sa[k], sb[k]) for k in sa)
    results.append(("train", same and ca.loss_history == cb.loss_history, "compared by stored parameters"))

    ck = work / "a" / "ck.npz"
    wav = sorted((Path(manifest).parent / "wav").iterdir())[0]
    filters = [("low", "reconstructed-audio", "fallback"), ("high", "reconstructed-audio", "fallback"),
               ("moderate", "reconstructed-audio", "fallback"), ("high", "reconstructed-audio", "autoregressive"),
               ("high", "speech-embedding", "fallback"), ("moderate", "speaker-embedding", "fallback")]
    for i, (pref, emit, voc) in enumerate(filters):
        for tag in ("a", "b"):
            d = work / tag / f"filter{i}"
            d.mkdir(parents=True)
            out = d / ("out.wav" if emit == "reconstructed-audio" else "out.arr")
            run(["filter", "--in", wav, "--out", out, "--preference", pref, "--checkpoint", ck,
                 "--emit", emit, "--vocoder", voc, "--seed", 3])
        results.append((f"filter {pref} {emit} {voc}",
                        _tree_bytes(work / "a" / f"filter{i}") == _tree_bytes(work / "b" / f"filter{i}"), ""))

    for tag in ("a", "b"):
        d = work / tag / "run"
        d.mkdir()
        run(["attack", "--manifest", manifest, "--checkpoint", ck, "--out", d / "attack.jsonl",
             "--conditions", "raw,high,moderate,high-embedding", "--split-seeds", "0,1", "--seed", 2])
        run(["eval", "--manifest", manifest, "--checkpoint", ck, "--out", d / "eval.json", "--wer", "--eer",
             "--split", "all", "--seed", 2])
        run(["report", "--run", d, "--out", work / tag / "report.json"])
        for kind in ("spectrogram", "chromagram"):
            run(["plot", "--raw", wav, "--filtered", work / tag / "filter1" / "out.wav", "--kind", kind,
                 "--out", work / tag / f"{kind}.png"])
    for name, rel in (("attack", "run/attack.jsonl"), ("eval", "run/eval.json"), ("report", "report.json"),
                      ("plot spectrogram", "spectrogram.png"), ("plot chromagram", "chromagram.png")):
        results.append((name, (work / "a" / rel).read_bytes() == (work / "b" / rel).read_bytes(), ""))
    shutil.rmtree(work / "b", ignore_errors=True)
    return results
