"""Corpus-level evaluation: filter a set of utterances, then score utility and privacy."""

from __future__ import annotations

import logging

import numpy as np

from ddf.attack import FeatureTable, RepresentationExtractor, extract_representations, run_attack
from ddf.corpus import LABEL_FIELDS, SynthParams, UtteranceRecord, decode_tokens
from ddf.errors import PreconditionError
from ddf.frontend import Waveform, load_waveform, stft_spectrogram
from ddf.metrics import ConditionEval, EvalReport, ScoreTrials, corpus_wer, eer
from ddf.pipeline import DDFModels, FilterRequest, OutputKind, filter
from ddf.speaker import embed_features, speaker_features

log = logging.getLogger(__name__)

CONDITIONS = ("raw", "high", "moderate")
# attacks on the high option's speech-embedding output rather than on reconstructed audio
EMBEDDING_CONDITION = "high-embedding"


def condition_audio(records: list[UtteranceRecord], models: DDFModels | None, condition: str,
                    vocoder: str = "fallback", seed: int = 0) -> list[Waveform]:
    """The audio an attacker or evaluator sees under ``condition``."""
    if condition not in CONDITIONS:
        raise PreconditionError(f"unknown condition {condition!r}; choose from {', '.join(CONDITIONS)}")
    out = []
    for r in records:
        w = load_waveform(r.audio_path)
        if condition != "raw":
            w = filter(FilterRequest(w, condition, seed=seed, vocoder=vocoder, speaker_id=r.speaker_id),
                       models).payload
        out.append(w)
    return out


def speech_embedding_table(records: list[UtteranceRecord], models: DDFModels) -> FeatureTable:
    """Mean-pooled speech-embedding output of the high option."""
    rows = []
    for r in records:
        q = filter(FilterRequest(load_waveform(r.audio_path), "high", OutputKind.SPEECH_EMBEDDING), models).payload
        rows.append(q.vectors.mean(axis=0))
    labels = {a: [r.label(a) for r in records] for a in LABEL_FIELDS}
    return FeatureTable(f"speech-embedding@{models.checkpoint_id}", [r.utt_id for r in records],
                        np.stack(rows), labels, {a: sorted(set(v)) for a, v in labels.items()})


def attack_condition(records, models, condition: str, extractor: RepresentationExtractor, attributes, specs,
                     seeds, vocoder: str = "fallback", seed: int = 0, dataset: str = "synthetic"):
    if condition == EMBEDDING_CONDITION:
        if models is None:
            raise PreconditionError("attacking the speech embedding needs a checkpoint")
        table = speech_embedding_table(records, models)
    else:
        if condition != "raw" and models is None:
            raise PreconditionError(f"the {condition} condition needs a checkpoint")
        waves = None if extractor.kind == "external" else condition_audio(records, models, condition, vocoder, seed)
        table = extract_representations(extractor, records, waves)
    out = []
    for attr in attributes:
        out.extend(run_attack(table, attr, specs, seeds, condition, dataset))
    return out


def token_error_rate(records: list[UtteranceRecord], waveforms: list[Waveform], params: SynthParams) -> float:
    """Token error rate of dominant-frequency decoding against the synthetic transcripts."""
    refs, hyps = [], []
    for r, w in zip(records, waveforms, strict=True):
        if not r.transcript:
            raise PreconditionError(f"{r.utt_id} has no transcript")
        refs.append(list(r.transcript))
        hyps.append(decode_tokens(w, params, len(r.transcript)))
    return corpus_wer(refs, hyps)


def utterance_embeddings(waveforms: list[Waveform], models: DDFModels) -> np.ndarray:
    return np.stack([embed_features(speaker_features(stft_spectrogram(w), models.cfg.speaker),
                                    models.speaker_encoder) for w in waveforms])


def verification_trials(speakers, embeddings: np.ndarray) -> ScoreTrials:
    """Every unordered pair of utterances, scored by cosine similarity."""
    speakers = list(speakers)
    if len(speakers) != len(embeddings):
        raise PreconditionError("speaker labels and embeddings differ in length")
    scores = embeddings @ embeddings.T
    genuine, impostor = [], []
    for i in range(len(speakers)):
        for j in range(i + 1, len(speakers)):
            (genuine if speakers[i] == speakers[j] else impostor).append(float(scores[i, j]))
    return ScoreTrials(genuine, impostor)


def evaluate(records: list[UtteranceRecord], models: DDFModels, params: SynthParams | None,
             with_wer: bool = True, with_eer: bool = True, vocoder: str = "fallback", seed: int = 0) -> EvalReport:
    """WER and EER for the raw, high and moderate conditions.

    ``relative_wer`` is each condition's token error rate minus the raw one.
    EER is not computed for the high condition, which replaces the identity.
    """
    if with_wer and params is None:
        raise PreconditionError("token error rate needs the synthetic corpus sidecar (corpus.json)")
    if len(records) < 2:
        raise PreconditionError("need at least two utterances to evaluate")
    report = EvalReport(provenance={
        "checkpoint_id": models.checkpoint_id, "seed": seed, "vocoder": vocoder,
        "speaker_extractor": f"speaker@{models.checkpoint_id}", "speaker_mode": models.cfg.speaker_mode,
        "utterances": [r.utt_id for r in records],
        "wer_metric": "token error rate (WER-analog)",
    })
    raw_wer = None
    for condition in CONDITIONS:
        waves = condition_audio(records, models, condition, vocoder, seed)
        w = token_error_rate(records, waves, params) if with_wer else None
        if condition == "raw":
            raw_wer = w
        e = thr = None
        n_trials = 0
        if with_eer and condition != "high":
            trials = verification_trials([r.speaker_id for r in records], utterance_embeddings(waves, models))
            res = eer(trials)
            e, thr = res.eer, res.threshold
            n_trials = len(trials.genuine) + len(trials.impostor)
        rel = None if w is None else w - raw_wer
        report.add(ConditionEval(condition, w, e, thr, rel, len(records), n_trials))
        log.info("%s: wer=%s eer=%s", condition, w, e)
    return report
