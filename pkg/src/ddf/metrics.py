"""Utility and privacy metrics: word error rate, equal error rate, chance and lift."""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

from ddf import kernels
from ddf.errors import PreconditionError

_PUNCT = str.maketrans("", "", string.punctuation)


def normalize_tokens(tokens) -> list[str]:
    """Lowercase and strip punctuation; a string is split on whitespace first."""
    if isinstance(tokens, str):
        tokens = tokens.split()
    out = []
    for t in tokens:
        t = str(t).lower().translate(_PUNCT)
        if t:
            out.append(t)
    return out


def edit_distance(reference, hypothesis) -> int:
    """Levenshtein distance between two token sequences (any hashable tokens)."""
    ids: dict = {}
    a = [ids.setdefault(t, len(ids)) for t in reference]
    b = [ids.setdefault(t, len(ids)) for t in hypothesis]
    return kernels.levenshtein(a, b)


def wer(reference, hypothesis) -> float:
    """Word-level edit distance divided by reference length (may exceed 1)."""
    ref = normalize_tokens(reference)
    hyp = normalize_tokens(hypothesis)
    if not ref:
        raise PreconditionError("reference must contain at least one word")
    return edit_distance(ref, hyp) / len(ref)


def corpus_wer(references, hypotheses) -> float:
    """Total edits over total reference words."""
    edits = words = 0
    for r, h in zip(references, hypotheses, strict=True):
        ref = normalize_tokens(r)
        if not ref:
            raise PreconditionError("reference must contain at least one word")
        edits += edit_distance(ref, normalize_tokens(h))
        words += len(ref)
    if words == 0:
        raise PreconditionError("no references given")
    return edits / words


@dataclass(frozen=True)
class ScoreTrials:
    genuine: tuple
    impostor: tuple

    def __post_init__(self):
        g = tuple(float(x) for x in self.genuine)
        i = tuple(float(x) for x in self.impostor)
        if not g or not i:
            raise PreconditionError("both genuine and impostor scores are required")
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(i))):
            raise PreconditionError("scores must be finite")
        object.__setattr__(self, "genuine", g)
        object.__setattr__(self, "impostor", i)


@dataclass(frozen=True)
class EERResult:
    eer: float
    threshold: float


def far_frr(trials: ScoreTrials, thresholds) -> tuple[np.ndarray, np.ndarray]:
    """FAR(t) = P(impostor >= t), FRR(t) = P(genuine < t)."""
    g = np.sort(np.asarray(trials.genuine))
    i = np.sort(np.asarray(trials.impostor))
    t = np.asarray(thresholds, dtype=np.float64)
    far = 1.0 - np.searchsorted(i, t, side="left") / i.size
    frr = np.searchsorted(g, t, side="left") / g.size
    return far, frr


def eer_thresholds(trials: ScoreTrials) -> np.ndarray:
    s = np.unique(np.concatenate([trials.genuine, trials.impostor]))
    mids = (s[:-1] + s[1:]) / 2.0
    return np.sort(np.concatenate([s, mids, [s[-1] + 1.0]]))


def eer(trials: ScoreTrials) -> EERResult:
    """Equal error rate at the FAR/FRR crossing, interpolated between thresholds."""
    t = eer_thresholds(trials)
    far, frr = far_frr(trials, t)
    d = far - frr   # non-increasing: >= 0 at the lowest threshold, -1 above the top score
    k = int(np.argmax(d <= 0))
    if k == 0:
        return EERResult(float(far[0]), float(t[0]))
    alpha = d[k - 1] / (d[k - 1] - d[k])
    rate = far[k - 1] + alpha * (far[k] - far[k - 1])
    return EERResult(float(rate), float(t[k - 1] + alpha * (t[k] - t[k - 1])))


def chance_level(label_set) -> float:
    n = len(set(label_set))
    if n < 1:
        raise PreconditionError("empty label set")
    return 1.0 / n


def lift(accuracy: float, chance: float) -> float:
    return accuracy / chance


def binomial_band(chance: float, n: int, sigmas: float = 3.0) -> tuple[float, float]:
    """Accuracy interval chance +/- sigmas * sqrt(p(1-p)/n)."""
    half = sigmas * np.sqrt(chance * (1.0 - chance) / n)
    return chance - half, chance + half


@dataclass
class ConditionEval:
    condition: str
    wer: float | None
    eer: float | None
    eer_threshold: float | None = None
    relative_wer: float | None = None
    num_utterances: int = 0
    num_trials: int = 0


@dataclass
class EvalReport:
    conditions: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def add(self, ev: ConditionEval):
        if ev.wer is not None and ev.wer < 0:
            raise PreconditionError("WER must be nonnegative")
        if ev.eer is not None and not 0.0 <= ev.eer <= 0.5:
            raise PreconditionError("EER must lie in [0, 0.5]")
        if ev.condition == "high" and ev.eer is not None:
            raise PreconditionError("EER is not applicable when identity is hidden")
        self.conditions[ev.condition] = ev

    def to_dict(self) -> dict:
        return {
            "conditions": {k: vars(v) for k, v in sorted(self.conditions.items())},
            "provenance": self.provenance,
        }
