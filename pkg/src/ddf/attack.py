"""Attribute-inference attacks: extract utterance features, fit attackers, score vs chance."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.ensemble import RandomForestClassifier
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression
from sklearn.multiclass import OneVsRestClassifier
from sklearn.neural_network import MLPClassifier
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.svm import SVC

from ddf.corpus import LABEL_FIELDS, SplitSpec, UtteranceRecord, split_80_20
from ddf.errors import PreconditionError
from ddf.formats import load_array, save_array
from ddf.frontend import Waveform, load_waveform, log_magnitude, stft_spectrogram
from ddf.metrics import chance_level

MODEL_KINDS = ("LR", "RF", "SVM", "MLP")
POOLING = "mean"

DEFAULT_HYPERPARAMETERS = {
    "LR": {"solver": "sag", "max_iter": 300},
    "RF": {"n_estimators": 100},
    "SVM": {"kernel": "rbf", "gamma": "scale", "multiclass": "one-vs-rest"},
    "MLP": {"hidden_layer_sizes": [2048], "activation": "relu", "solver": "adam",
            "learning_rate_init": 0.001, "batch_size": 200, "max_iter": 300},
}


# --------------------------------------------------------------------------- extractors

class RepresentationExtractor:
    """Maps a waveform to a (frames, features) matrix.

    kinds: ``spectrogram`` (log magnitude), ``content`` (quantized content
    vectors), ``speaker`` (the utterance embedding as a single frame),
    ``external`` (array files named ``<utt_id>.arr`` in a directory).
    """

    KINDS = ("spectrogram", "content", "speaker", "external")

    def __init__(self, kind: str, models=None, directory=None):
        if kind not in self.KINDS:
            raise PreconditionError(f"unknown extractor {kind!r}; choose from {', '.join(self.KINDS)}")
        if kind in ("content", "speaker") and models is None:
            raise PreconditionError(f"the {kind} extractor needs a checkpoint")
        if kind == "external" and directory is None:
            raise PreconditionError("the external extractor needs a feature directory")
        self.kind = kind
        self.models = models
        self.directory = Path(directory) if directory is not None else None

    @property
    def id(self) -> str:
        if self.models is not None:
            return f"{self.kind}@{self.models.checkpoint_id}"
        if self.directory is not None:
            return f"external@{self.directory.name}"
        return self.kind

    @property
    def width(self) -> int | None:
        if self.kind == "speaker":
            return self.models.cfg.speaker.embedding_dim
        if self.kind == "content":
            return self.models.cfg.content.embedding_dim
        return None

    def frames(self, w: Waveform | None, utt_id: str) -> np.ndarray:
        if self.kind == "external":
            path = self.directory / f"{utt_id}.arr"
            if not path.is_file():
                raise PreconditionError(f"no external features for {utt_id} in {self.directory}")
            return load_array(path).astype(np.float64)
        s = stft_spectrogram(w)
        if self.kind == "spectrogram":
            return log_magnitude(s)
        from ddf.pipeline import disentangle  # noqa: PLC0415 - avoids an import cycle
        from ddf.preference import TaskId  # noqa: PLC0415
        if self.kind == "content":
            return disentangle(s, [TaskId.SPEECH_RECOGNITION], self.models).quantized.vectors
        latent = disentangle(s, [TaskId.SPEECH_RECOGNITION, TaskId.SPEAKER_VERIFICATION], self.models)
        return latent.speaker.vector[None, :]


@dataclass
class FeatureTable:
    extractor_id: str
    utt_ids: list
    features: np.ndarray
    labels: dict              # attribute -> list of labels aligned with utt_ids
    label_sets: dict          # attribute -> declared label universe from the manifest

    def save(self, stem) -> Path:
        stem = Path(stem)
        save_array(stem.with_suffix(".arr"), self.features)
        side = {"extractor": self.extractor_id, "utt_ids": self.utt_ids, "labels": self.labels,
                "label_sets": self.label_sets, "pooling": POOLING}
        stem.with_suffix(".labels.json").write_text(json.dumps(side, indent=1, sort_keys=True) + "\n")
        return stem.with_suffix(".arr")

    @classmethod
    def load(cls, stem) -> "FeatureTable":
        stem = Path(stem)
        side = json.loads(stem.with_suffix(".labels.json").read_text())
        return cls(side["extractor"], side["utt_ids"], load_array(stem.with_suffix(".arr")),
                   side["labels"], side["label_sets"])


def extract_representations(extractor: RepresentationExtractor, records: list[UtteranceRecord],
                            waveforms: list[Waveform] | None = None) -> FeatureTable:
    """One mean-pooled feature row per utterance.

    ``waveforms`` overrides the audio on disk, e.g. to attack filtered output.
    """
    if waveforms is not None and len(waveforms) != len(records):
        raise PreconditionError("waveforms and records differ in length")
    rows = []
    for k, r in enumerate(records):
        w = None
        if extractor.kind != "external":
            w = waveforms[k] if waveforms is not None else load_waveform(r.audio_path)
        rows.append(extractor.frames(w, r.utt_id).mean(axis=0))
    labels = {a: [r.label(a) for r in records] for a in LABEL_FIELDS}
    label_sets = {a: sorted(set(v)) for a, v in labels.items()}
    return FeatureTable(extractor.id, [r.utt_id for r in records], np.stack(rows), labels, label_sets)


# --------------------------------------------------------------------------- attackers

@dataclass(frozen=True)
class AttackModelSpec:
    kind: str
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        kind = self.kind.upper()
        if kind not in MODEL_KINDS:
            raise PreconditionError(f"unknown attack model {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        merged = dict(DEFAULT_HYPERPARAMETERS[kind])
        merged.update(self.hyperparameters)
        object.__setattr__(self, "hyperparameters", merged)


def build_estimator(spec: AttackModelSpec, seed: int) -> Pipeline:
    hp = spec.hyperparameters
    if spec.kind == "LR":
        clf = LogisticRegression(solver=hp["solver"], max_iter=hp["max_iter"], random_state=seed)
    elif spec.kind == "RF":
        clf = RandomForestClassifier(n_estimators=hp["n_estimators"], random_state=seed, n_jobs=1)
    elif spec.kind == "SVM":
        clf = OneVsRestClassifier(SVC(kernel=hp["kernel"], gamma=hp["gamma"], random_state=seed))
    else:
        clf = MLPClassifier(hidden_layer_sizes=tuple(hp["hidden_layer_sizes"]), activation=hp["activation"],
                            solver=hp["solver"], learning_rate_init=hp["learning_rate_init"],
                            batch_size=hp["batch_size"], max_iter=hp["max_iter"], random_state=seed)
    return Pipeline([("scale", StandardScaler()), ("clf", clf)])


@dataclass
class FittedAttacker:
    spec: AttackModelSpec
    estimator: Pipeline
    classes: list
    seed: int


def fit_attacker(spec: AttackModelSpec, train_features, train_labels, seed: int = 0) -> FittedAttacker:
    X = np.asarray(train_features, dtype=np.float64)
    y = np.asarray(train_labels)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise PreconditionError(f"{X.shape[0] if X.ndim else 0} feature rows but {y.shape[0]} labels")
    classes = sorted(set(y.tolist()))
    if len(classes) < 2:
        raise PreconditionError("attacker training needs at least two classes")
    est = build_estimator(spec, seed)
    if spec.kind == "MLP":
        # sklearn clips oversized batches anyway; doing it here avoids the warning
        est.set_params(clf__batch_size=min(spec.hyperparameters["batch_size"], X.shape[0]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        est.fit(X, y)
    return FittedAttacker(spec, est, classes, seed)


@dataclass(frozen=True)
class AccuracyResult:
    accuracy: float
    chance: float
    lift: float
    n: int


def infer_accuracy(attacker: FittedAttacker, test_features, test_labels, label_set=None) -> AccuracyResult:
    """Fraction correct, with chance taken from ``label_set`` (the manifest universe)."""
    y = np.asarray(test_labels)
    if y.size == 0:
        raise PreconditionError("empty test set")
    unknown = sorted(set(y.tolist()) - set(attacker.classes))
    if unknown:
        raise PreconditionError(f"test labels outside the training universe: {unknown}")
    universe = label_set if label_set is not None else attacker.classes
    chance = chance_level(universe)
    acc = float(np.mean(attacker.estimator.predict(np.asarray(test_features, dtype=np.float64)) == y))
    return AccuracyResult(acc, chance, acc / chance, int(y.size))


# --------------------------------------------------------------------------- reports

@dataclass
class AttackRecord:
    extractor: str
    dataset: str
    attribute: str
    model: str
    condition: str
    accuracy: float
    chance: float
    lift: float
    split_seeds: list
    label_counts: dict
    n_train: int
    n_test: int
    pooling: str = POOLING

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AttackReport:
    records: list = field(default_factory=list)

    def extend(self, recs):
        self.records.extend(recs)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_jsonl(), encoding="utf-8")
        return path

    @classmethod
    def read(cls, path) -> "AttackReport":
        recs = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                recs.append(AttackRecord(**json.loads(line)))
        return cls(recs)

    def lookup(self, **keys) -> list:
        return [r for r in self.records if all(getattr(r, k) == v for k, v in keys.items())]


def run_attack(table: FeatureTable, attribute: str, specs, seeds=(0,), condition: str = "raw",
               dataset: str = "synthetic") -> list[AttackRecord]:
    """Fit every attacker on seeded 80/20 splits; accuracies are averaged over seeds."""
    if attribute not in table.labels:
        raise PreconditionError(f"unknown attribute {attribute!r}")
    y = np.asarray(table.labels[attribute])
    universe = table.label_sets[attribute]
    index = list(range(len(table.utt_ids)))
    out = []
    for spec in specs:
        accs, n_train, n_test = [], 0, 0
        for seed in seeds:
            a, b = split_80_20(index, SplitSpec(seed=seed))
            att = fit_attacker(spec, table.features[a], y[a], seed)
            keep = [k for k in b if y[k] in att.classes]
            res = infer_accuracy(att, table.features[keep], y[keep], universe)
            accs.append(res.accuracy)
            n_train, n_test = len(a), len(keep)
        acc = float(np.mean(accs))
        chance = chance_level(universe)
        counts = {c: int(np.sum(y == c)) for c in universe}
        out.append(AttackRecord(table.extractor_id, dataset, attribute, spec.kind, condition, acc, chance,
                                acc / chance, list(seeds), counts, n_train, n_test))
    return out


def render_attack_table(records, columns=("dataset", "attribute"), rows="model", fmt="{:.1f}") -> str:
    """Plain-text grid: one row per attacker model, one column per (dataset, attribute)."""
    cols = sorted({tuple(getattr(r, c) for c in columns) for r in records})
    row_keys = [m for m in MODEL_KINDS if any(getattr(r, rows) == m for r in records)]
    row_keys += sorted({getattr(r, rows) for r in records} - set(row_keys))
    header = ["model"] + ["/".join(str(x) for x in c) for c in cols]
    lines = [header]
    for m in row_keys:
        line = [m]
        for c in cols:
            hit = [r for r in records if getattr(r, rows) == m and tuple(getattr(r, k) for k in columns) == c]
            if hit:
                r = hit[0]
                line.append(f"{fmt.format(100 * r.accuracy)}% (x{r.lift:.2f})")
            else:
                line.append("-")
        lines.append(line)
    widths = [max(len(l[i]) for l in lines) for i in range(len(header))]
    return "\n".join("  ".join(cell.ljust(wd) for cell, wd in zip(l, widths)).rstrip() for l in lines) + "\n"
