"""Aggregate a run directory into one report, and render result tables."""

from __future__ import annotations

import json
from pathlib import Path

from ddf.attack import AttackRecord, AttackReport, render_attack_table
from ddf.errors import IncompleteRunError, PreconditionError

CONDITIONS = ("raw", "high", "moderate")
ATTACK_FILE = "attack.jsonl"
EVAL_FILE = "eval.json"
REPORT_FORMAT = 1

WER_NOTE = ("token error rate (WER-analog): tokens recovered from audio by dominant-frequency decoding "
            "against the known synthetic transcript; relative_wer is the change from the raw condition. "
            "Whether published WER figures are absolute or relative to raw audio is ambiguous, so both are kept.")


def _check_record(r: AttackRecord):
    if r.chance is None or r.lift is None:
        raise PreconditionError(f"malformed attack record without chance/lift: {r}")


def build_report(run_dir) -> dict:
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise IncompleteRunError([str(run_dir)])
    missing = [name for name in (ATTACK_FILE, EVAL_FILE) if not (run_dir / name).is_file()]
    if missing:
        raise IncompleteRunError(missing)
    attacks = AttackReport.read(run_dir / ATTACK_FILE)
    ev = json.loads((run_dir / EVAL_FILE).read_text(encoding="utf-8"))
    conditions = ev.get("conditions", {})
    gaps = [c for c in CONDITIONS if c not in conditions]
    if gaps:
        raise IncompleteRunError([f"{EVAL_FILE}:{c}" for c in gaps])
    for r in attacks.records:
        _check_record(r)
    out = {"format": REPORT_FORMAT, "conditions": {}, "provenance": ev.get("provenance", {}),
           "metadata": {"wer_metric": WER_NOTE, "pooling": "mean",
                        "eer_high": "not applicable: the identity is replaced"}}
    for c in CONDITIONS:
        recs = sorted((r.to_dict() for r in attacks.lookup(condition=c)),
                      key=lambda d: (d["extractor"], d["dataset"], d["attribute"], d["model"]))
        out["conditions"][c] = {**conditions[c], "attacks": recs}
    extra = sorted({r.condition for r in attacks.records} - set(CONDITIONS))
    for c in extra:
        out["conditions"][c] = {"attacks": [r.to_dict() for r in attacks.lookup(condition=c)]}
    out["tables"] = {
        "attack_by_condition": render_attack_table(attacks.records, columns=("dataset", "attribute", "condition")),
    }
    return out


def write_report(run_dir, out) -> Path:
    report = build_report(run_dir)
    out = Path(out)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def render_utility_table(rows) -> str:
    """Rows of {dataset, condition, wer, eer} (percent values) -> text table."""
    header = ["dataset", "condition", "WER (%)", "EER (%)"]
    lines = [header]
    for r in rows:
        eer = "N/A" if r.get("eer") is None else f"{r['eer']:.2f}"
        lines.append([r["dataset"], r["condition"], f"{r['wer']:.2f}", eer])
    widths = [max(len(l[i]) for l in lines) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(l, widths)).rstrip() for l in lines) + "\n"


def attack_rows_from_fixture(rows) -> list[AttackRecord]:
    """Stored {model, extractor, dataset, attribute, accuracy, num_classes} rows -> records."""
    out = []
    for r in rows:
        chance = 1.0 / r["num_classes"]
        acc = r["accuracy"]
        out.append(AttackRecord(r["extractor"], r["dataset"], r["attribute"], r["model"],
                                r.get("condition", "raw"), acc, chance, acc / chance, [], {}, 0, 0))
    return out
