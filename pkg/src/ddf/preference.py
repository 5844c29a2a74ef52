"""Privacy options and the tasks each one permits.

The relation is loaded as data: one ``option,task,value`` record per pair.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType

from ddf.errors import PreconditionError


class PreferenceOption(str, enum.Enum):
    HIGH = "high"
    MODERATE = "moderate"
    LOW = "low"


class TaskId(str, enum.Enum):
    SPEECH_RECOGNITION = "T1"
    SPEAKER_VERIFICATION = "T2"
    OTHER_ATTRIBUTES = "T3"


TASK_ORDER = (TaskId.SPEECH_RECOGNITION, TaskId.SPEAKER_VERIFICATION, TaskId.OTHER_ATTRIBUTES)

DEFAULT_PROFILE_CSV = """option,task,value
high,T1,1
high,T2,0
high,T3,0
moderate,T1,1
moderate,T2,1
moderate,T3,0
low,T1,0
low,T2,0
low,T3,0
"""


@dataclass(frozen=True)
class PreferenceProfile:
    relation: MappingProxyType

    @classmethod
    def from_records(cls, records) -> "PreferenceProfile":
        rel = {}
        for option, task, value in records:
            key = (PreferenceOption(option), TaskId(task))
            if key in rel:
                raise PreconditionError(f"duplicate profile entry for {option},{task}")
            if int(value) not in (0, 1):
                raise PreconditionError(f"profile value must be 0 or 1, got {value!r}")
            rel[key] = int(value)
        for option in PreferenceOption:
            for task in TASK_ORDER:
                if (option, task) not in rel:
                    raise PreconditionError(f"profile lacks an entry for {option.value},{task.value}")
        return cls(MappingProxyType(rel))

    def __getitem__(self, key) -> int:
        option, task = key
        return self.relation[(PreferenceOption(option), TaskId(task))]


def _parse_csv(text: str, source: str) -> PreferenceProfile:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["option", "task", "value"]:
        raise PreconditionError(f"{source}: header must be 'option,task,value'")
    rows = []
    for lineno, row in enumerate(reader, 2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 3:
            raise PreconditionError(f"{source}:{lineno}: expected 3 fields")
        try:
            rows.append((row[0].strip(), row[1].strip(), int(row[2])))
        except ValueError as exc:
            raise PreconditionError(f"{source}:{lineno}: {exc}") from exc
    try:
        return PreferenceProfile.from_records(rows)
    except ValueError as exc:
        raise PreconditionError(f"{source}: {exc}") from exc


def default_profile() -> PreferenceProfile:
    return _parse_csv(DEFAULT_PROFILE_CSV, "<default profile>")


def load_profile(path) -> PreferenceProfile:
    path = Path(path)
    if not path.is_file():
        raise PreconditionError(f"missing profile file: {path}")
    return _parse_csv(path.read_text(encoding="utf-8"), str(path))


def task_set(p, profile: PreferenceProfile | None = None) -> list[TaskId]:
    """Tasks whose representations survive filtering under option ``p``."""
    profile = profile or default_profile()
    p = PreferenceOption(p)
    return [t for t in TASK_ORDER if profile[p, t] == 1]


def is_passthrough(p, profile: PreferenceProfile | None = None) -> bool:
    return not task_set(p, profile)
