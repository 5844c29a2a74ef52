import pytest

from ddf.errors import PreconditionError
from ddf.preference import (PreferenceOption, TaskId, default_profile, is_passthrough, load_profile,
                            task_set)

T1, T2 = TaskId.SPEECH_RECOGNITION, TaskId.SPEAKER_VERIFICATION


def test_default_relation():
    assert task_set("high") == [T1]
    assert task_set("moderate") == [T1, T2]
    assert task_set("low") == []


def test_passthrough_flags():
    assert is_passthrough(PreferenceOption.LOW)
    assert not is_passthrough("high")
    assert not is_passthrough("moderate")


def test_every_pair_is_defined():
    prof = default_profile()
    for o in PreferenceOption:
        for t in TaskId:
            assert prof[o, t] in (0, 1)
    assert prof["high", "T3"] == 0


def test_profile_file_roundtrip(tmp_path):
    p = tmp_path / "prof.csv"
    rows = ["option,task,value"] + [f"{o.value},{t.value},{int(o.value != 'low' and t == T1)}"
                                    for o in PreferenceOption for t in TaskId]
    p.write_text("\n".join(rows) + "\n")
    prof = load_profile(p)
    assert task_set("moderate", prof) == [T1]


@pytest.mark.parametrize("body, match", [
    ("option,task,value\nhigh,T1,1\n", "lacks an entry"),
    ("option,task,value\nhigh,T1,2\n", "0 or 1"),
    ("opt,task,value\n", "header"),
    ("option,task,value\nhigh,T1,1\nhigh,T1,1\n", "duplicate"),
    ("option,task,value\nhigh,T1\n", "3 fields"),
])
def test_bad_profiles(tmp_path, body, match):
    p = tmp_path / "p.csv"
    p.write_text(body)
    with pytest.raises(PreconditionError, match=match):
        load_profile(p)


def test_missing_profile_file(tmp_path):
    with pytest.raises(PreconditionError, match="missing profile"):
        load_profile(tmp_path / "none.csv")


def test_unknown_option():
    with pytest.raises(ValueError):
        task_set("extreme")
