import json
from fractions import Fraction

import pytest
from helpers import make_record

from dualorch.core import FailureKind, Mode
from dualorch.records import RunlogError, RunRecord, read_runlog, write_runlog


def test_roundtrip(tmp_path, programs, scripted):
    from dualorch.core import RunConfig
    from dualorch.orchestrators import run_deterministic

    real = run_deterministic(programs["SQ101"], RunConfig(seed=4), scripted, run_index=2)
    recs = [make_record(ca=Fraction(2, 3), run_index=1, mode=Mode.AGENTIC, usage=(5, 6)), real]
    path = tmp_path / "runs.jsonl"
    write_runlog(recs, path)
    back = read_runlog(path)
    assert [r.to_dict() for r in back] == [r.to_dict() for r in recs]
    assert back[0].ca == Fraction(2, 3) and back[1].run_id == "SQ101:DETERMINISTIC:2"


def test_record_invariants():
    with pytest.raises(ValueError):
        make_record(ca=Fraction(3, 2))
    rec = make_record()
    with pytest.raises(ValueError):
        RunRecord(**{**vars(rec), "error": FailureKind.TIMEOUT, "successful": True})


def test_mixed_versions_listed(tmp_path):
    good = make_record().to_json()
    bad = json.loads(good)
    bad["schema_version"] = "v0"
    path = tmp_path / "runs.jsonl"
    path.write_text("\n".join([good, json.dumps(bad), "{not json", good]) + "\n")
    with pytest.raises(RunlogError) as exc:
        read_runlog(path)
    assert exc.value.lines == [2, 3]


def test_wall_time_optional():
    d = make_record().to_dict(include_wall_time=False)
    assert "wall_time" not in d and d["schema_version"] == "v1"
