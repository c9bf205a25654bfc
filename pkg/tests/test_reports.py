"""Tests for CSV tables, the geometry audit and the run session ledger."""

import json

import pandas as pd
import pytest

from services.geometry import build_direction_sets, verify_direction_sets
from services.params import ParameterConfig, build_table, check_all
from services.reports import (
    INEQUALITY_COLUMNS,
    THRESHOLD_COLUMNS,
    export_dat,
    frame_to_dat,
    geometry_audit_text,
    inequality_frame,
    threshold_frame,
    write_csv,
)
from services.session import RunSession, StageStatus

CONFIG = ParameterConfig(beta=0.8, b=1.2, a=1e50, smallness=0.1)


@pytest.fixture(scope="module")
def reports():
    return check_all(build_table(CONFIG, qmax=6), CONFIG)


# ============ Tables ============

def test_inequality_frame(reports):
    frame = inequality_frame(reports)
    assert list(frame.columns) == INEQUALITY_COLUMNS
    assert len(frame) == 9 * len(reports)
    assert frame["holds"].all()


def test_threshold_frame(reports):
    frame = threshold_frame(reports[0])
    assert list(frame.columns) == THRESHOLD_COLUMNS
    assert set(frame["name"]) >= {"T1", "T4", "T6"}


def test_csv_is_deterministic(tmp_path, reports):
    first = write_csv(inequality_frame(reports), tmp_path / "a" / "inequalities.csv")
    second = write_csv(inequality_frame(reports), tmp_path / "b" / "inequalities.csv")
    assert first.read_bytes() == second.read_bytes()
    assert b"\r\n" not in first.read_bytes()


def test_dat_columns():
    frame = pd.DataFrame({"name": ["x", "y"], "value": [0.5, 2.0], "pass": [True, False]})
    text = frame_to_dat(frame)
    lines = text.splitlines()
    assert lines[0] == "# name value pass"
    assert lines[1] == "x 0.5 1"
    assert lines[2] == "y 2 0"


def test_export_dat(tmp_path, reports):
    write_csv(inequality_frame(reports), tmp_path / "inequalities.csv")
    write_csv(threshold_frame(reports[0]), tmp_path / "sub" / "thresholds.csv")
    written = export_dat(tmp_path)
    assert sorted(p.name for p in written) == ["inequalities.dat", "thresholds.dat"]
    with pytest.raises(FileNotFoundError):
        export_dat(tmp_path / "missing")


def test_geometry_audit_text():
    sets = build_direction_sets()
    text = geometry_audit_text(sets, verify_direction_sets(sets))
    assert "min |k+k'|² = 242/425" in text
    assert "24 direction vectors, 0 failed checks" in text
    assert "FAIL" not in text


# ============ Session ============

def _session():
    session = RunSession(config_hash="abc123", tool_version="1.0.0", seed=42, manifest_text="seed = 42\n")
    session.add_stage("parameters", flags={"holds": True}, measurements={"ratio": 0.5})
    session.add_stage("iterate", q=0, flags={"cancellation_exact": True}, measurements={"richardson": float("nan")})
    return session


def test_session_passes_when_every_flag_holds():
    session = _session()
    assert session.passed
    assert session.failed_flags() == []
    assert "=== Result: PASS ===" in session.get_transcript_text()


def test_failed_flag_and_error():
    session = _session()
    session.add_stage("swap", q=0, flags={"double_swap_identity": False})
    session.fail_stage("scalar", ValueError("bad grid"), q=1)
    assert not session.passed
    assert session.stages[-2].status is StageStatus.FAILED
    assert session.stages[-1].status is StageStatus.ERROR
    assert session.failed_flags() == ["swap/double_swap_identity", "scalar: ValueError: bad grid"]


def test_summary_json_is_stable():
    text = _session().summary_json()
    assert text == _session().summary_json()
    data = json.loads(text)
    assert data["config_hash"] == "abc123"
    assert data["stages"][1]["measurements"]["richardson"] == "nan"
    assert list(data) == sorted(data)


def test_empty_session_does_not_pass():
    assert not RunSession(config_hash="x", tool_version="1.0.0", seed=0).passed
