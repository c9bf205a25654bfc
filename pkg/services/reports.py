"""CSV tables, the geometry audit text and gnuplot columns."""

import logging
from dataclasses import asdict
from pathlib import Path
from typing import Iterable

import pandas as pd

from services.geometry import DENOMINATOR, DirectionSet, GammaSolver, GeometryCheck, min_pair_norm
from services.params import InequalityReport
from templates.report_templates import (
    CHECK_LINE_TEMPLATE,
    DECOMPOSITION_LINE_TEMPLATE,
    FAMILY_BLOCK_TEMPLATE,
    GEOMETRY_AUDIT_TEMPLATE,
    VECTOR_LINE_TEMPLATE,
)

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

INEQUALITY_COLUMNS = ["name", "q", "lhs", "rhs", "ratio", "holds", "diagnostic"]
THRESHOLD_COLUMNS = ["name", "value", "beta", "margin", "kind", "holds"]
NORM_COLUMNS = ["component", "norm", "value", "threshold", "pass"]


# ============ Tables ============

def inequality_frame(reports: Iterable[InequalityReport]) -> pd.DataFrame:
    rows = [asdict(r) for report in reports for r in report.records]
    return pd.DataFrame(rows, columns=INEQUALITY_COLUMNS)


def threshold_frame(report: InequalityReport) -> pd.DataFrame:
    return pd.DataFrame([asdict(t) for t in report.thresholds], columns=THRESHOLD_COLUMNS)


def norm_frame(breakdown) -> pd.DataFrame:
    rows = [
        {"component": r.component, "norm": r.norm, "value": r.value, "threshold": r.threshold, "pass": r.passed}
        for r in breakdown.rows
    ]
    return pd.DataFrame(rows, columns=NORM_COLUMNS)


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    """Write with 17 significant digits; equal frames give equal bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.debug("wrote %s (%d rows)", path, len(frame))
    return path


# ============ Geometry audit ============

def geometry_audit_text(sets: dict[tuple[int, int], DirectionSet], checks: list[GeometryCheck]) -> str:
    families, decompositions = [], []
    count = 0
    for tag in sorted(sets):
        s = sets[tag]
        vectors = []
        for k in s.members:
            nx, ny = k.integer_point
            vectors.append(VECTOR_LINE_TEMPLATE.format(nx=nx, ny=ny, denominator=DENOMINATOR))
        count += len(s.members)
        families.append(FAMILY_BLOCK_TEMPLATE.format(label=s.label, vectors="\n".join(vectors)))
        try:
            coefficients = GammaSolver(s).identity_coefficients
            terms = " + ".join(f"{c}·{k.perp}⊗{k.perp}" for c, k in zip(coefficients, s.representatives))
        except ValueError as e:
            terms = f"singular ({e})"
        decompositions.append(DECOMPOSITION_LINE_TEMPLATE.format(label=s.label, terms=terms))

    lines = [
        CHECK_LINE_TEMPLATE.format(
            mark="ok" if c.passed else "FAIL",
            name=c.name,
            detail=f": {c.detail}" if c.detail else "",
        )
        for c in checks
    ]
    global_min = min(min_pair_norm(s) for s in sets.values())
    return GEOMETRY_AUDIT_TEMPLATE.format(
        denominator=DENOMINATOR,
        families="\n".join(families),
        decompositions="\n".join(decompositions),
        checks="\n".join(lines),
        global_min=global_min,
        count=count,
        failed=sum(not c.passed for c in checks),
    )


# ============ Gnuplot export ============

def frame_to_dat(frame: pd.DataFrame) -> str:
    """Whitespace-separated columns with a `#` header; booleans as 0/1."""
    out = frame.copy()
    for column in out.columns:
        if out[column].dtype == bool:
            out[column] = out[column].astype(int)
    body = out.to_csv(sep=" ", index=False, header=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return "# " + " ".join(str(c) for c in frame.columns) + "\n" + body


def export_dat(run_dir: Path) -> list[Path]:
    """Write a .dat companion next to every CSV of a run directory."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory not found: {run_dir}")
    written = []
    for csv_path in sorted(run_dir.rglob("*.csv")):
        frame = pd.read_csv(csv_path)
        target = csv_path.with_suffix(".dat")
        target.write_text(frame_to_dat(frame), encoding="utf-8")
        written.append(target)
    logger.info("exported %d gnuplot tables from %s", len(written), run_dir)
    return written
