"""Run session: the ordered stage ledger of a batch run and its summary."""

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from templates.report_templates import RUN_TRANSCRIPT_TEMPLATE, STAGE_BLOCK_TEMPLATE


class StageStatus(Enum):
    PASSED = "passed"
    FAILED = "failed"
    ERROR = "error"


@dataclass
class StageRecord:
    """One stage of a run with its flags and measured constants."""
    name: str
    q: Optional[int] = None
    flags: dict[str, bool] = field(default_factory=dict)
    measurements: dict[str, float] = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def status(self) -> StageStatus:
        if self.error is not None:
            return StageStatus.ERROR
        return StageStatus.PASSED if all(self.flags.values()) else StageStatus.FAILED

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "q": self.q,
            "status": self.status.value,
            "flags": dict(self.flags),
            "measurements": {k: _json_float(v) for k, v in self.measurements.items()},
            "error": self.error,
        }


def _json_float(value):
    # NaN/inf are not JSON
    value = float(value)
    return value if value == value and abs(value) != float("inf") else str(value)


@dataclass
class RunSession:
    """Stage ledger of one run; nothing time-dependent enters its outputs."""
    config_hash: str
    tool_version: str
    seed: int
    manifest_text: str = ""
    stages: list[StageRecord] = field(default_factory=list)

    def add_stage(
        self,
        name: str,
        q: Optional[int] = None,
        flags: Optional[dict] = None,
        measurements: Optional[dict] = None,
    ) -> StageRecord:
        stage = StageRecord(name=name, q=q, flags=dict(flags or {}), measurements=dict(measurements or {}))
        self.stages.append(stage)
        return stage

    def fail_stage(self, name: str, error: Exception, q: Optional[int] = None) -> StageRecord:
        stage = StageRecord(name=name, q=q, error=f"{type(error).__name__}: {error}")
        self.stages.append(stage)
        return stage

    @property
    def passed(self) -> bool:
        return bool(self.stages) and all(s.status is StageStatus.PASSED for s in self.stages)

    def failed_flags(self) -> list[str]:
        out = []
        for s in self.stages:
            if s.error is not None:
                out.append(f"{s.name}: {s.error}")
            out.extend(f"{s.name}/{name}" for name, ok in s.flags.items() if not ok)
        return out

    def summary(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "seed": self.seed,
            "passed": self.passed,
            "stages": [s.to_dict() for s in self.stages],
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def get_transcript_text(self) -> str:
        """Plain-text transcript of every stage."""
        blocks = []
        for s in self.stages:
            lines = [f"  [{'ok' if ok else 'FAIL'}] {name}" for name, ok in s.flags.items()]
            lines += [f"  {name} = {value:.17g}" for name, value in s.measurements.items()]
            if s.error:
                lines.append(f"  error: {s.error}")
            blocks.append(
                STAGE_BLOCK_TEMPLATE.format(
                    name=s.name,
                    q="-" if s.q is None else s.q,
                    status=s.status.value,
                    lines="\n".join(lines),
                )
            )
        return RUN_TRANSCRIPT_TEMPLATE.format(
            config_hash=self.config_hash,
            tool_version=self.tool_version,
            seed=self.seed,
            manifest=self.manifest_text.rstrip(),
            stages="\n".join(blocks),
            verdict="PASS" if self.passed else "FAIL",
        )
