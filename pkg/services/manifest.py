"""Run manifests: plain `key = value` files validated by a pydantic model."""

import hashlib
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from services.config import TOOL_VERSION
from services.params import DEFAULT_SMALLNESS, ParameterConfig, ParameterTable, TableMode, build_table
from services.scheme import SchemeSettings, TimeProfile
from services.spectral import DEFAULT_SHELL_WIDTH

DESK_MAX_STEPS = 2
_NONE = "none"


class ManifestError(ValueError):
    """Unreadable or invalid manifest."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class RunManifest(BaseModel):
    """Everything a run depends on; two equal manifests give identical outputs."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n: int = 1024
    nt: int = Field(default=24, ge=3)
    beta: float = 0.8
    b: float = 1.2
    a: float = 2.0
    mode: TableMode = TableMode.DESK
    lambdas: Optional[tuple[int, ...]] = (85, 170, 255)
    qmax: int = Field(default=3, ge=2)
    steps: int = Field(default=1, ge=0)
    zeta: Union[Literal["auto"], float] = "auto"
    smallness: float = DEFAULT_SMALLNESS
    shell_width: float = Field(default=DEFAULT_SHELL_WIDTH, gt=0.0, lt=1.0)
    seed: int = 42
    eps: Optional[float] = Field(default=None, gt=0.0)
    M: float = Field(default=1.0, gt=0.0)
    onset: float = Field(default=1.5, gt=1.0)
    duration: float = Field(default=1.0, gt=0.0)
    snapshot_sample: Optional[int] = Field(default=None, ge=0)
    keep_pieces: bool = False

    @field_validator("lambdas", mode="before")
    @classmethod
    def _split_lambdas(cls, value):
        if isinstance(value, str):
            text = value.strip()
            if not text or text.lower() == _NONE:
                return None
            return tuple(int(x) for x in text.split(",") if x.strip())
        return value

    @field_validator("eps", "snapshot_sample", mode="before")
    @classmethod
    def _none_marker(cls, value):
        if isinstance(value, str) and value.strip().lower() in ("", _NONE):
            return None
        return value

    @field_validator("n")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value < 8 or value & (value - 1):
            raise ValueError(f"n must be a power of two >= 8, got {value}")
        return value

    @field_validator("zeta")
    @classmethod
    def _positive_zeta(cls, value):
        if value != "auto" and not value > 0:
            raise ValueError(f"zeta must be 'auto' or positive, got {value}")
        return value

    @model_validator(mode="after")
    def _consistent(self) -> "RunManifest":
        if self.mode is TableMode.RIGOR and self.lambdas is not None:
            raise ValueError("lambdas is only accepted in desk mode")
        if self.mode is TableMode.DESK and self.steps > DESK_MAX_STEPS:
            raise ValueError(f"desk runs allow at most {DESK_MAX_STEPS} steps, got {self.steps}")
        if self.steps > self.qmax - 1:
            raise ValueError(f"steps={self.steps} needs qmax >= {self.steps + 1}")
        if self.snapshot_sample is not None and self.snapshot_sample >= self.nt:
            raise ValueError(f"snapshot_sample {self.snapshot_sample} outside [0, {self.nt})")
        return self

    # -- derived objects --

    def parameter_config(self) -> ParameterConfig:
        return ParameterConfig(a=self.a, b=self.b, beta=self.beta, M=self.M, smallness=self.smallness)

    def table(self) -> ParameterTable:
        return build_table(self.parameter_config(), self.qmax, self.mode, self.lambdas)

    def settings(self) -> SchemeSettings:
        return SchemeSettings(
            eps=self.eps,
            M=self.M,
            width=self.shell_width,
            keep_pieces=self.keep_pieces,
            piece_sample=self.dump_sample,
        )

    def profile(self) -> TimeProfile:
        return TimeProfile(onset=self.onset, duration=self.duration)

    @property
    def dump_sample(self) -> int:
        return self.nt // 2 if self.snapshot_sample is None else self.snapshot_sample

    # -- serialization --

    def to_text(self) -> str:
        lines = []
        for name in type(self).model_fields:
            lines.append(f"{name} = {_format_value(getattr(self, name))}")
        return "\n".join(lines) + "\n"

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def provenance(self) -> dict:
        return {"config_hash": self.config_hash, "tool_version": TOOL_VERSION, "seed": self.seed}


def _format_value(value) -> str:
    if value is None:
        return _NONE
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, TableMode):
        return value.value
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_manifest(text: str) -> RunManifest:
    """
    Parse manifest text.

    Args:
        text: Lines of `key = value`; `#` starts a comment

    Returns:
        The validated RunManifest

    Raises:
        ManifestError: malformed line, duplicate or unknown key, invalid value
    """
    values = {}
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ManifestError(f"line {number}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ManifestError(f"line {number}: duplicate key {key!r}", key=key)
        values[key] = value
    try:
        return RunManifest(**values)
    except ValidationError as e:
        first = e.errors()[0]
        key = str(first["loc"][0]) if first["loc"] else None
        raise ManifestError(f"invalid manifest ({key}): {first['msg']}", key=key) from e


def load_manifest(path: Path) -> RunManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"config file not found: {path}")
    return parse_manifest(path.read_text(encoding="utf-8"))
