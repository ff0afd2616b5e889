"""Declarative run configuration: one TOML file drives every subcommand.

CLI flags can override individual keys with dotted paths ("sampling.seed=7").
The effective configuration is hashed (canonical JSON, sha256, 12 hex chars)
and that hash is embedded in every output file so mixed-provenance inputs are
detectable later.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .branching import BranchingConfig
from .controller import ControllerConfig, TemplatePolicy
from .errors import ConfigError

BACKEND_KINDS = ("mock", "http")


@dataclass(frozen=True)
class BackendSettings:
    base_url: str = ""
    model_id: str = "mock-model"
    auth_env_var: str = ""
    kind: str = "mock"
    mock_script: str = ""
    thinking: bool = True  # picks which token budget applies to decoding


@dataclass(frozen=True)
class SamplingSettings:
    temperature: float = 1.0
    top_p: float = 0.95
    n_passes: int = 10
    seed: int = 0


@dataclass(frozen=True)
class Budgets:
    instruct_max: int = 16384
    thinking_max: int = 32768


@dataclass(frozen=True)
class ProbeSettings:
    q_p_quantile: float = 0.90
    q_c_quantile: float = 0.50
    q_g_quantile: float = 0.10
    bins: int = 50
    # Manual absolute thresholds; when set they bypass quantile estimation.
    q_p: Optional[float] = None
    q_c: Optional[float] = None
    q_g: Optional[float] = None
    max_trace_tokens: Optional[int] = None  # cap very long traces, flagged


@dataclass(frozen=True)
class MiningSettings:
    pause_n_min: int = 1
    pause_n_max: int = 6
    template_n_min: int = 3
    template_n_max: int = 10
    min_support: int = 5
    min_enrichment: float = 4.0
    use_fallback_template: bool = True


@dataclass(frozen=True)
class PathSettings:
    questions: str = "questions.jsonl"
    traces: str = "traces.jsonl"
    vocab: str = "vocab.json"
    reports: str = "reports"


@dataclass(frozen=True)
class ReportSettings:
    ours: str = ""
    original: str = ""
    first_pass_only: bool = False


@dataclass(frozen=True)
class RunConfig:
    backend: BackendSettings = field(default_factory=BackendSettings)
    sampling: SamplingSettings = field(default_factory=SamplingSettings)
    budgets: Budgets = field(default_factory=Budgets)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    branching: BranchingConfig = field(default_factory=BranchingConfig)
    probe: ProbeSettings = field(default_factory=ProbeSettings)
    mining: MiningSettings = field(default_factory=MiningSettings)
    paths: PathSettings = field(default_factory=PathSettings)
    report: ReportSettings = field(default_factory=ReportSettings)

    def decode_budget(self) -> int:
        return (self.budgets.thinking_max if self.backend.thinking
                else self.budgets.instruct_max)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["controller"]["template_policy"] = self.controller.template_policy.value
        out["controller"]["answer_markers"] = list(self.controller.answer_markers)
        return out


def config_hash(config: RunConfig) -> str:
    """Short hash of every value-affecting setting.

    Storage paths are excluded: pointing the same run at a different file
    must not look like a different experiment, or resuming and report
    mixing would break on cosmetic path spelling.
    """
    data = config.to_dict()
    data.pop("paths", None)
    data["report"].pop("ours", None)
    data["report"].pop("original", None)
    data["backend"].pop("mock_script", None)
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def _parse_override_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except ValueError:
        return raw


def apply_overrides(data: dict[str, Any], overrides: Sequence[str]) -> dict[str, Any]:
    """Apply "section.key=value" strings on top of the parsed TOML dict."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        dotted, raw = item.split("=", 1)
        parts = dotted.strip().split(".")
        if not all(parts):
            raise ConfigError(f"bad override path: {dotted!r}")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {dotted!r} crosses a scalar")
        node[parts[-1]] = _parse_override_value(raw.strip())
    return data


def _section(data: Mapping[str, Any], name: str) -> dict[str, Any]:
    value = data.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"config section [{name}] must be a table")
    return dict(value)


def _build(cls, section: dict[str, Any], name: str):
    known = {f for f in cls.__dataclass_fields__}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [{name}] section: {exc}") from exc


def build_config(data: Mapping[str, Any], base_dir: Optional[Path] = None) -> RunConfig:
    data = dict(data)
    controller_raw = _section(data, "controller")
    if "template_policy" in controller_raw:
        try:
            controller_raw["template_policy"] = TemplatePolicy(
                controller_raw["template_policy"])
        except ValueError as exc:
            raise ConfigError(f"unknown template_policy: {exc}") from exc
    if "answer_markers" in controller_raw:
        controller_raw["answer_markers"] = tuple(controller_raw["answer_markers"])

    config = RunConfig(
        backend=_build(BackendSettings, _section(data, "backend"), "backend"),
        sampling=_build(SamplingSettings, _section(data, "sampling"), "sampling"),
        budgets=_build(Budgets, _section(data, "budgets"), "budgets"),
        controller=_build(ControllerConfig, controller_raw, "controller"),
        branching=_build(BranchingConfig, _section(data, "branching"), "branching"),
        probe=_build(ProbeSettings, _section(data, "probe"), "probe"),
        mining=_build(MiningSettings, _section(data, "mining"), "mining"),
        paths=_build(PathSettings, _section(data, "paths"), "paths"),
        report=_build(ReportSettings, _section(data, "report"), "report"),
    )
    validate_config(config)
    if base_dir is not None:
        config = _resolve_paths(config, base_dir)
    return config


def _resolve(base: Path, value: str) -> str:
    if not value:
        return value
    path = Path(value)
    return str(path if path.is_absolute() else base / path)


def _resolve_paths(config: RunConfig, base: Path) -> RunConfig:
    from dataclasses import replace

    paths = PathSettings(
        questions=_resolve(base, config.paths.questions),
        traces=_resolve(base, config.paths.traces),
        vocab=_resolve(base, config.paths.vocab),
        reports=_resolve(base, config.paths.reports),
    )
    report = ReportSettings(
        ours=_resolve(base, config.report.ours),
        original=_resolve(base, config.report.original),
        first_pass_only=config.report.first_pass_only,
    )
    backend = replace(config.backend,
                      mock_script=_resolve(base, config.backend.mock_script))
    return replace(config, paths=paths, report=report, backend=backend)


def validate_config(config: RunConfig) -> None:
    if config.backend.kind not in BACKEND_KINDS:
        raise ConfigError(
            f"backend.kind must be one of {BACKEND_KINDS}, got {config.backend.kind!r}"
        )
    if config.backend.kind == "http" and not config.backend.base_url:
        raise ConfigError("backend.kind = 'http' requires backend.base_url")
    if config.backend.kind == "mock" and not config.backend.mock_script:
        raise ConfigError("backend.kind = 'mock' requires backend.mock_script")
    if config.sampling.n_passes < 1:
        raise ConfigError(f"n_passes must be >= 1, got {config.sampling.n_passes}")
    if config.sampling.temperature < 0:
        raise ConfigError("temperature must be >= 0")
    if not 0 < config.sampling.top_p <= 1:
        raise ConfigError("top_p must be in (0, 1]")
    if config.budgets.instruct_max <= 0 or config.budgets.thinking_max <= 0:
        raise ConfigError("token budgets must be > 0")
    for name in ("questions", "traces", "vocab", "reports"):
        if not getattr(config.paths, name):
            raise ConfigError(f"paths.{name} must be set")
    for name, q in (("q_p_quantile", config.probe.q_p_quantile),
                    ("q_c_quantile", config.probe.q_c_quantile),
                    ("q_g_quantile", config.probe.q_g_quantile)):
        if not 0 < q < 1:
            raise ConfigError(f"probe.{name} must be in (0, 1), got {q}")
    if config.probe.bins < 2:
        raise ConfigError("probe.bins must be >= 2")
    if config.mining.min_support < 1:
        raise ConfigError("mining.min_support must be >= 1")
    if config.mining.min_enrichment <= 0:
        raise ConfigError("mining.min_enrichment must be > 0")
    for lo, hi, label in ((config.mining.pause_n_min, config.mining.pause_n_max, "pause"),
                          (config.mining.template_n_min, config.mining.template_n_max,
                           "template")):
        if lo < 1 or hi < lo:
            raise ConfigError(f"mining {label} n-gram range [{lo}, {hi}] is invalid")


def load_config(path: str | Path, overrides: Sequence[str] = ()) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
    data = apply_overrides(data, overrides)
    return build_config(data, base_dir=path.resolve().parent)
