"""Pipeline configuration: one JSON document holding every module's settings."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .annotation import DEFAULT_EMBED_DIM
from .fusion import FusionConfig
from .ingest import DEFAULT_TAU_CONF
from .labeling import LabelConfig
from .planes import PlaneDetectConfig
from .retrieval import DEFAULT_K, DEFAULT_TAU

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotationConfig:
    embed_dim: int = DEFAULT_EMBED_DIM
    timeout_s: float = 30.0

    def __post_init__(self):
        if self.embed_dim < 1 or not self.timeout_s > 0:
            raise ValueError("AnnotationConfig: embed_dim >= 1 and timeout_s > 0 required")


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = DEFAULT_K
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if self.k < 1 or not self.tau > 0:
            raise ValueError("RetrievalConfig: k >= 1 and tau > 0 required")


@dataclass(frozen=True)
class PipelineConfig:
    rng_seed: int = 0
    tau_conf: float = DEFAULT_TAU_CONF
    prior_up: tuple[float, float, float] | None = None
    planes: PlaneDetectConfig = field(default_factory=PlaneDetectConfig)
    labels: LabelConfig = field(default_factory=LabelConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    annotation: AnnotationConfig = field(default_factory=AnnotationConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)

    @property
    def plane_config(self) -> PlaneDetectConfig:
        """Plane settings with the global seed applied."""
        return dataclasses.replace(self.planes, rng_seed=self.rng_seed)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["planes"].pop("rng_seed")
        d["planes"]["theta_ang_deg"] = math.degrees(d["planes"].pop("theta_ang"))
        d["prior_up"] = None if self.prior_up is None else list(self.prior_up)
        return {"version": CONFIG_VERSION, **d}

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        doc = dict(doc)
        version = doc.pop("version", None)
        if version != CONFIG_VERSION:
            raise ConfigError(f"config version must be {CONFIG_VERSION}, got {version!r}")
        top = {"rng_seed", "tau_conf", "prior_up", "planes", "labels", "fusion", "annotation", "retrieval"}
        _reject_unknown(doc, top, "config")
        kwargs = {}
        if "rng_seed" in doc:
            kwargs["rng_seed"] = int(doc["rng_seed"])
        if "tau_conf" in doc:
            kwargs["tau_conf"] = float(doc["tau_conf"])
        if doc.get("prior_up") is not None:
            up = doc["prior_up"]
            if not isinstance(up, list) or len(up) != 3:
                raise ConfigError("config.prior_up must be a list of 3 numbers")
            kwargs["prior_up"] = tuple(float(v) for v in up)
        planes = dict(doc.get("planes", {}))
        if "theta_ang_deg" in planes:
            planes["theta_ang"] = math.radians(float(planes.pop("theta_ang_deg")))
        sections = {"planes": (PlaneDetectConfig, planes), "labels": (LabelConfig, doc.get("labels", {})),
                    "fusion": (FusionConfig, doc.get("fusion", {})),
                    "annotation": (AnnotationConfig, doc.get("annotation", {})),
                    "retrieval": (RetrievalConfig, doc.get("retrieval", {}))}
        for name, (klass, values) in sections.items():
            if not isinstance(values, dict):
                raise ConfigError(f"config.{name} must be an object")
            allowed = {f.name for f in dataclasses.fields(klass)} - {"rng_seed"}
            _reject_unknown(values, allowed, f"config.{name}")
            try:
                kwargs[name] = klass(**values)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config.{name}: {exc}") from exc
        return cls(**kwargs)

    def with_overrides(self, **flat) -> "PipelineConfig":
        """Apply flag overrides given as ``section__field=value`` or top-level names."""
        cfg = self
        for key, value in flat.items():
            if value is None:
                continue
            if "__" in key:
                section, name = key.split("__", 1)
                cfg = dataclasses.replace(cfg, **{section: dataclasses.replace(getattr(cfg, section), **{name: value})})
            else:
                cfg = dataclasses.replace(cfg, **{key: value})
        return cfg


def _reject_unknown(values: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(values) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {', '.join(unknown)}")


def load_config(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {p}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    return PipelineConfig.from_dict(doc)
