"""Experiment configuration: JSON document, schema and cross-field checks."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .aggregate import PoolNormConfig, default_poolnorm
from .encoders import ENCODER_TAGS, EncoderSpec, model_kind
from .errors import ConfigurationError
from .fusion import LEVELS, SCORE_MEANS

CODEBOOK_SIZE_RANGE = (1, 10_000)

_POOLNORM = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "pooling": {"enum": ["sum", "max"]},
        "power_alpha": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "intra": {"enum": ["off", "l1", "l2"]},
        "final_norm": {"enum": ["l1", "l2", "none"]},
        "order": {"enum": ["power-intra", "intra-power"]},
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "bovw experiment",
    "type": "object",
    "additionalProperties": False,
    "required": ["channels", "codebooks", "encoders"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "jobs": {"type": "integer", "minimum": 1},
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"manifest": {"type": "string"}},
        },
        "generate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "benchmark": {"enum": ["standard", "separable"]},
                "seed": {"type": "integer", "minimum": 0},
                "videos_per_class": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "train": {"type": "integer", "minimum": 0},
                        "test": {"type": "integer", "minimum": 0},
                    },
                },
                "descriptors_per_video": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 0},
                    "minItems": 2,
                    "maxItems": 2,
                },
            },
        },
        "channels": {
            "type": "array",
            "minItems": 1,
            "uniqueItems": True,
            "items": {"type": "string", "minLength": 1},
        },
        "preprocess": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "whiten": {"type": "boolean"},
                "output_dims": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 1}},
            },
        },
        "codebooks": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": {
                "type": "object",
                "additionalProperties": False,
                "required": ["type", "size"],
                "properties": {
                    "type": {"enum": ["kmeans", "gmm"]},
                    "size": {
                        "type": "integer",
                        "minimum": CODEBOOK_SIZE_RANGE[0],
                        "maximum": CODEBOOK_SIZE_RANGE[1],
                    },
                    "max_iters": {"type": "integer", "minimum": 1},
                    "sample_budget": {"type": "integer", "minimum": 1},
                },
            },
        },
        "encoders": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["tag", "codebook"],
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "tag": {"enum": list(ENCODER_TAGS)},
                    "codebook": {"type": "string"},
                    "params": {"type": "object"},
                    "poolnorm": _POOLNORM,
                },
            },
        },
        "experiments": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "encoders", "channels"],
                "properties": {
                    "name": {"type": "string", "pattern": "^[A-Za-z0-9_.+-]+$"},
                    "encoders": {"type": "array", "minItems": 1, "items": {"type": "string"}},
                    "channels": {"type": "array", "minItems": 1, "items": {"type": "string"}},
                    "level": {"enum": [lv for lv in LEVELS]},
                    "score_mean": {"enum": list(SCORE_MEANS)},
                },
            },
        },
        "classifier": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "reg_c": {"type": "number", "exclusiveMinimum": 0},
                "epochs": {"type": "integer", "minimum": 1},
            },
        },
    },
}

DEFAULTS = {
    "seed": 0,
    "output": "bovw-run",
    "jobs": 1,
    "dataset": {},
    "preprocess": {"whiten": True, "output_dims": {}},
    "experiments": [],
    "classifier": {"reg_c": 100.0, "epochs": 30},
}


@dataclass(frozen=True)
class EncoderEntry:
    name: str
    spec: EncoderSpec
    codebook: str
    poolnorm: PoolNormConfig


@dataclass(frozen=True)
class Experiment:
    name: str
    encoders: tuple[str, ...]
    channels: tuple[str, ...]
    level: str = "representation"
    score_mean: str = "geometric"


def split_channel(name: str) -> tuple[str, ...]:
    """``"A+B"`` names the descriptor-level fusion of channels A and B."""
    return tuple(name.split("+"))


class ExperimentConfig:
    """Validated experiment configuration.

    ``raw`` keeps the JSON document (with defaults filled in); the typed
    accessors below are what the pipeline uses.
    """

    def __init__(self, doc: dict, base_dir: str | Path = "."):
        try:
            jsonschema.validate(doc, SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path)
            raise ConfigurationError(f"config invalid at '{path}': {exc.message}") from None
        raw = copy.deepcopy(DEFAULTS)
        for k, v in doc.items():
            if isinstance(v, dict) and isinstance(raw.get(k), dict):
                raw[k] = {**raw[k], **v}
            else:
                raw[k] = copy.deepcopy(v)
        self.raw = raw
        self.base_dir = Path(base_dir)
        self.encoders = self._encoders()
        self.experiments = self._experiments()

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls(doc, base_dir=path.parent)

    def _encoders(self) -> dict[str, EncoderEntry]:
        out = {}
        for e in self.raw["encoders"]:
            name = e.get("name", e["tag"])
            if name in out:
                raise ConfigurationError(f"duplicate encoder name {name!r}")
            book = self.raw["codebooks"].get(e["codebook"])
            if book is None:
                raise ConfigurationError(f"encoder {name!r} refers to unknown codebook {e['codebook']!r}")
            need = model_kind(e["tag"])
            if book["type"] != need:
                raise ConfigurationError(
                    f"encoder {name!r} ({e['tag']}) needs a {need} codebook, {e['codebook']!r} is {book['type']}"
                )
            params = dict(e.get("params", {}))
            if "k" in params and params["k"] > book["size"]:
                raise ConfigurationError(f"encoder {name!r}: k={params['k']} exceeds codebook size {book['size']}")
            spec = EncoderSpec(e["tag"], params)
            pn = e.get("poolnorm")
            poolnorm = PoolNormConfig(**pn) if pn is not None else default_poolnorm(e["tag"])
            poolnorm.check_encoder(e["tag"])
            out[name] = EncoderEntry(name, spec, e["codebook"], poolnorm)
        return out

    def _experiments(self) -> list[Experiment]:
        out = []
        seen = set()
        for x in self.raw["experiments"]:
            exp = Experiment(
                name=x["name"],
                encoders=tuple(x["encoders"]),
                channels=tuple(x["channels"]),
                level=x.get("level", "representation"),
                score_mean=x.get("score_mean", "geometric"),
            )
            if exp.name in seen:
                raise ConfigurationError(f"duplicate experiment name {exp.name!r}")
            seen.add(exp.name)
            for enc in exp.encoders:
                if enc not in self.encoders:
                    raise ConfigurationError(f"experiment {exp.name!r} uses unknown encoder {enc!r}")
            for ch in exp.channels:
                if ch not in self.channels:
                    raise ConfigurationError(f"experiment {exp.name!r} uses undeclared channel {ch!r}")
            if exp.level == "descriptor" and not (len(exp.channels) == 1 and "+" in exp.channels[0]):
                raise ConfigurationError(
                    f"experiment {exp.name!r}: descriptor-level fusion takes one fused channel such as 'A+B'"
                )
            out.append(exp)
        return out

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def channels(self) -> tuple[str, ...]:
        return tuple(self.raw["channels"])

    @property
    def base_channels(self) -> tuple[str, ...]:
        seen = dict.fromkeys(c for name in self.channels for c in split_channel(name))
        return tuple(seen)

    @property
    def jobs(self) -> int:
        return self.raw["jobs"]

    @property
    def output(self) -> Path:
        p = Path(self.raw["output"])
        return p if p.is_absolute() else self.base_dir / p

    @property
    def manifest(self) -> Path:
        m = self.raw["dataset"].get("manifest")
        if m is None:
            return self.output / "data" / "manifest.csv"
        p = Path(m)
        return p if p.is_absolute() else self.base_dir / p

    def override(self, seed: int | None = None, jobs: int | None = None, output: str | None = None) -> "ExperimentConfig":
        doc = copy.deepcopy(self.raw)
        if seed is not None:
            doc["seed"] = seed
        if jobs is not None:
            doc["jobs"] = jobs
        if output is not None:
            doc["output"] = str(Path(output).resolve())
        return ExperimentConfig(doc, self.base_dir)

    def stage_hash(self, stage: str) -> str:
        """Short digest of the config sections that determine a stage's outputs."""
        r = self.raw
        parts = {"seed": r["seed"], "channels": r["channels"], "preprocess": r["preprocess"],
                 "codebooks": r["codebooks"], "manifest": str(self.manifest.resolve()),
                 "ltc": [e for e in r["encoders"] if e["tag"] == "ltc"]}
        if stage in ("encode", "train-eval"):
            parts["encoders"] = r["encoders"]
        if stage == "train-eval":
            parts["experiments"] = r["experiments"]
            parts["classifier"] = r["classifier"]
        text = json.dumps(parts, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def standard_benchmark_config(output: str = "bovw-run", seed: int = 0) -> dict:
    """Config for the canonical synthetic benchmark and its comparison grid."""
    experiments = []
    for enc in ("fv", "vq", "vlad-k", "svc-k"):
        for ch in ("A", "B"):
            experiments.append({"name": f"{enc}-{ch}", "encoders": [enc], "channels": [ch]})
        experiments.append({"name": f"{enc}-A_B", "encoders": [enc], "channels": ["A", "B"]})
    experiments += [
        {"name": "fv-A_B-score", "encoders": ["fv"], "channels": ["A", "B"], "level": "score"},
        {"name": "hybrid", "encoders": ["fv-hybrid", "svc-k-hybrid"], "channels": ["A", "B"]},
    ]
    hybrid_pn = {"pooling": "sum", "power_alpha": 0.5, "intra": "l2", "final_norm": "l2"}
    return {
        "seed": seed,
        "output": output,
        "generate": {"benchmark": "standard"},
        "channels": ["A", "B"],
        "preprocess": {"whiten": True},
        "codebooks": {
            "gmm16": {"type": "gmm", "size": 16},
            "km16": {"type": "kmeans", "size": 16},
            "km64": {"type": "kmeans", "size": 64},
        },
        "encoders": [
            {"tag": "fv", "codebook": "gmm16"},
            {"tag": "vq", "codebook": "km64"},
            {"tag": "vlad-k", "codebook": "km16"},
            {"tag": "svc-k", "codebook": "km16"},
            {"name": "fv-hybrid", "tag": "fv", "codebook": "gmm16", "poolnorm": hybrid_pn},
            {"name": "svc-k-hybrid", "tag": "svc-k", "codebook": "km16", "poolnorm": hybrid_pn},
        ],
        "experiments": experiments,
        "classifier": {"reg_c": 100.0, "epochs": 30},
    }
