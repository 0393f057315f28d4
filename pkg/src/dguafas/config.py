"""Experiment configuration: YAML in, validated dataclasses out.

Every config is checked against ``CONFIG_SCHEMA`` before any work starts, so
unknown keys and wrong types fail fast with the offending key in the message.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema
import yaml

from .backbone import ArchitectureSpec
from .datagen import DataConfig, ProtocolSpec, MODES
from .errors import SchemaError
from .trainer import TrainConfig

OUTPUT_DIR_ENV = "DGUAFAS_OUTPUT_DIR"


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads ``1e-4`` (no dot) as a float, as YAML 1.2 does."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*(?:\.[0-9_]*)?|\.[0-9_]+)[eE][-+]?[0-9]+$"),
    list("-+0123456789."),
)

_int = {"type": "integer"}
_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_nonneg = {"type": "number", "minimum": 0}
_unit = {"type": "number", "minimum": 0, "maximum": 1}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "dguafas experiment",
    "type": "object",
    "additionalProperties": False,
    "required": ["dataset", "protocol", "output_dir"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string", "minLength": 1},
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "minProperties": 1,
            "maxProperties": 1,
            "properties": {
                "generate": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "input_dim": _pos_int,
                        "n_domains": {"type": "integer", "minimum": 2},
                        "n_known": _pos_int,
                        "n_unknown": {"type": "integer", "minimum": 0},
                        "n_per_cell": _pos_int,
                        "radius": {"type": "number", "exclusiveMinimum": 0},
                        "class_sigma": _nonneg,
                        "noise_sigma": {"type": "number", "exclusiveMinimum": 0},
                        "domain_shift": _nonneg,
                    },
                },
                "feature_file": {"type": "string", "minLength": 1},
            },
        },
        "protocol": {
            "type": "object",
            "additionalProperties": False,
            "required": ["mode", "test_domain"],
            "properties": {
                "mode": {"enum": list(MODES)},
                "train_domains": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "test_domain": {"type": "integer", "minimum": 0},
                "known_k": _pos_int,
                "unknown_classes": {"type": "array", "items": {"type": "integer", "minimum": 1}},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": {"type": "integer", "minimum": 0},
                "batch_size": _pos_int,
                "lr": _nonneg,
                "weight_decay": _nonneg,
                "lam": _nonneg,
                "alpha_id": _unit,
                "alpha_ood": _unit,
                "decay_bias": {"type": "boolean"},
                "architecture": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "group_widths": {
                            "type": "array",
                            "minItems": 2,
                            "items": {"type": "array", "minItems": 1, "items": _pos_int},
                        },
                        "embed_dim": _pos_int,
                    },
                },
            },
        },
        "ablation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"use_sid": {"type": "boolean"}, "use_sood": {"type": "boolean"}},
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"threshold": {"type": ["number", "null"], "minimum": 0, "maximum": 1}},
        },
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: ProtocolSpec
    train: TrainConfig
    output_dir: Path
    data: DataConfig | None = None
    feature_file: Path | None = None
    threshold: float | None = None
    seed: int = 0
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def ablation(self) -> tuple[bool, bool]:
        return self.train.use_sid, self.train.use_sood

    def resolved(self) -> dict:
        """Fully explicit config; feeding it back through ``from_dict`` gives the same experiment."""
        out = {"seed": self.seed, "output_dir": str(self.output_dir)}
        if self.feature_file is not None:
            out["dataset"] = {"feature_file": str(self.feature_file)}
        else:
            d = self.data.to_dict()
            out["dataset"] = {"generate": {k: d[k] for k in CONFIG_SCHEMA["properties"]["dataset"]["properties"]["generate"]["properties"]}}
        out["protocol"] = self.protocol.to_dict()
        t = self.train.to_dict()
        out["train"] = {k: t[k] for k in ("epochs", "batch_size", "lr", "weight_decay", "lam", "alpha_id", "alpha_ood", "decay_bias")}
        out["train"]["architecture"] = {
            "group_widths": t["architecture"]["group_widths"],
            "embed_dim": t["architecture"]["embed_dim"],
        }
        out["ablation"] = {"use_sid": self.train.use_sid, "use_sood": self.train.use_sood}
        out["eval"] = {"threshold": self.threshold}
        return out

    def experiment_hash(self) -> str:
        """Git-style blob hash of the resolved config minus the output location."""
        d = self.resolved()
        d.pop("output_dir")
        return git_blob_hash(canonical_json(d).encode())

    def with_seed(self, seed: int) -> "ExperimentConfig":
        data = None if self.data is None else replace(self.data, seed=seed)
        return replace(self, seed=seed, data=data, train=replace(self.train, seed=seed))

    def with_ablation(self, use_sid: bool, use_sood: bool) -> "ExperimentConfig":
        return replace(self, train=replace(self.train, use_sid=use_sid, use_sood=use_sood))

    def with_protocol(self, protocol: ProtocolSpec) -> "ExperimentConfig":
        return replace(self, protocol=protocol)

    def with_output_dir(self, path) -> "ExperimentConfig":
        return replace(self, output_dir=Path(path))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _path_of(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def validate(doc) -> None:
    """Raise SchemaError listing every violation, each prefixed by its key path."""
    if not isinstance(doc, dict):
        raise SchemaError("config must be a mapping at the top level")
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        lines = []
        for err in errors:
            if err.validator == "required":
                missing = [k for k in err.validator_value if k not in err.instance]
                where = _path_of(err)
                lines += [f"missing required key '{k}'" + ("" if where == "<root>" else f" in '{where}'") for k in missing]
            elif err.validator == "additionalProperties":
                extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
                lines += [f"unknown key '{k}' in '{_path_of(err)}'" for k in extra]
            else:
                lines.append(f"{_path_of(err)}: {err.message}")
        raise SchemaError("invalid config:\n  " + "\n  ".join(lines))


def from_dict(doc: dict, base_dir=None, output_dir=None) -> ExperimentConfig:
    """Validate and resolve a config mapping.

    Relative feature-file paths resolve against ``base_dir``. The output
    directory comes from ``output_dir`` if given, else ``$DGUAFAS_OUTPUT_DIR``,
    else the config.
    """
    validate(doc)
    doc = copy.deepcopy(doc)
    seed = doc.get("seed", 0)
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()

    data, feature_file = None, None
    ds = doc["dataset"]
    if "feature_file" in ds:
        feature_file = Path(ds["feature_file"])
        if not feature_file.is_absolute():
            feature_file = (base_dir / feature_file).resolve()
    else:
        data = DataConfig(**ds["generate"], seed=seed)
        if data.n_known + 2 > data.input_dim:
            raise SchemaError(f"dataset.generate.input_dim={data.input_dim} is too small for n_known={data.n_known}")

    p = doc["protocol"]
    known_k = p.get("known_k", data.n_known if data else 2)
    n_domains = data.n_domains if data else None
    test = p["test_domain"]
    if n_domains is not None and test >= n_domains:
        raise SchemaError(f"protocol.test_domain={test} but the dataset has {n_domains} domains")
    train_domains = p.get("train_domains")
    if train_domains is None:
        if n_domains is None:
            raise SchemaError("protocol.train_domains is required with a feature_file dataset")
        train_domains = [d for d in range(n_domains) if d != test]
    unknown = p.get("unknown_classes")
    if unknown is None:
        unknown = list(range(known_k + 1, known_k + 1 + data.n_unknown)) if data and p["mode"] == "unknown_attack" else []
    try:
        protocol = ProtocolSpec(p["mode"], tuple(train_domains), test, known_k, tuple(unknown))
    except Exception as exc:
        raise SchemaError(f"protocol: {exc}") from None

    t = dict(doc.get("train", {}))
    arch = t.pop("architecture", {})
    input_dim = data.input_dim if data else None
    arch_kw = {"K": known_k}
    if "group_widths" in arch:
        arch_kw["group_widths"] = tuple(tuple(g) for g in arch["group_widths"])
        arch_kw["embed_dim"] = arch.get("embed_dim", arch["group_widths"][-1][-1])
    elif "embed_dim" in arch:
        raise SchemaError("train.architecture.embed_dim needs train.architecture.group_widths")
    if input_dim is not None:
        arch_kw["input_dim"] = input_dim
    try:
        spec = ArchitectureSpec(**arch_kw)
        ab = doc.get("ablation", {})
        train = TrainConfig(**t, seed=seed, architecture=spec,
                            use_sid=ab.get("use_sid", True), use_sood=ab.get("use_sood", True))
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"train: {exc}") from None
    except Exception as exc:
        raise SchemaError(f"train.architecture: {exc}") from None

    out = output_dir or os.environ.get(OUTPUT_DIR_ENV) or doc["output_dir"]
    return ExperimentConfig(
        protocol=protocol,
        train=train,
        output_dir=Path(out),
        data=data,
        feature_file=feature_file,
        threshold=doc.get("eval", {}).get("threshold"),
        seed=seed,
        raw=doc,
    )


def load(path, output_dir=None) -> ExperimentConfig:
    """Read a YAML (or JSON) config file, or the ``config`` block of a run manifest."""
    path = Path(path)
    try:
        doc = yaml.load(path.read_text(), Loader=_Loader)
    except yaml.YAMLError as exc:
        raise SchemaError(f"{path}: not valid YAML: {exc}") from None
    if isinstance(doc, dict) and doc.get("kind") == "dguafas-manifest":
        doc = doc["config"]
    return from_dict(doc, base_dir=path.parent, output_dir=output_dir)


def write_schema(path) -> None:
    from .fileio import atomic_write_text

    atomic_write_text(path, json.dumps(CONFIG_SCHEMA, indent=2) + "\n")
