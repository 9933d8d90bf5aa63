"""Run configuration: one flat YAML/JSON file plus ``TOFNER_*`` environment overrides.

Keys are the ``PipelineConfig`` fields plus a handful of run-level ones::

    corpora:            # role -> path (CoNLL, SQuAD JSON or internal .jsonl)
      s_ner: data/en.train.conll
      t_ner_unlabeled: data/es.test.conll
      t_mrc: data/mlqa.es.json
    templates: queries.json
    translation_map: en-es.txt
    out: runs/es
    seed: 2019
    iterations: 1

Every key can be overridden from the environment as ``TOFNER_<KEY>`` (e.g.
``TOFNER_NER_LR=5e-4``); corpus paths as ``TOFNER_CORPUS_<ROLE>``. Values are
parsed as YAML scalars, so ``TOFNER_ITERATIONS=2`` arrives as an int.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import yaml

from .convert import QueryTemplateSet, WordMap, mrc_normalize
from .corpus import CorpusRegistry, CorpusRole, LabelSet, atomic_write_text, read_conll, read_jsonl
from .errors import ConfigError, TofError
from .pipeline import Mode, PipelineConfig, check_registry

ENV_PREFIX = "TOFNER_"
RUN_KEYS = ("corpora", "templates", "translation_map", "out")
_PIPELINE_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


@dataclass
class RunConfig:
    corpora: dict[str, Path]
    pipeline: PipelineConfig
    out: Path | None = None
    templates: Path | None = None
    translation_map: Path | None = None
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def seed(self) -> int:
        return self.pipeline.seed

    def to_dict(self) -> dict:
        return {
            "corpora": {k: str(v) for k, v in self.corpora.items()},
            "templates": str(self.templates) if self.templates else None,
            "translation_map": str(self.translation_map) if self.translation_map else None,
            "out": str(self.out) if self.out else None,
            **self.pipeline.to_dict(),
        }

    def load_templates(self) -> QueryTemplateSet:
        return QueryTemplateSet.load(self.templates) if self.templates else QueryTemplateSet.default()

    def load_word_map(self) -> WordMap | None:
        return WordMap.load(self.translation_map) if self.translation_map else None


def load_corpus(path: Path, role: CorpusRole, label_set: LabelSet):
    """Read a corpus file in whatever format its suffix says."""
    suffix = path.suffix.lower()
    if suffix == ".jsonl":
        return read_jsonl(path)
    if role.is_mrc:
        if suffix != ".json":
            raise ConfigError(f"{role.value}: MRC corpora must be SQuAD-style .json or internal .jsonl, got {path.name}")
        return mrc_normalize(json.loads(path.read_text(encoding="utf-8")), source=path.stem)
    return read_conll(path, label_set)


def _coerce(name: str, value, errors: list[str]):
    f = _PIPELINE_FIELDS[name]
    default = f.default
    kind = type(default) if default is not None else None
    if value is None:
        return None
    if name == "mode":
        return value
    if kind is None:
        # optional overrides: float for rates, int otherwise
        kind = float if name.endswith(("_lr", "_confidence")) else int
    if kind is bool:
        if isinstance(value, bool):
            return value
        errors.append(f"{name}: expected true/false, got {value!r}")
        return default
    if kind is int and isinstance(value, bool):
        errors.append(f"{name}: expected an integer, got {value!r}")
        return default
    try:
        out = kind(value)
    except (TypeError, ValueError):
        errors.append(f"{name}: expected {kind.__name__}, got {value!r}")
        return default
    if kind is int and isinstance(value, float) and value != out:
        errors.append(f"{name}: expected an integer, got {value!r}")
    return out


def _env_overrides(env: Mapping[str, str]) -> tuple[dict, dict]:
    flat, corpora = {}, {}
    for key, raw in env.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):].lower()
        if name.startswith("corpus_"):
            corpora[name[len("corpus_"):]] = raw
        else:
            value = yaml.safe_load(raw) if raw != "" else None
            flat[name] = value if name not in RUN_KEYS else raw
    return flat, corpora


def read_config_file(path: str | os.PathLike) -> dict:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping of keys to values")
    return data


def load_run_config(
    path: str | os.PathLike | None = None,
    overrides: Mapping | None = None,
    env: Mapping[str, str] | None = None,
) -> RunConfig:
    """Merge file < environment < explicit overrides, then validate everything at once.

    Relative paths are resolved against the config file's directory. All
    problems found are reported together in a single ``ConfigError``.
    """
    data = read_config_file(path) if path is not None else {}
    base = Path(path).resolve().parent if path is not None else Path.cwd()
    env_flat, env_corpora = _env_overrides(os.environ if env is None else env)
    corpora_raw = dict(data.pop("corpora", None) or {})
    corpora_raw.update(env_corpora)
    data.update(env_flat)
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})

    errors: list[str] = []
    unknown = sorted(set(data) - set(_PIPELINE_FIELDS) - set(RUN_KEYS))
    if unknown:
        errors.append(f"unknown key(s): {unknown}")

    def resolve(p) -> Path:
        p = Path(str(p)).expanduser()
        return p if p.is_absolute() else base / p

    corpora: dict[str, Path] = {}
    known_roles = {r.value for r in CorpusRole}
    for role, p in corpora_raw.items():
        if role not in known_roles:
            errors.append(f"corpora: unknown role {role!r}")
            continue
        rp = resolve(p)
        if not rp.is_file():
            errors.append(f"corpora.{role}: file not found: {rp}")
        corpora[role] = rp

    extras = {}
    for key in ("templates", "translation_map"):
        if data.get(key):
            rp = resolve(data[key])
            if not rp.is_file():
                errors.append(f"{key}: file not found: {rp}")
            extras[key] = rp
    out = resolve(data["out"]) if data.get("out") else None

    kwargs = {}
    for name in _PIPELINE_FIELDS:
        if name in data:
            kwargs[name] = _coerce(name, data[name], errors)
    if "mode" in kwargs and kwargs["mode"] not in {m.value for m in Mode} and not isinstance(kwargs["mode"], Mode):
        errors.append(f"mode: unknown mode {kwargs['mode']!r}; expected one of {[m.value for m in Mode]}")
        kwargs.pop("mode")
    pipeline = None
    try:
        pipeline = PipelineConfig(**kwargs)
    except TofError as exc:
        errors.append(str(exc))
    if pipeline is not None and pipeline.use_translation and "translation_map" not in extras:
        errors.append("use_translation is set but translation_map is missing")
    if errors:
        raise ConfigError("invalid configuration:\n  - " + "\n  - ".join(errors))
    return RunConfig(corpora, pipeline, out, extras.get("templates"), extras.get("translation_map"), base)


def validate_inputs(cfg: RunConfig) -> CorpusRegistry:
    """Parse every corpus and check roles/templates before any training starts."""
    errors: list[str] = []
    label_set = LabelSet.named(cfg.pipeline.label_set)
    registry = CorpusRegistry(label_set)
    for role, path in cfg.corpora.items():
        try:
            registry.register(role, load_corpus(path, CorpusRole(role), label_set))
        except (TofError, ValueError, OSError) as exc:
            errors.append(f"corpora.{role} ({path}): {exc}")
    templates = None
    try:
        templates = cfg.load_templates()
        templates.check_covers(label_set.types)
    except TofError as exc:
        errors.append(f"templates: {exc}")
    if not errors:
        try:
            # translated copies are derived from s_ner / s_ner_unlabeled inside the run
            check_registry(registry, dataclasses.replace(cfg.pipeline, use_translation=False))
        except TofError as exc:
            errors.append(str(exc))
    if errors:
        raise ConfigError("invalid inputs:\n  - " + "\n  - ".join(errors))
    return registry


def write_config(path: str | os.PathLike, data: dict) -> None:
    atomic_write_text(Path(path), yaml.safe_dump(data, sort_keys=False))
