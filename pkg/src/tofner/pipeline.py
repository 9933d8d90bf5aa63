"""Staged fine-tuning scheduler: MLM -> MRC -> NER, pseudo labels, and the MRC/NER refinement loop.

A run is planned up front as a list of stages (``plan_stages``), then executed
one stage at a time. After every stage its checkpoint / datasets are written
and the trace is rewritten atomically, so an interrupted run can be resumed
from the last completed stage and finishes bit-identically.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from filelock import FileLock, Timeout

from .convert import QueryTemplateSet, WordMap, pseudo_ner_to_mrc, subsample_negatives, substitute_words
from .corpus import (
    CorpusRegistry,
    CorpusRole,
    LabelSet,
    MrcExample,
    TaggedSentence,
    atomic_write_text,
    read_conll,
    read_jsonl,
    serialize_conll,
    write_jsonl,
)
from .encoder import EncoderConfig, Vocabulary
from .errors import ConfigError, ContractError, ResumeError, TrainingError
from .masking import MaskPolicy, build_mlm_corpus, mask_corpus
from .model import (
    THETA_0,
    THETA_MLM,
    THETA_MRC,
    THETA_NER,
    ModelState,
    StageParams,
    load_checkpoint,
    ner_decode,
    ner_forward_batch,
    query_tokens,
    save_checkpoint,
    theta_mrc_i,
    theta_ner_i,
    train_stage,
)

log = logging.getLogger(__name__)

TRACE_FILE = "trace.json"
CONFIG_FILE = "config.json"
PREDICTIONS_FILE = "predictions.conll"


class Mode(str, enum.Enum):
    TOF = "TOF"
    TOF_NO_CONTINUAL = "TOF_NO_CONTINUAL"
    TOF_MRC_ONLY = "TOF_MRC_ONLY"
    ADAPTABERT_BASELINE = "ADAPTABERT_BASELINE"


@dataclass
class PipelineConfig:
    """Flat run configuration; every field is also a config-file key.

    ``None`` for a pseudo/loop stage hyperparameter means "inherit from the
    matching MRC/NER stage". Learning rates default to values that train the
    built-in encoder from scratch; pretrained backends want the 1e-6..8e-5 range.
    """

    mode: Mode = Mode.TOF
    iterations: int = 1
    seed: int = 2019
    label_set: str = "default"

    mlm_lr: float = 2e-3
    mlm_batch_size: int = 32
    mlm_epochs: int = 3
    mrc_lr: float = 2e-3
    mrc_batch_size: int = 16
    mrc_epochs: int = 6
    ner_lr: float = 2e-3
    ner_batch_size: int = 64
    ner_epochs: int = 6
    pseudo_ner_lr: float | None = None
    pseudo_ner_batch_size: int | None = None
    pseudo_ner_epochs: int | None = None
    loop_mrc_lr: float | None = None
    loop_mrc_batch_size: int | None = None
    loop_mrc_epochs: int | None = None
    loop_ner_lr: float | None = None
    loop_ner_batch_size: int | None = None
    loop_ner_epochs: int | None = None

    mask_k: int = 10
    mask_rate: float = 0.15
    mask_prob: float = 0.8
    mask_random_prob: float = 0.1
    mask_keep_prob: float = 0.1

    mrc_negative_keep_ratio: float = 1.0
    mrc_threshold: float = 0.5
    mrc_max_span_len: int = 30
    pseudo_min_confidence: float | None = None
    loop_mrc_include_source: bool = False
    use_translation: bool = False

    dim: int = 64
    layers: int = 2
    ffn_dim: int = 128
    predict_batch_size: int = 64

    def __post_init__(self):
        try:
            self.mode = Mode(self.mode)
        except ValueError:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {[m.value for m in Mode]}") from None
        if not isinstance(self.iterations, int) or self.iterations < 0:
            raise ConfigError(f"iterations must be a non-negative integer, got {self.iterations!r}")
        if self.pseudo_min_confidence is not None and not 0.0 <= self.pseudo_min_confidence <= 1.0:
            raise ConfigError("pseudo_min_confidence must lie in [0, 1]")
        MaskPolicy(self.mask_prob, self.mask_random_prob, self.mask_keep_prob)
        LabelSet.named(self.label_set)

    def stage_params(self, stage: str, seed: int) -> StageParams:
        base = {"mlm": "mlm", "mrc": "mrc", "ner": "ner", "pseudo_ner": "ner", "loop_mrc": "mrc", "loop_ner": "ner"}[stage]

        def pick(attr):
            own = getattr(self, f"{stage}_{attr}")
            return own if own is not None else getattr(self, f"{base}_{attr}")

        return StageParams(lr=pick("lr"), batch_size=pick("batch_size"), epochs=pick("epochs"), seed=seed)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.dim, self.layers, self.ffn_dim)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown pipeline config key(s): {sorted(unknown)}")
        return cls(**data)


# ---------------------------------------------------------------------------
# trace


@dataclass
class StageRecord:
    index: int
    stage: str
    consumed: list[str]
    source_theta: str | None
    produced_theta: str | None
    produced_data: list[str] = field(default_factory=list)
    sizes: dict[str, int] = field(default_factory=dict)
    checkpoint: str | None = None
    artifacts: dict[str, str] = field(default_factory=dict)
    loss_curve: list[float] = field(default_factory=list)
    seed: int | None = None

    def key(self) -> tuple:
        return (self.stage, tuple(self.consumed), self.source_theta, self.produced_theta)


@dataclass
class PipelineTrace:
    records: list[StageRecord] = field(default_factory=list)
    completed: bool = False

    def stage_names(self) -> list[str]:
        return [r.stage for r in self.records]

    def handoffs(self) -> list[tuple[str | None, str | None]]:
        return [(r.source_theta, r.produced_theta) for r in self.records if r.produced_theta]

    def keys(self) -> list[tuple]:
        return [r.key() for r in self.records]

    def to_dict(self) -> dict:
        return {"completed": self.completed, "records": [dataclasses.asdict(r) for r in self.records]}

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineTrace":
        return cls([StageRecord(**r) for r in data["records"]], data.get("completed", False))

    def save(self, path: Path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path: Path) -> "PipelineTrace":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ResumeError(f"unreadable trace {path}: {exc}") from None


# ---------------------------------------------------------------------------
# planning


@dataclass(frozen=True)
class StagePlan:
    stage: str
    action: str  # train | pseudo | refresh | predict
    head: str | None
    consumed: tuple[str, ...]
    source_theta: str
    produced_theta: str | None = None
    produced_data: tuple[str, ...] = ()
    hp_key: str | None = None


def pseudo_ner_name(i: int | None) -> str:
    return "t_ner_pseudo" if i is None else f"t_ner_pseudo^({i})"


def pseudo_mrc_name(i: int) -> str:
    return f"t_mrc_pseudo^({i})"


def plan_stages(config: PipelineConfig, available: set[str]) -> list[StagePlan]:
    """The ordered stage list for ``config.mode`` given the populated corpus roles."""
    R = CorpusRole
    mlm_in = [R.T_NER_UNLABELED.value, R.S_NER_UNLABELED.value]
    ner_in = [R.S_NER.value]
    if config.use_translation:
        mlm_in.append(R.S_NER_UNLABELED_TRANSLATED.value)
        ner_in.append(R.S_NER_TRANSLATED.value)
    mrc_in = [r.value for r in (R.T_MRC, R.S_MRC) if r.value in available] + [R.S_NER_AS_MRC.value]

    plan = [StagePlan("MLM", "train", "mlm", tuple(mlm_in), THETA_0, THETA_MLM, hp_key="mlm")]
    if config.mode is Mode.ADAPTABERT_BASELINE:
        plan.append(StagePlan("NER", "train", "ner", tuple(ner_in), THETA_MLM, THETA_NER, hp_key="ner"))
        plan.append(StagePlan("PREDICT", "predict", None, (R.T_NER_UNLABELED.value,), THETA_NER))
        return plan

    plan.append(StagePlan("MRC", "train", "mrc", tuple(mrc_in), THETA_MLM, THETA_MRC, hp_key="mrc"))
    plan.append(StagePlan("NER", "train", "ner", tuple(ner_in), THETA_MRC, THETA_NER, hp_key="ner"))
    if config.mode is Mode.TOF_MRC_ONLY:
        plan.append(StagePlan("PREDICT", "predict", None, (R.T_NER_UNLABELED.value,), THETA_NER))
        return plan

    t_no = R.T_NER_UNLABELED.value
    plan.append(StagePlan("PSEUDO_GEN", "pseudo", None, (t_no,), THETA_NER, produced_data=(pseudo_ner_name(None),)))
    plan.append(
        StagePlan("NER_PSEUDO", "train", "ner", (pseudo_ner_name(None),), THETA_NER, theta_ner_i(0), hp_key="pseudo_ner")
    )
    if config.mode is Mode.TOF_NO_CONTINUAL:
        plan.append(StagePlan("PREDICT", "predict", None, (t_no,), theta_ner_i(0)))
        return plan

    plan.append(
        StagePlan("REFRESH", "refresh", None, (t_no,), theta_ner_i(0), produced_data=(pseudo_ner_name(0), pseudo_mrc_name(0)))
    )
    for i in range(1, config.iterations + 1):
        loop_mrc_in = [r for r in (R.T_MRC.value,) if r in available]
        if config.loop_mrc_include_source and R.S_MRC.value in available:
            loop_mrc_in.append(R.S_MRC.value)
        loop_mrc_in.append(pseudo_mrc_name(i - 1))
        plan.append(
            StagePlan(f"MRC_LOOP_{i}", "train", "mrc", tuple(loop_mrc_in), theta_ner_i(i - 1), theta_mrc_i(i), hp_key="loop_mrc")
        )
        plan.append(
            StagePlan(f"NER_LOOP_{i}", "train", "ner", (pseudo_ner_name(i - 1),), theta_mrc_i(i), theta_ner_i(i), hp_key="loop_ner")
        )
        plan.append(
            StagePlan(f"REFRESH_{i}", "refresh", None, (t_no,), theta_ner_i(i), produced_data=(pseudo_ner_name(i), pseudo_mrc_name(i)))
        )
    plan.append(StagePlan("PREDICT", "predict", None, (t_no,), theta_ner_i(config.iterations)))
    return plan


def required_roles(config: PipelineConfig) -> list[CorpusRole]:
    R = CorpusRole
    req = [R.T_NER_UNLABELED, R.S_NER_UNLABELED, R.S_NER]
    if config.use_translation:
        req += [R.S_NER_UNLABELED_TRANSLATED, R.S_NER_TRANSLATED]
    return req


def check_registry(registry: CorpusRegistry, config: PipelineConfig) -> None:
    missing = [r.value for r in required_roles(config) if not registry.has(r)]
    if missing:
        raise ConfigError(f"mode {config.mode.value} needs corpus role(s) {missing}")
    if config.mode is not Mode.ADAPTABERT_BASELINE and not (
        registry.has(CorpusRole.T_MRC) or registry.has(CorpusRole.S_MRC)
    ):
        raise ConfigError(f"mode {config.mode.value} needs at least one of t_mrc / s_mrc")


# ---------------------------------------------------------------------------
# helpers


def stage_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def generate_pseudo_labels(
    state: ModelState,
    unlabeled: Sequence[TaggedSentence],
    min_confidence: float | None = None,
    batch_size: int = 64,
) -> list[TaggedSentence]:
    """Tag unlabeled sentences with the current NER head (argmax + BIO repair).

    With ``min_confidence`` set, tokens whose top probability falls below it
    are forced to ``O`` before the repair pass.
    """
    if not state.has_head("ner"):
        raise ContractError(f"state {state.stage} has no NER head")
    if not unlabeled:
        return []
    out = []
    for sent, probs in zip(unlabeled, ner_forward_batch(state, unlabeled, batch_size)):
        if min_confidence is not None:
            probs = probs.copy()
            low = probs.max(axis=1) < min_confidence
            probs[low] = 0.0
            probs[low, 0] = 1.0
        out.append(sent.with_tags(ner_decode(probs, state.labels)))
    return out


def build_vocabulary(registry: CorpusRegistry, templates: QueryTemplateSet) -> Vocabulary:
    seqs: list = []
    for role in registry.roles():
        for item in registry.get(role):
            if isinstance(item, MrcExample):
                seqs.append(item.context)
                seqs.append(query_tokens(item.query))
            else:
                seqs.append(item.tokens)
    seqs.extend(query_tokens(q) for q in templates.queries.values())
    return Vocabulary.build(seqs)


@dataclass
class RunResult:
    state: ModelState
    predictions: list[TaggedSentence]
    trace: PipelineTrace
    run_dir: Path
    completed: bool = True


# ---------------------------------------------------------------------------
# execution


class _Run:
    def __init__(self, run_dir: Path, registry: CorpusRegistry, config: PipelineConfig, templates: QueryTemplateSet):
        self.dir = run_dir
        self.registry = registry
        self.config = config
        self.templates = templates.restricted_to(registry.label_set)
        self.plan = plan_stages(config, {r.value for r in registry.roles() if registry.has(r)})
        self.vocab = build_vocabulary(registry, self.templates)
        self.generated: dict[str, tuple] = {}
        self.state: ModelState | None = None
        self.predictions: list[TaggedSentence] = []

    # persistence -----------------------------------------------------------

    def rel(self, path: Path) -> str:
        return path.relative_to(self.dir).as_posix()

    def data_path(self, name: str) -> Path:
        safe = name.replace("^(", "_").replace(")", "")
        return self.dir / "data" / f"{safe}.jsonl"

    def write_dataset(self, name: str, items: Sequence, rec: StageRecord) -> None:
        path = self.data_path(name)
        write_jsonl(path, items)
        rec.artifacts[self.rel(path)] = file_sha256(path)

    def snapshot(self) -> None:
        """Write config, templates and every input corpus so the run directory is self-contained."""
        inputs = {}
        for role in self.registry.roles():
            if role in (CorpusRole.S_NER_AS_MRC, CorpusRole.T_NER_PSEUDO, CorpusRole.T_MRC_PSEUDO):
                continue
            path = self.dir / "inputs" / f"{role.value}.jsonl"
            write_jsonl(path, self.registry.get(role))
            inputs[role.value] = {"path": self.rel(path), "sha256": file_sha256(path)}
        snap = {
            "pipeline": self.config.to_dict(),
            "label_set": {"types": list(self.registry.label_set.types), "collapse_to": self.registry.label_set.collapse_to},
            "templates": dict(self.templates.queries),
            "inputs": inputs,
            "vocab_hash": self.vocab.hash,
        }
        atomic_write_text(self.dir / CONFIG_FILE, json.dumps(snap, indent=1, sort_keys=True))

    # stage data --------------------------------------------------------------

    def dataset(self, name: str) -> tuple:
        if name in self.generated:
            return self.generated[name]
        return self.registry.get(name)

    def train_data(self, plan: StagePlan, seed: int) -> list:
        cfg = self.config
        if plan.head == "mlm":
            target = self.dataset(CorpusRole.T_NER_UNLABELED.value)
            source = [s for name in plan.consumed[1:] for s in self.dataset(name)]
            mixed = build_mlm_corpus(target, source, seed)
            policy = MaskPolicy(cfg.mask_prob, cfg.mask_random_prob, cfg.mask_keep_prob)
            vocab = self.vocab.tokens[5:] or None
            return mask_corpus(mixed, cfg.mask_k, cfg.mask_rate, policy, seed, vocab)
        items = [it for name in plan.consumed for it in self.dataset(name)]
        if plan.head == "mrc":
            items = subsample_negatives(items, cfg.mrc_negative_keep_ratio, seed)
        return items

    # main loop ---------------------------------------------------------------

    def execute(self, trace: PipelineTrace, stop_after: str | None = None) -> RunResult:
        start = len(trace.records)
        for idx in range(start, len(self.plan)):
            plan = self.plan[idx]
            seed = stage_seed(self.config.seed, idx)
            rec = StageRecord(idx, plan.stage, list(plan.consumed), plan.source_theta, plan.produced_theta, list(plan.produced_data), seed=seed)
            if self.state.stage != plan.source_theta:
                raise ResumeError(f"stage {plan.stage} expects {plan.source_theta}, have {self.state.stage}")
            log.info("stage %d %s (%s)", idx, plan.stage, ", ".join(plan.consumed))
            if plan.action == "train":
                data = self.train_data(plan, seed)
                rec.sizes = {name: len(self.dataset(name)) for name in plan.consumed}
                rec.sizes["train_items"] = len(data)
                hp = self.config.stage_params(plan.hp_key, seed)
                try:
                    self.state, rec.loss_curve = train_stage(self.state, plan.head, data, hp, produce=plan.produced_theta)
                except TrainingError:
                    trace.save(self.dir / TRACE_FILE)
                    raise
                ckpt = self.dir / "checkpoints" / f"{idx:02d}_{plan.stage}.npz"
                save_checkpoint(self.state, ckpt, {"stage": plan.stage, **hp.to_dict()})
                rec.checkpoint = self.rel(ckpt)
                rec.artifacts[rec.checkpoint] = file_sha256(ckpt)
            elif plan.action in ("pseudo", "refresh"):
                unl = self.dataset(plan.consumed[0])
                pseudo = tuple(
                    generate_pseudo_labels(self.state, unl, self.config.pseudo_min_confidence, self.config.predict_batch_size)
                )
                rec.sizes = {plan.consumed[0]: len(unl)}
                ner_name = plan.produced_data[0]
                self.generated[ner_name] = pseudo
                self.write_dataset(ner_name, pseudo, rec)
                rec.sizes[ner_name] = len(pseudo)
                if plan.action == "refresh":
                    mrc_name = plan.produced_data[1]
                    mrc = tuple(pseudo_ner_to_mrc(pseudo, self.templates, self.registry.label_set))
                    self.generated[mrc_name] = mrc
                    self.write_dataset(mrc_name, mrc, rec)
                    rec.sizes[mrc_name] = len(mrc)
            elif plan.action == "predict":
                unl = self.dataset(plan.consumed[0])
                self.predictions = generate_pseudo_labels(self.state, unl, None, self.config.predict_batch_size)
                path = self.dir / PREDICTIONS_FILE
                atomic_write_text(path, serialize_conll(self.predictions))
                rec.artifacts[self.rel(path)] = file_sha256(path)
                rec.sizes = {plan.consumed[0]: len(unl)}
            trace.records.append(rec)
            trace.completed = idx == len(self.plan) - 1
            trace.save(self.dir / TRACE_FILE)
            if stop_after is not None and plan.stage == stop_after and not trace.completed:
                return RunResult(self.state, self.predictions, trace, self.dir, completed=False)
        return RunResult(self.state, self.predictions, trace, self.dir, completed=trace.completed)


def _lock(run_dir: Path) -> FileLock:
    lock = FileLock(str(run_dir / ".lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise ConfigError(f"run directory {run_dir} is locked by another process") from None
    return lock


def run_tof(
    registry: CorpusRegistry,
    config: PipelineConfig,
    run_dir: str | os.PathLike,
    templates: QueryTemplateSet | None = None,
    word_map: WordMap | None = None,
    stop_after: str | None = None,
) -> RunResult:
    """Run the staged schedule for ``config.mode`` into a fresh ``run_dir``.

    ``stop_after`` halts cleanly once the named stage is recorded (used to
    simulate an interruption); ``resume`` picks the run up again.
    """
    templates = templates or QueryTemplateSet.default()
    if config.use_translation:
        if word_map is None:
            raise ConfigError("use_translation is set but no word map was given")
        registry.register(CorpusRole.S_NER_UNLABELED_TRANSLATED, substitute_words(registry.get(CorpusRole.S_NER_UNLABELED), word_map))
        registry.register(CorpusRole.S_NER_TRANSLATED, substitute_words(registry.get(CorpusRole.S_NER), word_map))
    check_registry(registry, config)
    registry.derive_ner_as_mrc(templates)
    run_dir = Path(run_dir)
    if run_dir.exists() and any(p.name != ".lock" for p in run_dir.iterdir()):
        raise ConfigError(f"run directory {run_dir} is not empty; use resume to continue a run")
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = _lock(run_dir)
    try:
        run = _Run(run_dir, registry, config, templates)
        run.snapshot()
        trace = PipelineTrace()
        write_jsonl(run.data_path(CorpusRole.S_NER_AS_MRC.value), registry.get(CorpusRole.S_NER_AS_MRC))
        run.state = ModelState.fresh(run.vocab, registry.label_set.tags, config.encoder_config(), stage_seed(config.seed, 10_000))
        trace.save(run_dir / TRACE_FILE)
        return run.execute(trace, stop_after)
    finally:
        lock.release()


def _registry_from_snapshot(run_dir: Path, snap: dict) -> CorpusRegistry:
    ls = snap["label_set"]
    registry = CorpusRegistry(LabelSet(tuple(ls["types"]), ls["collapse_to"]))
    for role, info in snap["inputs"].items():
        path = run_dir / info["path"]
        if not path.exists() or file_sha256(path) != info["sha256"]:
            raise ResumeError(f"input snapshot {info['path']} is missing or modified")
        registry.register(role, read_jsonl(path))
    return registry


def resume(run_dir: str | os.PathLike, stop_after: str | None = None) -> RunResult:
    """Continue an interrupted run from its last completed stage (no-op when already complete)."""
    run_dir = Path(run_dir)
    try:
        snap = json.loads((run_dir / CONFIG_FILE).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ResumeError(f"no readable run snapshot in {run_dir}: {exc}") from None
    trace = PipelineTrace.load(run_dir / TRACE_FILE)
    lock = _lock(run_dir)
    try:
        config = PipelineConfig.from_dict(snap["pipeline"])
        registry = _registry_from_snapshot(run_dir, snap)
        templates = QueryTemplateSet(snap["templates"])
        registry.derive_ner_as_mrc(templates)
        run = _Run(run_dir, registry, config, templates)
        if run.vocab.hash != snap["vocab_hash"]:
            raise ResumeError("vocabulary rebuilt from the snapshot does not match the recorded hash")
        if len(trace.records) > len(run.plan):
            raise ResumeError("trace has more stages than the configured plan")
        for rec, plan in zip(trace.records, run.plan):
            if (rec.stage, tuple(rec.consumed), rec.source_theta, rec.produced_theta) != (
                plan.stage,
                plan.consumed,
                plan.source_theta,
                plan.produced_theta,
            ):
                raise ResumeError(f"trace record {rec.index} ({rec.stage}) does not match the planned stage {plan.stage}")
            for rel, digest in rec.artifacts.items():
                path = run_dir / rel
                if not path.exists() or file_sha256(path) != digest:
                    raise ResumeError(f"artifact {rel} of stage {rec.stage} is missing or its hash does not match")

        last_ckpt = next((r for r in reversed(trace.records) if r.checkpoint), None)
        if last_ckpt is None:
            run.state = ModelState.fresh(run.vocab, registry.label_set.tags, config.encoder_config(), stage_seed(config.seed, 10_000))
        else:
            run.state, _ = load_checkpoint(run_dir / last_ckpt.checkpoint, expect_vocab_hash=run.vocab.hash)
        for rec in trace.records:
            for name in rec.produced_data:
                run.generated[name] = tuple(read_jsonl(run.data_path(name)))

        if trace.completed:
            preds = read_conll(run_dir / PREDICTIONS_FILE, registry.label_set)
            unl = registry.get(CorpusRole.T_NER_UNLABELED)
            preds = [s.with_tags(p.tags) for s, p in zip(unl, preds)]
            return RunResult(run.state, preds, trace, run_dir, completed=True)
        return run.execute(trace, stop_after)
    finally:
        lock.release()
