import json
import math

import pytest
from filelock import FileLock

from tofner.convert import QueryTemplateSet, WordMap, ner_to_mrc
from tofner.corpus import CorpusRegistry, CorpusRole, LabelSet, read_jsonl
from tofner.errors import ConfigError, ResumeError, TrainingError
from tofner.model import allowed_handoff
from tofner.pipeline import (
    Mode,
    PipelineConfig,
    PipelineTrace,
    generate_pseudo_labels,
    plan_stages,
    resume,
    run_tof,
)

from conftest import registry_from_suite

T_NO, S_NU, S_N, T_M, S_M, S_NM = "t_ner_unlabeled", "s_ner_unlabeled", "s_ner", "t_mrc", "s_mrc", "s_ner_as_mrc"
MLM_IN = (T_NO, S_NU)

# (stage, consumed, initialised from, produces)
BASE = [
    ("MLM", MLM_IN, "theta_0", "theta_mlm"),
    ("MRC", (T_M, S_M, S_NM), "theta_mlm", "theta_mrc"),
    ("NER", (S_N,), "theta_mrc", "theta_ner"),
]
PSEUDO = [
    ("PSEUDO_GEN", (T_NO,), "theta_ner", None),
    ("NER_PSEUDO", ("t_ner_pseudo",), "theta_ner", "theta_ner^(0)"),
]
GOLDEN_TOF_T1 = BASE + PSEUDO + [
    ("REFRESH", (T_NO,), "theta_ner^(0)", None),
    ("MRC_LOOP_1", (T_M, "t_mrc_pseudo^(0)"), "theta_ner^(0)", "theta_mrc^(1)"),
    ("NER_LOOP_1", ("t_ner_pseudo^(0)",), "theta_mrc^(1)", "theta_ner^(1)"),
    ("REFRESH_1", (T_NO,), "theta_ner^(1)", None),
    ("PREDICT", (T_NO,), "theta_ner^(1)", None),
]
GOLDEN_TOF_T2 = GOLDEN_TOF_T1[:-1] + [
    ("MRC_LOOP_2", (T_M, "t_mrc_pseudo^(1)"), "theta_ner^(1)", "theta_mrc^(2)"),
    ("NER_LOOP_2", ("t_ner_pseudo^(1)",), "theta_mrc^(2)", "theta_ner^(2)"),
    ("REFRESH_2", (T_NO,), "theta_ner^(2)", None),
    ("PREDICT", (T_NO,), "theta_ner^(2)", None),
]
GOLDEN_TOF_T0 = BASE + PSEUDO + [
    ("REFRESH", (T_NO,), "theta_ner^(0)", None),
    ("PREDICT", (T_NO,), "theta_ner^(0)", None),
]
GOLDEN_NO_CONTINUAL = BASE + PSEUDO + [("PREDICT", (T_NO,), "theta_ner^(0)", None)]
GOLDEN_MRC_ONLY = BASE + [("PREDICT", (T_NO,), "theta_ner", None)]
GOLDEN_BASELINE = [
    ("MLM", MLM_IN, "theta_0", "theta_mlm"),
    ("NER", (S_N,), "theta_mlm", "theta_ner"),
    ("PREDICT", (T_NO,), "theta_ner", None),
]

ALL_ROLES = {T_NO, S_NU, S_N, T_M, S_M}


def fast_config(**kw) -> PipelineConfig:
    base = dict(
        mlm_epochs=1, mrc_epochs=1, ner_epochs=1, mask_k=2, dim=16, layers=1, ffn_dim=16,
        mlm_batch_size=64, mrc_batch_size=64, ner_batch_size=64,
    )
    base.update(kw)
    return PipelineConfig(**base)


def plan_keys(config, available=ALL_ROLES):
    return [(p.stage, p.consumed, p.source_theta, p.produced_theta) for p in plan_stages(config, set(available))]


def trace_keys(trace: PipelineTrace):
    return [(r.stage, tuple(r.consumed), r.source_theta, r.produced_theta) for r in trace.records]


@pytest.mark.parametrize(
    "mode, iterations, golden",
    [
        (Mode.TOF, 1, GOLDEN_TOF_T1),
        (Mode.TOF, 2, GOLDEN_TOF_T2),
        (Mode.TOF, 0, GOLDEN_TOF_T0),
        (Mode.TOF_NO_CONTINUAL, 1, GOLDEN_NO_CONTINUAL),
        (Mode.TOF_MRC_ONLY, 1, GOLDEN_MRC_ONLY),
        (Mode.ADAPTABERT_BASELINE, 1, GOLDEN_BASELINE),
    ],
)
def test_plan_matches_golden(mode, iterations, golden):
    assert plan_keys(PipelineConfig(mode=mode, iterations=iterations)) == golden


def test_plan_sizes_and_refresh_count():
    assert len(plan_keys(PipelineConfig(iterations=1))) == 10
    for t in range(4):
        stages = [k[0] for k in plan_keys(PipelineConfig(iterations=t))]
        assert len(stages) == 7 + 3 * t
        assert sum(s.startswith("REFRESH") for s in stages) == t + 1


def test_every_handoff_is_an_allowed_edge():
    for mode in Mode:
        for stage, _, src, dst in plan_keys(PipelineConfig(mode=mode, iterations=3)):
            if dst is not None:
                assert allowed_handoff(src, dst), (mode, stage, src, dst)


def test_no_continual_has_no_loop_thetas():
    thetas = {k[3] for k in plan_keys(PipelineConfig(mode=Mode.TOF_NO_CONTINUAL, iterations=5))}
    assert not any(t and ("^(1)" in t or "^(2)" in t) for t in thetas)


def test_plan_optional_roles_and_flags():
    keys = plan_keys(PipelineConfig(), {T_NO, S_NU, S_N, S_M})
    assert keys[1][1] == (S_M, S_NM)
    assert keys[6][1] == ("t_mrc_pseudo^(0)",)
    keys = plan_keys(PipelineConfig(loop_mrc_include_source=True))
    assert keys[6][1] == (T_M, S_M, "t_mrc_pseudo^(0)")
    keys = plan_keys(PipelineConfig(use_translation=True))
    assert keys[0][1] == (T_NO, S_NU, "s_ner_unlabeled_translated")
    assert keys[2][1] == (S_N, "s_ner_translated")


def test_config_validation():
    with pytest.raises(ConfigError):
        PipelineConfig(mode="FAST")
    with pytest.raises(ConfigError):
        PipelineConfig(iterations=-1)
    with pytest.raises(ConfigError):
        PipelineConfig(mask_prob=0.9)
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"learning_rate": 1})
    cfg = PipelineConfig(ner_lr=5e-4, pseudo_ner_epochs=2)
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg
    hp = cfg.stage_params("pseudo_ner", seed=1)
    assert (hp.lr, hp.epochs, hp.batch_size) == (5e-4, 2, 64)


# ---------------------------------------------------------------------------
# executed runs on a small synthetic suite


@pytest.fixture(scope="module")
def tof_run(small_suite, tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("tof") / "run"
    res = run_tof(registry_from_suite(small_suite), fast_config(iterations=2), run_dir)
    return res, small_suite


def test_executed_trace_matches_golden(tof_run):
    res, _ = tof_run
    assert res.completed and res.trace.completed
    assert trace_keys(res.trace) == GOLDEN_TOF_T2
    assert trace_keys(PipelineTrace.load(res.run_dir / "trace.json")) == GOLDEN_TOF_T2


def test_run_directory_layout(tof_run):
    res, suite = tof_run
    d = res.run_dir
    snap = json.loads((d / "config.json").read_text())
    assert snap["pipeline"]["seed"] == 2019 and snap["pipeline"]["iterations"] == 2
    assert set(snap["inputs"]) == ALL_ROLES
    for name in ("t_ner_pseudo", "t_ner_pseudo_0", "t_mrc_pseudo_0", "t_ner_pseudo_2", "t_mrc_pseudo_2"):
        assert (d / "data" / f"{name}.jsonl").exists()
    ckpts = sorted(p.name for p in (d / "checkpoints").iterdir())
    assert ckpts[0] == "00_MLM.npz" and len(ckpts) == 8
    preds = (d / "predictions.conll").read_text().strip().split("\n\n")
    assert len(preds) == len(suite.t_ner_unlabeled)


def test_source_mrc_derivation(tof_run):
    res, suite = tof_run
    derived = read_jsonl(res.run_dir / "data" / "s_ner_as_mrc.jsonl")
    assert len(derived) == 4 * len(suite.s_ner)
    assert derived == ner_to_mrc(suite.s_ner, QueryTemplateSet.default(), LabelSet())


def test_records_carry_sizes_and_seeds(tof_run):
    res, suite = tof_run
    recs = {r.stage: r for r in res.trace.records}
    assert recs["NER"].sizes[S_N] == len(suite.s_ner)
    assert recs["REFRESH"].sizes["t_mrc_pseudo^(0)"] == 4 * len(suite.t_ner_unlabeled)
    assert len({r.seed for r in res.trace.records}) == len(res.trace.records)
    assert all(len(r.loss_curve) == 1 for r in res.trace.records if r.checkpoint)


def test_resume_completed_run_is_noop(tof_run):
    res, _ = tof_run
    before = {p: p.stat().st_mtime_ns for p in res.run_dir.rglob("*") if p.is_file() and p.name != ".lock"}
    again = resume(res.run_dir)
    assert again.completed and [p.tags for p in again.predictions] == [p.tags for p in res.predictions]
    after = {p: p.stat().st_mtime_ns for p in res.run_dir.rglob("*") if p.is_file() and p.name != ".lock"}
    assert before == after


def test_refuses_non_empty_run_dir(tof_run, small_suite):
    res, _ = tof_run
    with pytest.raises(ConfigError, match="not empty"):
        run_tof(registry_from_suite(small_suite), fast_config(), res.run_dir)


def test_interrupted_run_resumes_identically(small_suite, tmp_path):
    cfg = fast_config(iterations=1)
    full = run_tof(registry_from_suite(small_suite), cfg, tmp_path / "full")
    part = run_tof(registry_from_suite(small_suite), cfg, tmp_path / "part", stop_after="NER_PSEUDO")
    assert not part.completed and [r.stage for r in part.trace.records][-1] == "NER_PSEUDO"
    done = resume(tmp_path / "part")
    assert done.completed
    assert (tmp_path / "part" / "predictions.conll").read_bytes() == (tmp_path / "full" / "predictions.conll").read_bytes()
    assert trace_keys(done.trace) == trace_keys(full.trace)
    assert [r.artifacts for r in done.trace.records] == [r.artifacts for r in full.trace.records]


def test_resume_refuses_tampered_artifacts(small_suite, tmp_path):
    cfg = fast_config(mode=Mode.TOF_NO_CONTINUAL)
    run_tof(registry_from_suite(small_suite), cfg, tmp_path / "a", stop_after="PSEUDO_GEN")
    pseudo = tmp_path / "a" / "data" / "t_ner_pseudo.jsonl"
    pseudo.write_text(pseudo.read_text().replace('"O"', '"B-PER"', 1))
    with pytest.raises(ResumeError, match="t_ner_pseudo"):
        resume(tmp_path / "a")

    run_tof(registry_from_suite(small_suite), cfg, tmp_path / "b", stop_after="MRC")
    ck = tmp_path / "b" / "checkpoints" / "01_MRC.npz"
    raw = bytearray(ck.read_bytes())
    raw[100] ^= 0xFF
    ck.write_bytes(bytes(raw))
    with pytest.raises(ResumeError, match="01_MRC"):
        resume(tmp_path / "b")


def test_resume_refuses_locked_dir(small_suite, tmp_path):
    run_tof(registry_from_suite(small_suite), fast_config(mode=Mode.ADAPTABERT_BASELINE), tmp_path / "r", stop_after="MLM")
    with FileLock(str(tmp_path / "r" / ".lock")):
        with pytest.raises(ConfigError, match="locked"):
            resume(tmp_path / "r")


def test_missing_roles_fail_before_work(small_suite, tmp_path):
    reg = CorpusRegistry()
    reg.register(CorpusRole.S_NER, small_suite.s_ner)
    reg.register(CorpusRole.T_NER_UNLABELED, small_suite.t_ner_unlabeled)
    with pytest.raises(ConfigError, match="s_ner_unlabeled"):
        run_tof(reg, fast_config(), tmp_path / "x")
    assert not (tmp_path / "x").exists()
    reg.register(CorpusRole.S_NER_UNLABELED, small_suite.s_ner_unlabeled)
    with pytest.raises(ConfigError, match="t_mrc / s_mrc"):
        run_tof(reg, fast_config(), tmp_path / "x")


def test_baseline_needs_no_mrc(small_suite, tmp_path):
    reg = CorpusRegistry()
    reg.register(CorpusRole.S_NER, small_suite.s_ner)
    reg.register(CorpusRole.S_NER_UNLABELED, small_suite.s_ner_unlabeled)
    reg.register(CorpusRole.T_NER_UNLABELED, small_suite.t_ner_unlabeled)
    res = run_tof(reg, fast_config(mode=Mode.ADAPTABERT_BASELINE), tmp_path / "b")
    assert [r.stage for r in res.trace.records] == ["MLM", "NER", "PREDICT"]


def test_translation_slot(small_suite, tmp_path):
    words = sorted({t for s in small_suite.s_ner + list(small_suite.s_ner_unlabeled) for t in s.tokens})
    wm = WordMap({w: w.upper() for w in words})
    res = run_tof(
        registry_from_suite(small_suite), fast_config(mode=Mode.ADAPTABERT_BASELINE, use_translation=True), tmp_path / "t", word_map=wm
    )
    assert res.trace.records[1].consumed == [S_N, "s_ner_translated"]
    with pytest.raises(ConfigError, match="word map"):
        run_tof(registry_from_suite(small_suite), fast_config(use_translation=True), tmp_path / "u")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_failure_keeps_partial_trace(small_suite, tmp_path):
    with pytest.raises(TrainingError):
        run_tof(registry_from_suite(small_suite), fast_config(mrc_lr=math.inf), tmp_path / "f")
    trace = PipelineTrace.load(tmp_path / "f" / "trace.json")
    assert [r.stage for r in trace.records] == ["MLM"] and not trace.completed


def test_pseudo_confidence_filter(tof_run, small_suite):
    res, _ = tof_run
    unl = small_suite.t_ner_unlabeled[:5]
    everything_o = generate_pseudo_labels(res.state, unl, min_confidence=1.0)
    assert all(set(s.tags) == {"O"} for s in everything_o)
    assert [s.tokens for s in everything_o] == [s.tokens for s in unl]
