import json

import pytest

from tofner.config import load_run_config, validate_inputs, write_config
from tofner.errors import ConfigError
from tofner.pipeline import Mode
from tofner.synthetic import make_suite, write_suite


@pytest.fixture
def suite_dir(tmp_path):
    suite = make_suite(seed=1, n_source=20, n_source_unlabeled=10, n_target=10, n_mrc=8)
    paths = write_suite(suite, tmp_path)
    roles = ("s_ner", "s_ner_unlabeled", "t_ner_unlabeled", "t_mrc", "s_mrc")
    write_config(tmp_path / "config.yaml", {"corpora": {r: paths[r].name for r in roles}, "out": "run", "ner_batch_size": 16})
    return tmp_path


def test_defaults_and_relative_paths(suite_dir):
    cfg = load_run_config(suite_dir / "config.yaml", env={})
    assert cfg.seed == 2019
    assert cfg.pipeline.mode is Mode.TOF and cfg.pipeline.iterations == 1
    assert (cfg.pipeline.mlm_batch_size, cfg.pipeline.mrc_batch_size) == (32, 16)
    assert (cfg.pipeline.mlm_epochs, cfg.pipeline.mrc_epochs, cfg.pipeline.ner_epochs) == (3, 6, 6)
    assert cfg.pipeline.ner_batch_size == 16
    assert cfg.out == suite_dir / "run"
    assert cfg.corpora["t_mrc"] == suite_dir / "t_mrc.json"


def test_json_config_accepted(suite_dir, tmp_path):
    p = suite_dir / "c.json"
    p.write_text(json.dumps({"corpora": {"s_ner": "s_ner.conll"}, "iterations": 3}))
    assert load_run_config(p, env={}).pipeline.iterations == 3


def test_precedence_file_env_overrides(suite_dir):
    env = {"TOFNER_ITERATIONS": "2", "TOFNER_NER_LR": "5e-4", "TOFNER_SEED": "7", "HOME": "/x"}
    cfg = load_run_config(suite_dir / "config.yaml", env=env)
    assert (cfg.pipeline.iterations, cfg.pipeline.ner_lr, cfg.seed) == (2, 5e-4, 7)
    cfg = load_run_config(suite_dir / "config.yaml", {"iterations": 4, "seed": None}, env=env)
    assert cfg.pipeline.iterations == 4 and cfg.seed == 7


def test_env_corpus_override(suite_dir):
    env = {"TOFNER_CORPUS_T_MRC": str(suite_dir / "s_mrc.json")}
    assert load_run_config(suite_dir / "config.yaml", env=env).corpora["t_mrc"].name == "s_mrc.json"


def test_errors_are_enumerated_together(suite_dir):
    env = {"TOFNER_NER_LR": "fast", "TOFNER_CORPUS_T_MRC": "missing.json", "TOFNER_BOGUS": "1", "TOFNER_MODE": "WHAT"}
    with pytest.raises(ConfigError) as err:
        load_run_config(suite_dir / "config.yaml", env=env)
    msg = str(err.value)
    for part in ("ner_lr", "missing.json", "bogus", "WHAT"):
        assert part in msg


def test_bad_types(suite_dir):
    with pytest.raises(ConfigError, match="iterations"):
        load_run_config(suite_dir / "config.yaml", {"iterations": 1.5}, env={})
    with pytest.raises(ConfigError, match="loop_mrc_include_source"):
        load_run_config(suite_dir / "config.yaml", {"loop_mrc_include_source": "maybe"}, env={})


def test_translation_needs_map(suite_dir):
    with pytest.raises(ConfigError, match="translation_map"):
        load_run_config(suite_dir / "config.yaml", {"use_translation": True}, env={})


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "nope.yaml", env={})
    (tmp_path / "list.yaml").write_text("- a\n- b\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_run_config(tmp_path / "list.yaml", env={})


def test_validate_inputs(suite_dir):
    reg = validate_inputs(load_run_config(suite_dir / "config.yaml", env={}))
    assert reg.sizes()["s_ner"] == 20
    (suite_dir / "s_ner.conll").write_text("a B-PER\nb\n")
    with pytest.raises(ConfigError, match="line 2"):
        validate_inputs(load_run_config(suite_dir / "config.yaml", env={}))


def test_validate_inputs_missing_role(suite_dir, tmp_path):
    p = suite_dir / "c.yaml"
    write_config(p, {"corpora": {"s_ner": "s_ner.conll", "t_ner_unlabeled": "t_ner_unlabeled.conll"}})
    with pytest.raises(ConfigError, match="s_ner_unlabeled"):
        validate_inputs(load_run_config(p, env={}))
