"""Config parsing: strict keys, strict scalar types, dotted error paths."""

import json

import pytest

from hiermem.backends.deterministic import DeterministicBackend
from hiermem.backends.remote import RemoteBackend
from hiermem.config import EngineConfig, load_config
from hiermem.errors import ConfigError


def test_defaults_are_valid():
    cfg = EngineConfig()
    cfg.validate()
    assert cfg.backend.kind == "deterministic"
    assert cfg.retrieval.top_k == 15
    assert cfg.retrieval.entry_limit == 5
    assert cfg.dedup.similarity_threshold == 0.90
    assert cfg.storage.snapshot_every == 500


def test_from_dict_overrides_nested_fields():
    cfg = EngineConfig.from_dict({
        "backend": {"dim": 64, "seed": 3},
        "retrieval": {"top_k": 7, "decay_enabled": False},
        "service": {"port": 9000},
    })
    assert cfg.backend.dim == 64
    assert cfg.retrieval.top_k == 7
    assert cfg.retrieval.decay_enabled is False
    assert cfg.service.port == 9000
    # untouched sections keep their defaults
    assert cfg.storage.data_dir == "./hiermem-data"


def test_from_dict_empty_is_defaults():
    assert EngineConfig.from_dict({}).to_dict() == EngineConfig().to_dict()


class TestStrictness:
    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="retreival"):
            EngineConfig.from_dict({"retreival": {}})

    def test_unknown_key_has_dotted_path(self):
        with pytest.raises(ConfigError, match=r"retrieval\.topk"):
            EngineConfig.from_dict({"retrieval": {"topk": 10}})

    def test_section_must_be_mapping(self):
        with pytest.raises(ConfigError, match="mapping"):
            EngineConfig.from_dict({"backend": [1, 2]})

    def test_top_level_must_be_mapping(self):
        with pytest.raises(ConfigError, match="top level"):
            EngineConfig.from_dict(["backend"])

    def test_bool_is_not_an_int(self):
        with pytest.raises(ConfigError, match=r"retrieval\.top_k.*integer"):
            EngineConfig.from_dict({"retrieval": {"top_k": True}})

    def test_int_promotes_to_float(self):
        cfg = EngineConfig.from_dict({"dedup": {"similarity_threshold": 1}})
        assert cfg.dedup.similarity_threshold == 1.0
        assert isinstance(cfg.dedup.similarity_threshold, float)

    def test_string_is_not_a_number(self):
        with pytest.raises(ConfigError, match=r"backend\.dim"):
            EngineConfig.from_dict({"backend": {"dim": "256"}})

    def test_number_is_not_a_string(self):
        with pytest.raises(ConfigError, match=r"storage\.data_dir"):
            EngineConfig.from_dict({"storage": {"data_dir": 7}})

    def test_int_is_not_a_bool(self):
        with pytest.raises(ConfigError, match=r"retrieval\.decay_enabled"):
            EngineConfig.from_dict({"retrieval": {"decay_enabled": 1}})


@pytest.mark.parametrize("payload,path_fragment", [
    ({"backend": {"kind": "quantum"}}, "backend.kind"),
    ({"backend": {"dim": 7}}, "backend.dim"),
    ({"backend": {"max_summary_chars": 79}}, "backend.max_summary_chars"),
    ({"backend": {"timeout_ms": 0}}, "backend.timeout_ms"),
    ({"backend": {"max_concurrency": 0}}, "backend.max_concurrency"),
    ({"backend": {"kind": "remote", "model": "m"}}, "backend.endpoint"),
    ({"backend": {"kind": "remote", "endpoint": "http://x"}}, "backend.model"),
    ({"storage": {"data_dir": ""}}, "storage.data_dir"),
    ({"storage": {"snapshot_every": 0}}, "storage.snapshot_every"),
    ({"dedup": {"similarity_threshold": 0.0}}, "dedup.similarity_threshold"),
    ({"dedup": {"similarity_threshold": 1.5}}, "dedup.similarity_threshold"),
    ({"retrieval": {"top_k": 0}}, "retrieval.top_k"),
    ({"retrieval": {"entry_limit": 0}}, "retrieval.entry_limit"),
    ({"retrieval": {"decay_shape": 0.0}}, "retrieval.decay_shape"),
    ({"retrieval": {"decay_shape": 1.0}}, "retrieval.decay_shape"),
    ({"retrieval": {"session_key_weight": -0.1}}, "retrieval.session_key_weight"),
    ({"retrieval": {"session_key_weight": 1.1}}, "retrieval.session_key_weight"),
    ({"service": {"port": 0}}, "service.port"),
    ({"service": {"port": 70000}}, "service.port"),
])
def test_range_validation(payload, path_fragment):
    with pytest.raises(ConfigError) as err:
        EngineConfig.from_dict(payload)
    assert path_fragment in str(err.value)


class TestLoadConfig:
    def test_json_file(self, tmp_path):
        path = tmp_path / "engine.json"
        path.write_text(json.dumps({"retrieval": {"top_k": 3}}))
        assert load_config(path).retrieval.top_k == 3

    def test_yaml_file(self, tmp_path):
        path = tmp_path / "engine.yaml"
        path.write_text("retrieval:\n  top_k: 4\nbackend:\n  dim: 32\n")
        cfg = load_config(path)
        assert cfg.retrieval.top_k == 4
        assert cfg.backend.dim == 32

    def test_empty_yaml_is_defaults(self, tmp_path):
        path = tmp_path / "engine.yml"
        path.write_text("")
        assert load_config(path).to_dict() == EngineConfig().to_dict()

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "engine.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(path)

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "engine.yaml"
        path.write_text("a: [unclosed")
        with pytest.raises(ConfigError, match="invalid YAML"):
            load_config(path)

    def test_unsupported_extension(self, tmp_path):
        path = tmp_path / "engine.toml"
        path.write_text("x = 1")
        with pytest.raises(ConfigError, match="extension"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "ghost.json")


class TestBuilders:
    def test_scoring_params_mirror_retrieval_settings(self):
        cfg = EngineConfig.from_dict({"retrieval": {
            "top_k": 9, "decay_shape": 0.3, "session_key_weight": 0.8,
            "decay_enabled": False, "session_weight_enabled": False}})
        params = cfg.scoring_params()
        assert params.top_k == 9
        assert params.decay_shape == 0.3
        assert params.session_key_weight == 0.8
        assert params.decay_enabled is False
        assert params.session_weight_enabled is False

    def test_retrieval_options(self):
        cfg = EngineConfig.from_dict({"retrieval": {
            "entry_limit": 2, "flat_retrieval": True, "raw_chunk_fallback": True}})
        opts = cfg.retrieval_options()
        assert opts.entry_limit == 2
        assert opts.flat_retrieval is True
        assert opts.raw_chunk_fallback is True

    def test_dedup_policy(self):
        cfg = EngineConfig.from_dict({"dedup": {
            "similarity_threshold": 0.7, "require_type_match": False}})
        policy = cfg.dedup_policy()
        assert policy.similarity_threshold == 0.7
        assert policy.require_type_match is False
        assert policy.require_same_entity_pair is True

    def test_make_backend_deterministic(self):
        cfg = EngineConfig.from_dict({"backend": {"dim": 32, "seed": 5}})
        backend = cfg.make_backend()
        assert isinstance(backend, DeterministicBackend)
        assert backend.dim == 32

    def test_make_backend_remote(self):
        cfg = EngineConfig.from_dict({"backend": {
            "kind": "remote", "endpoint": "http://model.test/v1",
            "model": "m-1", "dim": 64}})
        backend = cfg.make_backend()
        assert isinstance(backend, RemoteBackend)
        assert backend.dim == 64


def test_to_dict_roundtrip():
    cfg = EngineConfig.from_dict({
        "backend": {"dim": 48},
        "retrieval": {"flat_retrieval": True},
    })
    again = EngineConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
