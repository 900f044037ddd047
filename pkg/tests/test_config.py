import pytest

import helpers
from translabel.config import ConfigError, config_from_dict, load_config
from translabel.corpus_io import write_conll_dep


def base_payload(tmp_path):
    helpers.write_yaml(tmp_path / "unused.yaml", {})
    write_conll_dep(helpers.make_corpus(3, seed=1), str(tmp_path / "train.conll"))
    write_conll_dep(helpers.make_corpus(2, seed=2), str(tmp_path / "dev.conll"))
    return {
        "mode": "monolingual",
        "corpora": [{"path": "train.conll", "format": "conll09", "lang": "EN"}],
        "dev": {"path": "dev.conll", "format": "conll09", "lang": "EN"},
        "out_dir": "runs/x",
    }


class TestValidate:
    def test_valid_config_passes(self, tmp_path):
        config = config_from_dict(base_payload(tmp_path), base_dir=str(tmp_path))
        config.validate()

    def test_all_problems_collected_at_once(self, tmp_path):
        payload = base_payload(tmp_path)
        payload["mode"] = "nonsense"
        payload["batch_size"] = 0
        payload["learning_rate"] = -1.0
        with pytest.raises(ConfigError) as err:
            config_from_dict(payload, base_dir=str(tmp_path))
        text = str(err.value)
        assert "mode" in text
        assert "batch_size" in text
        assert "learning_rate" in text

    def test_missing_corpus_file_reported(self, tmp_path):
        payload = base_payload(tmp_path)
        payload["corpora"][0]["path"] = "missing.conll"
        with pytest.raises(ConfigError, match="missing.conll"):
            config_from_dict(payload, base_dir=str(tmp_path))

    def test_crosslingual_requires_parallel(self, tmp_path):
        payload = base_payload(tmp_path)
        payload["mode"] = "crosslingual"
        with pytest.raises(ConfigError):
            config_from_dict(payload, base_dir=str(tmp_path))

    def test_column_modes_reject_parallel(self, tmp_path):
        payload = base_payload(tmp_path)
        (tmp_path / "p.tsv").write_text("EN\tXX\ta\tb\n")
        payload["corpora"] = [{"path": "p.tsv", "format": "parallel",
                               "lang": "EN"}]
        with pytest.raises(ConfigError):
            config_from_dict(payload, base_dir=str(tmp_path))

    def test_embeddings_need_both_path_and_dim(self, tmp_path):
        payload = base_payload(tmp_path)
        payload["embeddings"] = {"path": "emb.txt"}
        with pytest.raises(ConfigError):
            config_from_dict(payload, base_dir=str(tmp_path))

    def test_embedding_dim_must_match_word_dim(self, tmp_path):
        payload = base_payload(tmp_path)
        (tmp_path / "emb.txt").write_text("cat 1.0 2.0\n")
        payload["embeddings"] = {"path": "emb.txt", "dim": 2}
        payload["model"] = helpers.small_model_section(2)  # d_w = 8
        with pytest.raises(ConfigError, match="d_w"):
            config_from_dict(payload, base_dir=str(tmp_path))


class TestUnknownKeys:
    def test_top_level_typo_rejected(self, tmp_path):
        payload = base_payload(tmp_path)
        payload["learnig_rate"] = 0.1
        with pytest.raises(ConfigError, match="learnig_rate"):
            config_from_dict(payload, base_dir=str(tmp_path))

    def test_model_section_typo_rejected(self, tmp_path):
        payload = base_payload(tmp_path)
        payload["model"] = {"d_ww": 3}
        with pytest.raises(ConfigError, match="d_ww"):
            config_from_dict(payload, base_dir=str(tmp_path))


class TestLoadYaml:
    def test_loads_relative_to_config_file(self, tmp_path):
        payload = base_payload(tmp_path)
        helpers.write_yaml(tmp_path / "train.yaml", payload)
        config = load_config(str(tmp_path / "train.yaml"))
        config.validate()
        assert config.base_dir == str(tmp_path)

    def test_out_dir_resolves_under_base(self, tmp_path):
        payload = base_payload(tmp_path)
        helpers.write_yaml(tmp_path / "train.yaml", payload)
        config = load_config(str(tmp_path / "train.yaml"))
        assert config.out_dir.startswith(str(tmp_path))
