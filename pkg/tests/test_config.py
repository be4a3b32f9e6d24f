import pytest
import yaml

from lss.config import (
    ConfigError,
    apply_overrides,
    parse_config,
    parse_config_data,
    serialize_config,
)

MINIMAL = """
experiment:
  master_seed: 42
output:
  dir: runs/demo
"""


def parse_text(text):
    return parse_config_data(yaml.safe_load(text))


class TestDefaults:
    def test_empty_optional_sections_get_library_defaults(self):
        cfg = parse_text(MINIMAL)
        assert cfg.local.eta == 5e-4
        assert cfg.local.batch_size == 64
        assert cfg.local.tau == 8
        assert cfg.local.num_pool_models == 4
        assert cfg.local.lambda_a == 3.0
        assert cfg.local.lambda_d == 3.0
        assert cfg.strategy == "lss"
        assert cfg.partition.alpha == 1.0
        assert cfg.data.source == "blobs"

    def test_file_parse(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text(MINIMAL)
        cfg = parse_config(path)
        assert cfg.master_seed == 42
        assert cfg.output_dir == "runs/demo"


class TestValidation:
    def test_negative_alpha_names_key_path(self):
        text = MINIMAL + "partition:\n  alpha: -1\n"
        with pytest.raises(ConfigError, match="partition.alpha"):
            parse_text(text)

    def test_missing_required_key(self):
        with pytest.raises(ConfigError, match="experiment.master_seed"):
            parse_text("output:\n  dir: x\n")
        with pytest.raises(ConfigError, match="output.dir"):
            parse_text("experiment:\n  master_seed: 1\n")

    def test_unknown_key_and_section(self):
        with pytest.raises(ConfigError, match="experiment.turbo"):
            parse_text(MINIMAL + "\nexperiment:\n  master_seed: 1\n  turbo: true\n")
        with pytest.raises(ConfigError, match="extras"):
            parse_text(MINIMAL + "\nextras:\n  x: 1\n")

    def test_type_errors(self):
        with pytest.raises(ConfigError, match="experiment.rounds"):
            parse_text(MINIMAL + "\nexperiment:\n  master_seed: 1\n  rounds: '3'\n")
        with pytest.raises(ConfigError, match="analysis.zeta"):
            parse_text(MINIMAL + "\nanalysis:\n  zeta: 1\n")
        with pytest.raises(ConfigError, match="model.hidden_dims"):
            parse_text(MINIMAL + "\nmodel:\n  hidden_dims: 16\n")

    def test_bools_are_not_integers(self):
        with pytest.raises(ConfigError, match="experiment.rounds"):
            parse_text(MINIMAL + "\nexperiment:\n  master_seed: 1\n  rounds: true\n")

    def test_choice_errors(self):
        with pytest.raises(ConfigError, match="experiment.strategy"):
            parse_text(MINIMAL + "\nexperiment:\n  master_seed: 1\n  strategy: magic\n")

    def test_idx_requires_paths(self):
        with pytest.raises(ConfigError, match="images_path"):
            parse_text(MINIMAL + "\ndata:\n  source: idx\n")

    def test_fraction_budget(self):
        with pytest.raises(ConfigError, match="val_fraction"):
            parse_text(MINIMAL + "\ndata:\n  val_fraction: 0.6\n  test_fraction: 0.5\n")

    def test_local_constraints_surface_with_section(self):
        with pytest.raises(ConfigError, match="local"):
            parse_text(MINIMAL + "\nlocal:\n  eta: 0\n")


class TestRoundTrip:
    def test_serialize_then_parse_is_identity(self):
        text = MINIMAL + """
local:
  eta: 0.05
  tau: 3
model:
  hidden_dims: [8, 4]
  activation: tanh
partition:
  mode: feature_shift
"""
        cfg = parse_text(text)
        again = parse_config_data(yaml.safe_load(serialize_config(cfg)))
        assert again == cfg

    def test_serialization_is_canonical(self):
        cfg = parse_text(MINIMAL)
        assert serialize_config(cfg) == serialize_config(
            parse_config_data(yaml.safe_load(serialize_config(cfg)))
        )


class TestOverrides:
    def test_override_values_are_yaml_typed(self):
        raw = yaml.safe_load(MINIMAL)
        out = apply_overrides(raw, ["local.lambda_a=3", "local.eta=5e-4", "analysis.bvcl=true"])
        cfg = parse_config_data(out)
        assert cfg.local.lambda_a == 3
        assert cfg.local.eta == 5e-4
        assert cfg.analysis.bvcl is True

    def test_override_creates_missing_section(self):
        out = apply_overrides(yaml.safe_load(MINIMAL), ["partition.alpha=0.3"])
        assert parse_config_data(out).partition.alpha == 0.3

    def test_bad_override_shapes(self):
        with pytest.raises(ConfigError, match="section.key=value"):
            apply_overrides({}, ["local.lambda_a"])
        with pytest.raises(ConfigError, match="dotted"):
            apply_overrides({}, ["lambda_a=3"])

    def test_unknown_override_key_rejected_at_parse(self):
        out = apply_overrides(yaml.safe_load(MINIMAL), ["local.nope=3"])
        with pytest.raises(ConfigError, match="local.nope"):
            parse_config_data(out)
