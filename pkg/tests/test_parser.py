"""Run config parsing, dumping and cross-group validation."""

import pytest

from mprnet.errors import ConfigError
from mprnet.parser import RunConfigParser, dump_config, parse_assignment, parse_run_config, threads_from_env
from mprnet.validator import validate_config

SAMPLE = """
# toy denoising run
base_width=8
n_stages=3
noise_sigma=0.09803921568627451   # 25/255
patch_size=32
iters=10
lr_init=1e-3
augment_flips=false
degradation=gaussian_noise
"""


@pytest.fixture
def parser():
    return RunConfigParser()


class TestParsing:
    def test_routes_keys_to_groups(self, parser):
        config = parser.parse_string(SAMPLE)
        assert config.model.base_width == 8
        assert config.train.patch_size == 32
        assert config.train.augment_flips is False
        assert config.optim.lr_init == 1e-3
        assert config.degrade.noise_sigma == 0.09803921568627451
        assert parser.parsed_config is config

    def test_defaults_and_derived(self, parser):
        config = parser.parse_string("")
        assert config.model.n_stages == 3
        assert config.loss.lambda_edge == 0.05
        assert config.optim.total_iters == config.train.iters == 3000
        assert config.model.init_seed == config.train.seed == 0

    def test_explicit_total_iters_kept(self, parser):
        config = parser.parse_string("iters=10\ntotal_iters=50\nseed=4\ninit_seed=9")
        assert config.optim.total_iters == 50
        assert config.model.init_seed == 9

    def test_parse_file(self, parser, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(SAMPLE)
        assert parser.parse_file(path).train.iters == 10
        assert parse_run_config(path, ["iters=4"]).train.iters == 4

    def test_missing_file(self, parser, tmp_path):
        with pytest.raises(ConfigError, match="File not found"):
            parser.parse_file(tmp_path / "absent.cfg")

    def test_overrides_win(self, parser):
        config = parser.parse_string(SAMPLE, ["iters=2", "use_sam=false"])
        assert config.train.iters == 2
        assert config.model.use_sam is False

    def test_duplicate_key(self, parser):
        with pytest.raises(ConfigError, match="duplicate key") as excinfo:
            parser.parse_string("iters=1\niters=2")
        assert excinfo.value.key == "iters"

    def test_unknown_key(self, parser):
        with pytest.raises(ConfigError) as excinfo:
            parser.parse_string("iterations=5")
        assert excinfo.value.key == "iterations"

    def test_unknown_override(self, parser):
        with pytest.raises(ConfigError) as excinfo:
            parser.parse_string(SAMPLE, ["warp=9"])
        assert excinfo.value.key == "warp"

    def test_missing_equals(self, parser):
        with pytest.raises(ConfigError, match="expected key=value"):
            parser.parse_string("base_width 8")

    def test_invalid_value_names_key(self, parser):
        with pytest.raises(ConfigError) as excinfo:
            parser.parse_string("n_stages=4")
        assert excinfo.value.key == "n_stages"
        assert any("n_stages" in error for error in excinfo.value.errors)

    def test_even_kernel_rejected(self, parser):
        with pytest.raises(ConfigError) as excinfo:
            parser.parse_string("blur_size=4")
        assert excinfo.value.key == "blur_size"

    def test_bad_activation(self, parser):
        with pytest.raises(ConfigError, match="activation"):
            parser.parse_string("activation=swish")

    def test_empty_value_means_default(self, parser):
        assert parser.parse_string("train_dir=\n").train.train_dir is None

    @pytest.mark.parametrize("line, expected", [
        ("a=1", ("a", 1)),
        ("a = 2.5 ", ("a", 2.5)),
        ("a=1e-3", ("a", 1e-3)),
        ("a=true", ("a", True)),
        ("a=runs/x", ("a", "runs/x")),
        ("  # only a comment", None),
        ("", None),
    ])
    def test_assignment_typing(self, line, expected):
        assert parse_assignment(line) == expected

    @pytest.mark.parametrize("line, expected", [
        ("out_dir=runs/exp#3", ("out_dir", "runs/exp#3")),
        ("out_dir=runs/exp#3  # third try", ("out_dir", "runs/exp#3")),
        ("iters=12\t# tab before comment", ("iters", 12)),
        ("#iters=12", None),
    ])
    def test_hash_inside_value(self, line, expected):
        assert parse_assignment(line) == expected

    @pytest.mark.parametrize("raw", ["123", "true", "1e-3", "null", "[a, b]", "out: here"])
    def test_text_fields_not_yaml_typed(self, parser, raw):
        config = parser.parse_string(f"out_dir={raw}\ntrain_dir={raw}")
        assert config.train.out_dir == raw
        assert config.train.train_dir == raw

    def test_text_field_override_with_hash(self, parser):
        assert parser.parse_string("", ["out_dir=runs/a#b"]).train.out_dir == "runs/a#b"


class TestDump:
    def test_roundtrip(self, parser):
        config = parser.parse_string(SAMPLE, ["train_dir=data/train"])
        again = parser.parse_string(dump_config(config))
        assert again == config

    def test_sections(self, parser):
        text = dump_config(parser.parse_string(""))
        for group in ("# model", "# train", "# optim", "# loss", "# degrade"):
            assert group in text
        assert "augment_flips=true" in text
        assert "train_dir=\n" in text


class TestValidator:
    def test_valid(self, parser):
        is_valid, errors = validate_config(parser.parse_string(SAMPLE))
        assert is_valid and errors == []

    def test_patch_geometry(self, parser):
        is_valid, errors = validate_config(parser.parse_string("n_scales=3\npatch_size=20\nval_size=16"))
        assert not is_valid
        assert len(errors) == 1 and "patch_size=20" in errors[0]

    @pytest.mark.parametrize("size", [4, 8])
    def test_val_size_below_ssim_window(self, parser, size):
        is_valid, errors = validate_config(parser.parse_string(f"n_scales=1\nval_size={size}"))
        assert not is_valid
        assert len(errors) == 1 and f"val_size={size}" in errors[0] and "SSIM" in errors[0]

    def test_val_size_at_ssim_window(self, parser):
        assert validate_config(parser.parse_string("n_scales=1\npatch_size=12\nval_size=12"))[0]

    def test_total_iters_too_small(self, parser):
        is_valid, errors = validate_config(parser.parse_string("iters=10\ntotal_iters=5"))
        assert not is_valid
        assert "total_iters=5" in errors[0]

    def test_blur_larger_than_patch(self, parser):
        config = parser.parse_string("degradation=box_blur\nblur_size=71\npatch_size=64\nval_size=64")
        is_valid, errors = validate_config(config)
        assert not is_valid and "blur_size=71" in errors[0]

    def test_blur_ignored_for_noise(self, parser):
        assert validate_config(parser.parse_string("blur_size=71\npatch_size=64"))[0]

    def test_train_dir_must_exist(self, parser, tmp_path):
        assert validate_config(parser.parse_string(f"train_dir={tmp_path}"))[0]
        is_valid, errors = validate_config(parser.parse_string(f"train_dir={tmp_path / 'nope'}"))
        assert not is_valid and "not a directory" in errors[0]

    def test_collects_every_error(self, parser):
        config = parser.parse_string("patch_size=30\nval_size=30\niters=10\ntotal_iters=5")
        is_valid, errors = validate_config(config)
        assert not is_valid and len(errors) == 3


class TestThreads:
    def test_default(self):
        assert threads_from_env({}) == 1
        assert threads_from_env({"MPRF_THREADS": " "}) == 1

    def test_value(self):
        assert threads_from_env({"MPRF_THREADS": "4"}) == 4

    @pytest.mark.parametrize("raw", ["0", "-2", "many"])
    def test_invalid(self, raw):
        with pytest.raises(ConfigError) as excinfo:
            threads_from_env({"MPRF_THREADS": raw})
        assert excinfo.value.key == "MPRF_THREADS"

    def test_reads_environment(self, monkeypatch):
        monkeypatch.setenv("MPRF_THREADS", "3")
        assert threads_from_env() == 3
