import pytest

from slidereg.config import RegistrationConfig, parse_config
from slidereg.errors import ConfigError


def test_empty_document_gives_defaults():
    cfg = parse_config("{}")
    assert cfg.preprocessing.target_long_side == 4096
    assert cfg.initial_alignment.enabled and cfg.nonrigid.enabled
    assert cfg.nonrigid.iterations == [100, 100, 50]
    assert cfg.output.tile_size == 512
    assert cfg.seed == 0


def test_rejects_unknown_top_level_key():
    with pytest.raises(ConfigError) as err:
        parse_config('{"nonrgid": {}}')
    assert err.value.path == "nonrgid"


def test_rejects_unknown_nested_key():
    with pytest.raises(ConfigError) as err:
        parse_config('{"nonrigid": {"stepp": 1}}')
    assert err.value.path == "nonrigid.stepp"


def test_rejects_out_of_range_named_by_path():
    with pytest.raises(ConfigError) as err:
        parse_config('{"nonrigid": {"step": -1}}')
    assert err.value.path == "nonrigid.step"


def test_rejects_bad_types():
    with pytest.raises(ConfigError):
        parse_config('{"seed": "zero"}')
    with pytest.raises(ConfigError):
        parse_config('{"initial_alignment": {"enabled": 1}}')
    with pytest.raises(ConfigError):
        parse_config('{"output": {"tile_size": 100}}')
    with pytest.raises(ConfigError):
        parse_config('{"output": {"interpolation": "cubic"}}')


def test_rejects_syntax_error():
    with pytest.raises(ConfigError, match="invalid JSON"):
        parse_config("{nope}")


def test_iterations_must_match_levels():
    with pytest.raises(ConfigError) as err:
        parse_config('{"nonrigid": {"levels": 2, "iterations": [5, 5, 5]}}')
    assert err.value.path == "nonrigid.iterations"
    cfg = parse_config('{"nonrigid": {"levels": 2, "iterations": [5, 3]}}')
    assert cfg.nonrigid.iterations == [5, 3]


def test_levels_without_iterations_rebuilds_defaults():
    cfg = parse_config('{"nonrigid": {"levels": 4}}')
    assert cfg.nonrigid.iterations == [100, 100, 100, 50]


def test_percentile_ranges_enforced():
    with pytest.raises(ConfigError) as err:
        parse_config('{"preprocessing": {"low_percentile": 60}}')
    assert err.value.path == "preprocessing.low_percentile"
    with pytest.raises(ConfigError):
        parse_config('{"preprocessing": {"high_percentile": 10}}')
    cfg = parse_config('{"preprocessing": {"low_percentile": 5, "high_percentile": 95}}')
    assert cfg.preprocessing.low_percentile == 5.0


def test_round_trip_idempotence():
    text = ('{"input": {"fixed": "/a.tiff", "moving": "/b.tiff"}, '
            '"nonrigid": {"levels": 2, "iterations": [7, 3], "sigma": 1.5}, '
            '"output": {"tile_size": 256, "interpolation": "nearest"}, "seed": 42}')
    cfg = parse_config(text)
    again = parse_config(cfg.to_json())
    assert again.to_dict() == cfg.to_dict()
    third = parse_config(again.to_json())
    assert third.to_dict() == again.to_dict()


def test_defaults_echoed_in_effective_config():
    cfg = parse_config('{"seed": 9}')
    d = cfg.to_dict()
    assert d["preprocessing"]["target_long_side"] == 4096
    assert d["nonrigid"]["iterations"] == [100, 100, 50]
    assert d["seed"] == 9
