import numpy as np
import pytest

from fracblow.config import (
    PRESETS,
    check_expression,
    eval_expression,
    parse_config,
    preset,
    serialize_config,
)
from fracblow.errors import ConfigError
from fracblow.spectral import make_grid

BASE = "d = 1\ns = 0.6\nn = 256\nbox = 16\nmass_critical = true\n"


def kinds(text):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    return [(p.line, p.kind) for p in info.value.problems]


def test_minimal():
    cfg = parse_config(BASE)
    assert cfg.alpha == pytest.approx(2.4)
    assert cfg.model.mass_critical()
    assert cfg.grid.n == 256


def test_comments_and_blank_lines():
    cfg = parse_config("# header\n\n" + BASE + "label = x  # trailing\n")
    assert cfg.label == "x"


def test_all_problems_reported_together():
    text = "d = 1\ns = abc\nfoo = 3\nn = -4\nn = 8\nbox\n"
    got = kinds(text)
    assert (2, "TypeError") in got
    assert (3, "UnknownKey") in got
    assert (4, "RangeError") in got
    assert (5, "DuplicateKey") in got
    assert (6, "SyntaxError") in got
    assert (0, "MissingKey") in got


def test_alpha_contradicts_mass_critical():
    assert (6, "RangeError") in kinds(BASE + "alpha = 2\n")


def test_alpha_required_otherwise():
    assert (0, "MissingKey") in kinds("d = 1\ns = 0.6\nn = 256\nbox = 16\n")


def test_window_epsilon_range():
    assert (6, "RangeError") in kinds(BASE + "window_epsilon = 0.9\n")


def test_rates_length():
    got = kinds(BASE + "amplitudes = 1, 0.5, 0.2\nrates = 3, 4\n")
    assert any(k == "RangeError" for _, k in got)


def test_missing_initial_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(BASE + "initial = file:nothere.fld\n", base_dir=tmp_path)


def test_bad_expression():
    with pytest.raises(ConfigError):
        parse_config(BASE + "initial = __import__('os')\n")
    with pytest.raises(ValueError):
        check_expression("Q.values")


def test_expression_values():
    g = make_grid(1, 16, 4.0)
    q = np.exp(-g.axis**2)
    out = eval_expression("1.2*Q*exp(I*x) + sech(x)", g, q)
    np.testing.assert_allclose(out, 1.2 * q * np.exp(1j * g.axis) + 1 / np.cosh(g.axis))


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_serialize_round_trip(name):
    cfg = preset(name)
    assert parse_config(serialize_config(cfg)) == cfg


def test_unknown_preset():
    with pytest.raises(KeyError):
        preset("nope")
