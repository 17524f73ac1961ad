import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowdistill.config import format_config, get_float, get_int, parse_config, read_config, write_config
from flowdistill.core import FormatError


def test_parse_comments_and_whitespace():
    text = "# scene\nheight = 32\n\nwidth=64  # px\nname = a=b\n"
    assert parse_config(text) == {"height": "32", "width": "64", "name": "a=b"}


@pytest.mark.parametrize("text", ["just words\n", "=3\n", "a=1\na=2\n"])
def test_parse_errors(text):
    with pytest.raises(FormatError):
        parse_config(text)


def test_typed_getters():
    cfg = {"x": "1.5", "n": "3", "bad": "nope"}
    assert get_float(cfg, "x", 0.0) == 1.5
    assert get_float(cfg, "missing", 2.0) == 2.0
    assert get_int(cfg, "n", 0) == 3
    with pytest.raises(FormatError):
        get_float(cfg, "bad", 0.0)
    with pytest.raises(FormatError):
        get_int(cfg, "x", 0)


keys = st.from_regex(r"[a-z_][a-z0-9_]{0,10}", fullmatch=True)


@given(st.dictionaries(keys, st.floats(allow_nan=False, allow_infinity=False)))
def test_float_round_trip_is_exact(values):
    back = parse_config(format_config(values))
    assert {k: float(v) for k, v in back.items()} == values


def test_file_round_trip(tmp_path):
    write_config(tmp_path / "c.cfg", {"a": 0.1, "b": "border", "c": 3})
    assert read_config(tmp_path / "c.cfg") == {"a": "0.1", "b": "border", "c": "3"}
