import dataclasses

import pytest
from hypothesis import given
from hypothesis import strategies as st

from aanexo.config import (
    apply_overrides,
    config_hash,
    flatten,
    format_value,
    parse_value,
    read_kv,
    write_kv,
)
from aanexo.harness import TrialConfig
from aanexo.plant import Condition, InvolvementCondition


class TestValues:
    @pytest.mark.parametrize("value, text", [(None, "none"), (True, "true"), (0.1, "0.1"),
                                             (Condition.FR, "FR"), ((5.0, 8.0), "5.0, 8.0"), (3, "3")])
    def test_format(self, value, text):
        assert format_value(value) == text

    @given(x=st.floats(allow_nan=False, allow_infinity=False))
    def test_float_round_trip(self, x):
        assert parse_value(format_value(x), 1.0) == x

    def test_parse_by_type(self):
        assert parse_value("off", True) is False
        assert parse_value("7", 1) == 7
        assert parse_value("EA", Condition.R) is Condition.EA
        assert parse_value("1, 2", (0.0, 0.0)) == (1.0, 2.0)
        assert parse_value("0.1, 1.3", None) == (0.1, 1.3)
        assert parse_value("none", (0.0, 1.0)) is None
        assert parse_value("none", 0.5) is None

    def test_bad_boolean(self):
        with pytest.raises(ValueError):
            parse_value("maybe", False)


class TestOverrides:
    def test_nested(self):
        cfg = apply_overrides(TrialConfig(), {"mpc.w_theta": "8000", "adaptation.enabled": "true",
                                              "duration": 12})
        assert cfg.mpc.w_theta == 8000.0
        assert cfg.adaptation.enabled is True
        assert cfg.duration == 12
        assert cfg.fuzzy == TrialConfig().fuzzy

    def test_validation_runs(self):
        with pytest.raises(ValueError):
            apply_overrides(TrialConfig(), {"adaptation.threshold": "1.5"})

    def test_unknown_key(self):
        with pytest.raises(KeyError, match="mpc.nonsense"):
            apply_overrides(TrialConfig(), {"mpc.nonsense": "1"})

    def test_scalar_has_no_subkeys(self):
        with pytest.raises(KeyError):
            apply_overrides(TrialConfig(), {"duration.x": "1"})

    def test_enum_field(self):
        cond = apply_overrides(InvolvementCondition(), {"kind": "ER", "window": "5, 8"})
        assert cond.kind is Condition.ER and cond.window == (5.0, 8.0)

    def test_empty_is_identity(self):
        cfg = TrialConfig()
        assert apply_overrides(cfg, {}) is cfg


class TestFiles:
    def test_round_trip_defaults(self, tmp_path):
        values = flatten(TrialConfig())
        write_kv(tmp_path / "c.txt", values, header="defaults\nsecond line")
        text = (tmp_path / "c.txt").read_text()
        assert text.startswith("# defaults\n# second line\n")
        back = apply_overrides(TrialConfig(), read_kv(tmp_path / "c.txt"))
        assert back == TrialConfig()

    def test_comments_and_blanks(self, tmp_path):
        (tmp_path / "c.txt").write_text("# x\n\nmpc.w_tau = 2  # inline\n")
        assert read_kv(tmp_path / "c.txt") == {"mpc.w_tau": "2"}

    def test_malformed_line(self, tmp_path):
        (tmp_path / "c.txt").write_text("mpc.w_tau 2\n")
        with pytest.raises(ValueError, match=":1:"):
            read_kv(tmp_path / "c.txt")


class TestHash:
    def test_stable_and_order_free(self):
        a = {"x": 1.0, "y": True}
        assert config_hash(a) == config_hash(dict(reversed(list(a.items()))))

    def test_every_field_matters(self):
        base = flatten(TrialConfig())
        h = config_hash(base)
        for f in ("duration", "mpc.w_theta", "fuzzy.p_assist", "emg.fs", "adaptation.threshold"):
            assert config_hash({**base, f: base[f] * 0.5}) != h

    def test_replace_changes_hash(self):
        a = flatten(TrialConfig())
        b = flatten(dataclasses.replace(TrialConfig(), fixed_mode=1.0))
        assert config_hash(a) != config_hash(b)
