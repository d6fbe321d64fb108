from __future__ import annotations

import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from advisum.config import DEFAULT_HYPER, RunConfig, parse_backend_overrides
from advisum.errors import ValidationError


class TestRunConfig:
    def test_defaults_valid(self):
        c = RunConfig()
        assert c.hyper == DEFAULT_HYPER and c.seed == 0

    def test_yaml_round_trip_byte_identical(self, tmp_path):
        c = RunConfig.from_dict({"seed": 3, "hyper": {"k": 5, "beta": 0.2}})
        p = tmp_path / "c.yaml"
        p.write_text(c.dump())
        again = RunConfig.load(p)
        assert again == c and again.dump() == c.dump() and again.hash == c.hash

    def test_hash_ignores_key_order(self, tmp_path):
        a = tmp_path / "a.yaml"
        b = tmp_path / "b.yaml"
        a.write_text("seed: 1\nhyper:\n  k: 4\n  beta: 0.3\n")
        b.write_text("hyper:\n  beta: 0.3\n  k: 4\nseed: 1\n")
        assert RunConfig.load(a).hash == RunConfig.load(b).hash

    def test_hash_changes_with_value(self):
        assert RunConfig(seed=1).hash != RunConfig(seed=2).hash

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValidationError):
            RunConfig.from_dict({"hyper": {"gamma": 1}})
        with pytest.raises(ValidationError):
            RunConfig.from_dict({"extras": {}})
        with pytest.raises(ValidationError):
            RunConfig.from_dict({"backends": {"painter": "mock"}})

    def test_bad_seed(self):
        with pytest.raises(ValidationError):
            RunConfig.from_dict({"seed": "x"})
        with pytest.raises(ValidationError):
            RunConfig.from_dict({"seed": True})

    def test_unparseable_yaml(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("seed: [1,\n")
        with pytest.raises(ValidationError):
            RunConfig.load(p)

    def test_overrides(self):
        c = RunConfig().with_overrides(seed=9, backends={"judge": "mock:length"}, hyper={"k": 2, "m": None})
        assert c.seed == 9 and c.backends["judge"] == "mock:length"
        assert c.hyper["k"] == 2 and c.hyper["m"] == DEFAULT_HYPER["m"]

    def test_subset_hash_scoped(self):
        a, b = RunConfig(), RunConfig().with_overrides(hyper={"beta": 0.9})
        assert a.subset_hash(["hyper.k"]) == b.subset_hash(["hyper.k"])
        assert a.subset_hash(["hyper.beta"]) != b.subset_hash(["hyper.beta"])
        assert a.subset_hash(["hyper.k"], extra="x") != a.subset_hash(["hyper.k"], extra="y")

    @given(st.integers(0, 2**40))
    def test_derived_seed_stable(self, seed):
        c = RunConfig(seed=seed)
        assert c.derived_seed("a", 1) == RunConfig(seed=seed).derived_seed("a", 1)
        assert 0 <= c.derived_seed("a") < 2**31

    def test_dump_is_yaml(self):
        assert yaml.safe_load(RunConfig().dump())["seed"] == 0


class TestBackendOverrides:
    def test_parse(self):
        assert parse_backend_overrides(["judge=mock:length", "flow=opencv"]) == {
            "judge": "mock:length", "flow": "opencv"}

    @pytest.mark.parametrize("bad", ["judge", "judge=", "painter=mock"])
    def test_reject(self, bad):
        with pytest.raises(ValidationError):
            parse_backend_overrides([bad])
