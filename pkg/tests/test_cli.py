from __future__ import annotations

import json

import pytest
import yaml
from click.testing import CliRunner

from advisum.cli import main
from conftest import small_config


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text(small_config().dump())
    return p


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


class TestCli:
    def test_help_lists_stages(self):
        out = invoke("--help").output
        for name in ["ingest", "frames", "bos", "generate", "train-dpo", "rank", "evaluate", "report", "run-all"]:
            assert name in out

    def test_config_prints_yaml_and_hash(self, cfg_file):
        r = invoke("config", "--config", cfg_file, "--seed", 11)
        assert r.exit_code == 0
        body, _, tail = r.output.rpartition("# hash: ")
        assert yaml.safe_load(body)["seed"] == 11 and len(tail.strip()) == 64

    def test_run_all_then_cached(self, tmp_path, manifest, cfg_file):
        run = tmp_path / "run"
        r = invoke("run-all", "--manifest", manifest, "--run", run, "--config", cfg_file)
        assert r.exit_code == 0, r.output
        assert "bundles:" in r.output and (run / "report" / "a1.json").exists()
        again = invoke("run-all", "--manifest", manifest, "--run", run, "--config", cfg_file)
        assert again.exit_code == 0 and sum(" cached [" in l for l in again.output.splitlines()) == 8

    def test_stale_exit_code(self, tmp_path, manifest, cfg_file):
        run = tmp_path / "run"
        assert invoke("ingest", "--manifest", manifest, "--run", run, "--config", cfg_file).exit_code == 0
        assert invoke("frames", "--run", run, "--config", cfg_file).exit_code == 0
        stale = invoke("frames", "--run", run, "--config", cfg_file, "--budget", 4)
        assert stale.exit_code == 3 and "force" in stale.output
        forced = invoke("frames", "--run", run, "--config", cfg_file, "--budget", 4, "--force")
        assert forced.exit_code == 0
        assert len(json.loads((run / "frames" / "a1.json").read_text())["selected"]) == 4

    def test_missing_dependency_exit_code(self, tmp_path, cfg_file):
        r = invoke("frames", "--run", tmp_path / "run", "--config", cfg_file)
        assert r.exit_code == 3 and "ingest" in r.output

    def test_malformed_manifest_exit_code(self, tmp_path, cfg_file):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{not json\n")
        r = invoke("ingest", "--manifest", bad, "--run", tmp_path / "run", "--config", cfg_file)
        assert r.exit_code == 4

    def test_bad_backend_flag(self, tmp_path, manifest):
        r = invoke("ingest", "--manifest", manifest, "--run", tmp_path / "run", "--backend", "painter=mock")
        assert r.exit_code == 4

    def test_usage_error_is_two(self):
        assert invoke("frames").exit_code == 2
