import json
import subprocess
import sys
import time
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparsebulk import cli
from sparsebulk.config import ConfigError, git_blob_hash, load, loads
from sparsebulk.experiments import describe, list_experiments

ROOT = Path(__file__).resolve().parents[1]
MINIMAL = """experiment: locallaw
ensemble:
  n: 128
  model: sparse
  epsilon: 0.4
geometry:
  tau: 0.5
  eta_count: 3
sampling:
  seed: 1
  samples: 20
"""


def write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_describe_lists_five_experiments(capsys):
    assert list_experiments() == ["locallaw", "flow", "stats", "schur", "detchains"]
    assert cli.main(["describe"]) == 0
    assert capsys.readouterr().out.split() == list_experiments()


def test_describe_texts():
    assert "m_t = e^{t/2} m_0" in describe("flow")
    assert "multi-resolvent local law" in describe("locallaw")
    with pytest.raises(KeyError):
        describe("nope")
    assert cli.main(["describe", "nope"]) == 2


def test_git_hash_matches_git(tmp_path):
    p = write(tmp_path, MINIMAL)
    out = subprocess.run(["git", "hash-object", str(p)], capture_output=True, text=True, check=True)
    assert load(p).config_hash == out.stdout.strip() == git_blob_hash(p.read_bytes())


@given(st.binary(max_size=200))
def test_git_hash_format(data):
    h = git_blob_hash(data)
    assert len(h) == 40 and int(h, 16) >= 0


def test_loads_defaults():
    cfg = loads(MINIMAL)
    assert cfg.ensemble.n == 128 and cfg.seed == 1 and cfg.geometry.z == 0.3
    assert cfg.ensemble_spec().model == "sparse"


@pytest.mark.parametrize("text, line, needle", [
    (MINIMAL.replace("  tau: 0.5", "  tau: 0.5\n  bogus: 1"), 8, "unknown key geometry.bogus"),
    (MINIMAL.replace("n: 128", "n: many"), 3, "ensemble.n"),
    (MINIMAL + "extra: 1\n", 12, "unknown top-level key"),
    (MINIMAL.replace("  seed: 1\n", ""), 9, "sampling.seed"),
    (MINIMAL.replace("samples: 20", "samples: 5"), 11, "at least 20 samples"),
    (MINIMAL.replace("tau: 0.5", "tau: 0.9\n  delta: 5"), 7, "geometry.tau: empty eta grid"),
    (MINIMAL.replace("geometry:\n  tau: 0.5\n  eta_count: 3", "geometry: [1]"), 6, "geometry must be a mapping"),
])
def test_schema_errors_name_line(text, line, needle):
    with pytest.raises(ConfigError) as err:
        loads(text, "run.yaml")
    assert err.value.line == line
    assert needle in str(err.value) and f"run.yaml:{line}" in str(err.value)


def test_seed_block_is_mandatory():
    text = MINIMAL.split("sampling:")[0]
    with pytest.raises(ConfigError, match="seed is mandatory"):
        loads(text)


def test_duplicate_keys_rejected():
    with pytest.raises(ConfigError, match="duplicate key"):
        loads(MINIMAL.replace("  n: 128", "  n: 128\n  n: 64"))


def test_scientific_notation_strings_are_floats():
    cfg = loads(MINIMAL.replace("  tau: 0.5", "  tau: 5e-1"))
    assert cfg.geometry.tau == 0.5


def test_overrides():
    cfg = loads(MINIMAL).with_overrides(seed=9, threads=2, out="x", samples=30)
    assert (cfg.seed, cfg.sampling.threads, cfg.output.dir, cfg.sampling.samples) == (9, 2, "x", 30)


def test_cli_config_error_exit_code(tmp_path, capsys):
    p = write(tmp_path, MINIMAL.replace("  tau: 0.5", "  tau: 0.5\n  bogus: 1"))
    assert cli.main(["locallaw", "--config", str(p)]) == 2
    assert f"config error: {p}:8" in capsys.readouterr().err


def test_cli_wrong_subcommand(tmp_path):
    p = write(tmp_path, MINIMAL)
    assert cli.main(["flow", "--config", str(p)]) == 2


def test_cli_missing_file(tmp_path):
    assert cli.main(["locallaw", "--config", str(tmp_path / "none.yaml")]) == 2


def test_threads_precedence(monkeypatch):
    cfg = loads(MINIMAL)
    monkeypatch.setenv("SPARSEBULK_THREADS", "3")
    assert cli.resolve_threads(None, cfg) == 3
    assert cli.resolve_threads(2, cfg) == 2
    assert cli.resolve_threads(None, cfg.with_overrides(threads=4)) == 4


@pytest.fixture(scope="module")
def locallaw_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("ll")
    cfg = out / "run.yaml"
    cfg.write_text(MINIMAL)
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "sparsebulk.cli", "locallaw", "--config", str(cfg),
                           "--out", str(out / "a"), "--threads", "1"], capture_output=True, text=True)
    return cfg, out, proc, time.perf_counter() - start


def test_cli_locallaw_budget_and_artifacts(locallaw_run):
    cfg, out, proc, elapsed = locallaw_run
    assert proc.returncode == 0, proc.stderr
    assert elapsed < 60
    files = sorted(p.name for p in (out / "a").iterdir())
    assert files == ["locallaw.csv", "locallaw.json", "locallaw_report.txt"]
    summary = json.loads((out / "a" / "locallaw.json").read_text())
    assert summary["config_hash"] == summary["results"]["config_hash"] == load(cfg).config_hash
    assert summary["seed"] == 1


def test_cli_rerun_is_byte_identical(locallaw_run):
    cfg, out, proc, _ = locallaw_run
    assert cli.main(["locallaw", "--config", str(cfg), "--out", str(out / "b"), "--threads", "2"]) == 0
    assert (out / "a" / "locallaw.csv").read_bytes() == (out / "b" / "locallaw.csv").read_bytes()


def test_cli_seed_override_changes_data(locallaw_run):
    cfg, out, proc, _ = locallaw_run
    assert cli.main(["locallaw", "--config", str(cfg), "--out", str(out / "c"), "--seed", "2"]) == 0
    assert (out / "a" / "locallaw.csv").read_bytes() != (out / "c" / "locallaw.csv").read_bytes()


def test_cli_numeric_error_writes_manifest(tmp_path, monkeypatch):
    def boom(cfg):
        raise ArithmeticError("no sign change")

    monkeypatch.setitem(cli.RUNNERS, "locallaw", boom)
    p = write(tmp_path, MINIMAL)
    assert cli.main(["locallaw", "--config", str(p), "--out", str(tmp_path / "o")]) == 3
    manifest = json.loads((tmp_path / "o" / "locallaw_error.json").read_text())
    assert manifest["status"] == "numeric_error" and manifest["error_type"] == "ArithmeticError"
    assert manifest["seed"] == 1


@pytest.mark.parametrize("name", ["flow", "stats", "schur", "detchains"])
def test_shipped_configs_validate(name):
    cfg = load(ROOT / "configs" / f"{name}.yaml")
    assert cfg.experiment == name


def test_shipped_detchains_runs(tmp_path):
    assert cli.main(["detchains", "--config", str(ROOT / "configs" / "detchains.yaml"),
                     "--out", str(tmp_path)]) == 0
    assert (tmp_path / "detchains.csv").exists()


def test_cli_sample(tmp_path):
    assert cli.main(["sample", "--config", str(ROOT / "configs" / "schur.yaml"), "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "sample.csv").read_text().splitlines()
    assert len(rows) > 1
