import os
import subprocess
import sys
from pathlib import Path

import pytest

from caloric_lab.cli import ConfigError, SCHEMA, PRESETS, build_config, main, parse_config_text

COMMANDS = ("simulate", "heatflow", "esd", "verify", "localize")


def _write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_parse_config_comments_and_blanks():
    raw = parse_config_text("# header\n\npreset = constant  # trailing\n n=32\n")
    assert raw == {"preset": "constant", "n": "32"}
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("nonsense\n")


def test_presets_only_use_known_keys():
    for name, vals in PRESETS.items():
        assert set(vals) <= set(SCHEMA), name


def test_build_config_applies_preset_then_overrides(tmp_path):
    cfg = build_config("esd", {"preset": "constant", "n": "32"}, tmp_path)
    assert cfg.n == 32 and cfg.h == PRESETS["constant"]["h"]
    other = build_config("esd", {"preset": "constant", "n": "48"}, tmp_path)
    assert cfg.digest() != other.digest()
    assert cfg.digest() == build_config("esd", {"preset": "constant", "n": "32"}, tmp_path).digest()


@pytest.mark.parametrize("text,needle", [
    ("preset = constant\nbogus_key = 3\n", "bogus_key"),
    ("n = 32\n", "preset"),
    ("preset = constant\nn = banana\n", "n"),
    ("preset = constant\nh = -1\n", "h"),
    ("preset = nowhere\n", "nowhere"),
])
def test_config_errors_exit_3(tmp_path, capsys, text, needle):
    code = main(["esd", "--config", _write(tmp_path, text), "--out", str(tmp_path / "o")])
    assert code == 3
    assert needle in capsys.readouterr().err


def test_missing_config_file_exits_3(tmp_path):
    assert main(["esd", "--config", str(tmp_path / "absent.cfg"), "--out", str(tmp_path / "o")]) == 3


def test_bad_jobs_exits_3(tmp_path):
    cfg = _write(tmp_path, "preset = constant\n")
    assert main(["heatflow", "--config", cfg, "--jobs", "0", "--out", str(tmp_path / "o")]) == 3


def test_localize_on_energyless_data_exits_3(tmp_path, capsys):
    cfg = _write(tmp_path, "preset = constant\n")
    assert main(["localize", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


@pytest.mark.parametrize("command", ["simulate", "heatflow", "esd", "verify"])
def test_constant_preset_runs_clean(tmp_path, command):
    out = tmp_path / command
    cfg = _write(tmp_path, "preset = constant\nn = 32\nrefine_levels = 1\n")
    assert main([command, "--config", cfg, "--out", str(out)]) == 0
    summary = (out / "summary.txt").read_text().splitlines()
    assert summary[0] == f"command={command}"
    assert "status=ok" in summary
    files = summary[-1].split("=", 1)[1].split(",")
    for name in files:
        assert (out / name).is_file()
    # the summary is written after every other file
    newest = max((out / name).stat().st_mtime_ns for name in files)
    assert (out / "summary.txt").stat().st_mtime_ns >= newest
    for name in files:
        if name.endswith(".csv"):
            assert (out / name).read_text().startswith("# ")


def test_preset_flag_overrides_config(tmp_path):
    cfg = _write(tmp_path, "preset = geodesic-gaussian\nn = 32\nh = 0.25\n")
    out = tmp_path / "o"
    assert main(["heatflow", "--config", cfg, "--preset", "constant", "--out", str(out)]) == 0
    assert "preset='constant'" in (out / "config.txt").read_text()


def _run_cli(args, cwd):
    env = dict(os.environ)
    return subprocess.run([sys.executable, "-m", "caloric_lab.cli", *args], cwd=cwd, env=env,
                          capture_output=True, text=True)


def test_repeat_runs_are_bitwise_identical(tmp_path):
    cfg = _write(tmp_path, "preset = random-smooth\nn = 32\nh = 0.25\n")
    dirs = []
    import numba
    for k, jobs in enumerate(("1", str(min(2, numba.config.NUMBA_NUM_THREADS)))):
        out = tmp_path / f"run{k}"
        r = _run_cli(["esd", "--config", cfg, "--jobs", jobs, "--out", str(out)], tmp_path)
        assert r.returncode == 0, r.stderr
        dirs.append(out)
    names = sorted(p.name for p in dirs[0].iterdir() if p.name != "summary.txt")
    assert names == sorted(p.name for p in dirs[1].iterdir() if p.name != "summary.txt")
    for name in names:
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes(), name
    strip = lambda p: [l for l in (p / "summary.txt").read_text().splitlines() if not l.startswith("wall_time")]
    assert strip(dirs[0]) == strip(dirs[1])
