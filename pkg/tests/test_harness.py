import csv

import pytest

from kernelbounds.harness.cli import main
from kernelbounds.harness.commands import (EXIT_HYPOTHESIS, EXIT_MISSING, EXIT_OK, fmt, workers)
from kernelbounds.harness.config import ConfigError, parse_config

BASE = """
[operator]
family = polynomial
m = 2
p = 3
s = {s}
potential = {potential}

[lyapunov]
k = 10

[solver]
n = 3001
dt = 0.005
"""


def write_cfg(tmp_path, s=4, potential="true", extra=""):
    path = tmp_path / "run.ini"
    path.write_text(BASE.format(s=s, potential=potential) + extra)
    return str(path)


def rows(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    return list(csv.DictReader(lines))


def test_parse_defaults():
    cfg = parse_config("[operator]\nfamily = heat\n")
    assert cfg.solver.n == 12001 and cfg.validation.t_sweep == (0.05, 0.1, 0.2, 0.4)
    assert cfg.mc.paths == 100_000 and cfg.lyapunov.k == 10
    assert cfg.t_end == pytest.approx(0.8)


def test_parse_lists_comments_overrides():
    cfg = parse_config("""
[operator]
family = polynomial   # the prototype
[lyapunov]
k = 12
alpha = 1.1
[validation]
t_sweep = 0.1, 0.2
""")
    assert cfg.validation.t_sweep == (0.1, 0.2)
    assert dict(cfg.lyapunov.overrides) == {"alpha": 1.1}
    assert cfg.build_params().alpha == 1.1


@pytest.mark.parametrize("text", ["", "[solver]\nn = 5\n", "[operator]\nm = 2\n",
                                  "[operator]\nfamily = polynomial\nm = two\n"])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_unknown_family():
    with pytest.raises(ConfigError):
        parse_config("[operator]\nfamily = cubic\n").build_spec()


def test_hash_tracks_content():
    a = parse_config("[operator]\nfamily = heat\n")
    b = parse_config("[operator]\nfamily = heat\n# comment\n")
    c = parse_config("[operator]\nfamily = heat\nq = 2\n")
    assert a.hash == b.hash != c.hash


def test_fmt_round_trip():
    assert fmt(0.1) == "0.1" and fmt(True) == "true" and fmt(3) == "3"
    v = 1 / 3
    assert float(fmt(v)) == v


def test_workers_env(monkeypatch):
    monkeypatch.setenv("KB_WORKERS", "3")
    assert workers() == 3
    monkeypatch.delenv("KB_WORKERS")
    assert workers() >= 1


def test_config_rejection_exit_code(tmp_path, capsys):
    code = main(["check", "--config", write_cfg(tmp_path, s=0), "--out", str(tmp_path)])
    assert code == EXIT_HYPOTHESIS
    assert "s > |m-2|" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["check", "--config", str(tmp_path / "none.ini")]) == EXIT_HYPOTHESIS


def test_missing_artifacts(tmp_path):
    cfg = write_cfg(tmp_path)
    out = str(tmp_path / "o")
    for cmd in ("validate", "crosscheck", "constants"):
        assert main([cmd, "--config", cfg, "--out", out]) == EXIT_MISSING


def test_dry_runs_write_nothing_but_constants(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "o"
    for cmd in ("check", "solve", "validate", "crosscheck", "approx"):
        assert main([cmd, "--config", cfg, "--out", str(out), "--dry-run"]) == EXIT_OK
    assert list(out.iterdir()) == []


def test_constants_dry_run(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "o"
    assert main(["constants", "--config", cfg, "--out", str(out), "--dry-run",
                 "--t", "0.4"]) == EXIT_OK
    text = (out / "constants.csv").read_text()
    assert text.splitlines()[-1].startswith("# config-hash=")
    r = {row["name"]: row for row in rows(out / "constants.csv")}
    assert float(r["B8"]["value"]) == 2.0
    assert float(r["A1"]["value"]) == 1.0
    window = [float(v) for v in r["window"]["value"].split(";")]
    assert window == pytest.approx([0.2, 0.4, 0.45, 0.55, 0.6, 0.8])


def test_constants_bad_t(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["constants", "--config", cfg, "--out", str(tmp_path / "o"), "--dry-run",
                 "--t", "0.6"]) == EXIT_HYPOTHESIS


def test_check_writes_reproducible_csv(tmp_path):
    cfg = write_cfg(tmp_path)
    outs = [tmp_path / "a", tmp_path / "b"]
    for o in outs:
        assert main(["check", "--config", cfg, "--out", str(o)]) == EXIT_OK
    for name in ("hypotheses.csv", "lyapunov.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    table = rows(outs[0] / "hypotheses.csv")
    assert list(table[0]) == ["id", "measured", "clamped", "closed_form", "pass", "refined",
                              "stable"]
    assert all(r["pass"] == "true" for r in table)


def test_check_zero_potential(tmp_path):
    cfg = write_cfg(tmp_path, potential="false")
    out = tmp_path / "o"
    assert main(["check", "--config", cfg, "--out", str(out)]) == EXIT_OK
    c5 = next(r for r in rows(out / "hypotheses.csv") if r["id"] == "H2.3(c)(v)")
    assert float(c5["measured"]) == 0.0 and float(c5["clamped"]) == 1.0 and c5["pass"] == "true"


def test_solve_then_constants(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "o"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == EXIT_OK
    lines = (out / "kernel.csv").read_text().splitlines()
    assert lines[0] == "t,y,p,grad_p" and lines[-1].startswith("# config-hash=")
    assert (out / "kernel.npz").is_file()
    f = rows(out / "functionals.csv")
    assert [float(r["t"]) for r in f] == [0.05, 0.1, 0.2, 0.4]
    assert all(float(r["Xi1"]) <= float(r["Xi2"]) for r in f)
    assert main(["constants", "--config", cfg, "--out", str(out),
                 "--mode", "closed-form"]) == EXIT_OK
    r = {(row["name"], row["mode"]): row for row in rows(out / "constants.csv")}
    assert float(r[("K", "closed-form")]["log10"]) > 0
