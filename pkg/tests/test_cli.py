import json
import re
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from distalloc.cli import bundled_configs, main, resolve_config
from distalloc.config import ConfigError, load_config, parse_config
from reference import ROUNDED_DISPATCH_OPTIMUM

PAIR = textwrap.dedent("""\
    name: pair
    algorithm: alg1
    graph:
      nodes: 2
      undirected: true
      edges:
        - [0, 1]
    agents:
      - resource: [1.0]
        set: {type: box, lower: [-10], upper: [10]}
        cost:
          strong_convexity_modulus: 2.0
          terms:
            - {type: quadratic, Q: [[1.0]]}
      - resource: [3.0]
        set: {type: box, lower: [-10], upper: [10]}
        cost:
          strong_convexity_modulus: 2.0
          terms:
            - {type: quadratic, Q: [[1.0]]}
    params: {k1: K1, k2: 2, k3: 1, step_size: 1e-3, max_time: 5}
    initial_state: random
    seed: 11
    """)


def write(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def load_config_text(name):
    return resolve_config(name).read_text()


def pair(tmp_path, k1="2"):
    return write(tmp_path, PAIR.replace("K1", k1))


def test_bundled_configs_listed(capsys):
    assert main(["list-configs"]) == 0
    names = capsys.readouterr().out.split()
    assert names == bundled_configs()
    assert {"example1_alg1", "example1_alg2", "example2_directed", "example2_undirected"} <= set(names)


@pytest.mark.parametrize("name", ["example1_alg1", "example1_alg2", "example2_directed", "example2_undirected"])
def test_dump_config_round_trip(name, tmp_path, capsys):
    assert main(["run", name, "--dump-config"]) == 0
    dumped = capsys.readouterr().out
    again = write(tmp_path, dumped)
    assert main(["run", again, "--dump-config"]) == 0
    assert capsys.readouterr().out == dumped
    assert parse_config(dumped).to_dict() == load_config(resolve_config(name)).to_dict()


def test_dump_reflects_overrides(capsys):
    assert main(["run", "example1_alg1", "--step", "0.002", "--horizon", "7", "--seed", "5", "--dump-config"]) == 0
    cfg = parse_config(capsys.readouterr().out)
    assert cfg.params["step_size"] == 0.002 and cfg.params["max_time"] == 7 and cfg.seed == 5


def test_determinism_byte_identical(tmp_path, capsys):
    cfg = pair(tmp_path)
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["run", cfg, "--out", str(out), "--horizon", "1"]) == 0
        outs.append((out / "trajectory.csv").read_bytes())
    assert outs[0] == outs[1]
    out = tmp_path / "other_seed"
    assert main(["run", cfg, "--out", str(out), "--horizon", "1", "--seed", "12"]) == 0
    assert (out / "trajectory.csv").read_bytes() != outs[0]


def test_malformed_yaml_exit_2_with_line(tmp_path, capsys):
    bad = PAIR.replace("K1", "2").replace("  nodes: 2", "  nodes: [2")
    assert main(["run", write(tmp_path, bad)]) == 2
    err = capsys.readouterr().err
    assert re.search(r"exp\.cfg:[45]:", err), err


def test_unknown_key_exit_2_names_line(tmp_path, capsys):
    bad = PAIR.replace("K1", "2").replace("algorithm: alg1", "algorithm: alg1\nalgorythm: alg2")
    assert main(["check-params", write(tmp_path, bad)]) == 2
    err = capsys.readouterr().err
    assert "algorythm" in err and "exp.cfg:3:" in err


def test_config_error_carries_line():
    text = PAIR.replace("K1", "two")
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == text.splitlines().index(next(l for l in text.splitlines() if "two" in l)) + 1
    assert "k1" in str(info.value)


def test_missing_file_exit_2(capsys):
    assert main(["run", "no_such_config"]) == 2
    assert "bundled" in capsys.readouterr().err


def test_validation_error_exit_3(tmp_path, capsys):
    bad = PAIR.replace("K1", "2").replace("lower: [-10], upper: [10]}\n    cost:\n      strong_convexity_modulus: 2.0\n"
                                          "      terms:\n        - {type: quadratic, Q: [[1.0]]}\n  - resource: [3.0]",
                                          "lower: [10], upper: [-10]}\n    cost:\n      strong_convexity_modulus: 2.0\n"
                                          "      terms:\n        - {type: quadratic, Q: [[1.0]]}\n  - resource: [3.0]")
    assert bad != PAIR.replace("K1", "2")
    assert main(["run", write(tmp_path, bad), "--out", str(tmp_path / "o")]) == 3
    assert "agent 0" in capsys.readouterr().err


def test_nonpositive_gain_exit_codes(tmp_path, capsys):
    cfg = pair(tmp_path, k1="0")
    assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "k1" in capsys.readouterr().err
    assert main(["check-params", cfg]) == 1
    assert "k1 = 0: FAIL (gains must be positive)" in capsys.readouterr().out


def test_alg2_on_directed_graph_exit_3(tmp_path, capsys):
    text = load_config_text("example1_alg1").replace("algorithm: alg1", "algorithm: alg2")
    assert main(["run", write(tmp_path, text), "--out", str(tmp_path / "o")]) == 3
    assert "undirected" in capsys.readouterr().err


def test_divergence_exit_4(tmp_path, capsys):
    cfg = pair(tmp_path, k1="50")
    assert main(["run", cfg, "--out", str(tmp_path / "o"), "--step", "1.0", "--horizon", "5000"]) == 4
    assert "diverged" in capsys.readouterr().err


def test_check_params_directed_ring(capsys):
    assert main(["check-params", "example1_alg1"]) == 0
    out = capsys.readouterr().out
    assert "lambda2(Sym(L)) = 1" in out and "||L|| = 2" in out and "omega = 1" in out
    assert "bound k1 > 4: pass" in out and "bound k2 > 25: pass" in out
    assert "lambda2(Sym(L))" in out.split("note:")[-1]


def test_check_params_fully_distributed(capsys):
    assert main(["check-params", "example2_undirected"]) == 0
    out = capsys.readouterr().out
    assert "fully distributed: no bound required" in out
    assert "FAIL (informational)" in out


def test_check_params_gain_failure(tmp_path, capsys):
    assert main(["check-params", "example1_alg2"]) == 0
    capsys.readouterr()
    text = load_config_text("example1_alg2").replace("k2: 55", "k2: 40")
    assert main(["check-params", write(tmp_path, text)]) == 1
    assert "k2 = 40, bound k2 > 50: FAIL" in capsys.readouterr().out


def test_bundled_example1_run(tmp_path, capsys):
    out = tmp_path / "ex1"
    assert main(["run", "example1_alg1", "--out", str(out), "--verify"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    y = np.ravel(summary["terminal"]["y"])
    assert np.max(np.abs(y - ROUNDED_DISPATCH_OPTIMUM)) <= 1e-2
    assert summary["verify"]["within_tolerance"] and summary["certified"]
    assert summary["params"]["source"] == "config"
    header = (out / "trajectory.csv").read_text().splitlines()[0]
    assert header == "t,agent,coord,x,y,s,w"
    assert "wrote" in capsys.readouterr().out


def test_bundled_example2_undirected_run(tmp_path):
    out = tmp_path / "ex2"
    assert main(["run", "example2_undirected", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["params"]["k2"] == 5 and summary["kkt_max"] <= 1e-3


def test_auto_params_and_lyapunov(tmp_path):
    text = PAIR.replace("params: {k1: K1, k2: 2, k3: 1, step_size: 1e-3, max_time: 5}",
                        "params: {auto: true, max_time: 5}\noutputs: {lyapunov: true}")
    text = text.replace("undirected: true\n      edges:\n        - [0, 1]",
                        "undirected: false\n      edges:\n        - [0, 1]\n        - [1, 0]")
    text = text.replace("initial_state: random", "initial_state: zeros")
    out = tmp_path / "auto"
    assert main(["run", write(tmp_path, text), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["params"]["source"] == "auto"
    # K2 with omega = 2: k1 > 1, k2 > k1^2 / 4, both times 1.05
    assert summary["params"]["k1"] == pytest.approx(1.05)
    assert summary["params"]["k2"] == pytest.approx(1.05 * 1.05 ** 2 / 4)
    values = summary["lyapunov"]["values"]
    assert values[0] > values[-1] >= -1e-9


def test_sweep_writes_each_variant(tmp_path, capsys):
    text = PAIR.replace("K1", "2") + "sweep:\n  - {name: slow, params: {k3: 0.5}}\n  - {name: fast, params: {k3: 2}}\n"
    cfg = write(tmp_path, text)
    out = tmp_path / "sw"
    assert main(["run", cfg, "--sweep", "--out", str(out), "--horizon", "0.5"]) == 0
    for v in ("slow", "fast"):
        s = json.loads((out / v / "summary.json").read_text())
        assert s["name"] == f"pair-{v}"
        assert s["params"]["k3"] == (0.5 if v == "slow" else 2)
    assert "pair-slow: ok" in capsys.readouterr().out


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "distalloc.cli", "check-params", "example1_alg1"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "lambda2" in proc.stdout
