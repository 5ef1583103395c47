import json
import math

import numpy as np
import pytest

from kellersegel import __version__, cli, config, storage
from kellersegel.errors import ConfigError, InstabilityError
from kellersegel.spectral import Field, GridSpec

A_4PI = 1.106460191354122

HEAT_CONFIG = """\
# pure heat flow in rescaled variables
grid.n = 128
grid.L = 12
params.epsilon = 1
params.chemotaxis = false
init.mass = 1
init.sigma = 1
solver.dt = 0.01
solver.frame = rescaled
solver.t_end = 100
output.every = 10
"""


def write_config(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text + f"output.dir = {tmp_path / 'runs'}\n")
    return p


# ---------------------------------------------------------------- config

def test_config_defaults_and_hash(tmp_path):
    rc = config.load(write_config(tmp_path, HEAT_CONFIG))
    assert rc["grid.n"] == 128 and rc["params.alpha"] == 0.0
    assert rc["params.chemotaxis"] is False
    assert rc["solver.scheme"] == "etd2"
    # reordering and comments do not change the hash
    lines = [l for l in HEAT_CONFIG.splitlines() if l and not l.startswith("#")]
    alt = "\n".join(reversed(lines)) + "\n# trailing\n"
    rc2 = config.load(write_config(tmp_path, alt, "alt.cfg"))
    assert rc.hash == rc2.hash and len(rc.run_id) == 12


def test_config_frame_dependent_half_width():
    rc = config.resolve({"params.epsilon": "1", "init.mass": "1", "solver.dt": "0.1",
                         "solver.t_end": "1"})
    assert rc["grid.L"] == 20.0
    rc = config.resolve({"params.epsilon": "1", "init.mass": "1", "solver.dt": "0.1",
                         "solver.t_end": "1", "solver.frame": "rescaled"})
    assert rc["grid.L"] == 12.0


@pytest.mark.parametrize("text", [
    "grid.foo = 1\n",
    "grid.n = 100\n",
    "grid.n = 128\ngrid.n = 256\n",
    "params.epsilon = -1\n",
    "solver.scheme = rk4\n",
    "no equals sign\n",
    "params.chemotaxis = maybe\n",
])
def test_config_rejections(tmp_path, text):
    base = "params.epsilon = 1\ninit.mass = 1\nsolver.dt = 0.1\nsolver.t_end = 1\n"
    p = tmp_path / "bad.cfg"
    p.write_text(text + (base if "params.epsilon" not in text else base.split("\n", 1)[1]))
    with pytest.raises(ConfigError):
        config.load(p)


def test_config_missing_required(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("grid.n = 64\n")
    with pytest.raises(ConfigError, match="missing"):
        config.load(p)


def test_env_and_command_line_overrides(tmp_path):
    p = write_config(tmp_path, HEAT_CONFIG)
    env = {"KELLERSEGEL_GRID_N": "256", "KELLERSEGEL_SOLVER_DT": "0.02"}
    rc = config.load(p, ["solver.dt=0.005"], environ=env)
    assert rc["grid.n"] == 256
    assert rc["solver.dt"] == 0.005
    assert config.env_name("params.epsilon") == "KELLERSEGEL_PARAMS_EPSILON"
    with pytest.raises(ConfigError):
        config.load(p, ["nope=1"])


# ---------------------------------------------------------------- storage

def test_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(1)
    data = rng.standard_normal((5, 3)) * 10.0 ** rng.integers(-20, 20, (5, 3))
    path = storage.write_csv(tmp_path / "x.csv", ["a", "b", "c"], data, "abc123")
    first = path.read_text().splitlines()[0]
    assert first == f"# kellersegel {__version__} config_hash=abc123"
    meta, cols = storage.read_csv(path)
    assert meta == {"version": __version__, "config_hash": "abc123"}
    assert np.array_equal(np.column_stack([cols["a"], cols["b"], cols["c"]]), data)


def test_json_embeds_version_and_hash(tmp_path):
    p = storage.write_json(tmp_path / "s.json", {"A": math.inf, "ok": np.bool_(True),
                                                 "v": np.arange(3)}, "h")
    doc = json.loads(p.read_text())
    assert doc["version"] == __version__ and doc["config_hash"] == "h"
    assert doc["A"] == "inf" and doc["ok"] is True and doc["v"] == [0, 1, 2]


def test_snapshot_round_trip(tmp_path):
    g = GridSpec(32, 3.0)
    f = Field(g, np.random.default_rng(0).standard_normal((32, 32)))
    p = storage.write_snapshot(tmp_path / "u.snap", f, "u", 1.25, "hh", {"frame": "physical"})
    back, name, t, info = storage.read_snapshot(p)
    assert name == "u" and t == 1.25 and back.grid == g
    assert np.array_equal(back.values, f.values)
    assert info["config_hash"] == "hh" and info["frame"] == "physical"
    csv_path = storage.snapshot_to_csv(p, tmp_path / "u.csv")
    _, cols = storage.read_csv(csv_path)
    assert cols["u"].size == 32 * 32


def test_snapshot_rejects_garbage(tmp_path):
    p = tmp_path / "bad.snap"
    p.write_bytes(b"nonsense")
    with pytest.raises(storage.SnapshotFormatError):
        storage.read_snapshot(p)
    g = GridSpec(32, 3.0)
    good = storage.write_snapshot(tmp_path / "g.snap", Field(g, np.zeros((32, 32))), "u", 0.0)
    good.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(storage.SnapshotFormatError):
        storage.read_snapshot(good)


# ---------------------------------------------------------------- profile commands

def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_profile_thresholds(capsys):
    code, out, _ = run_cli(capsys, "profile", "thresholds", "--epsilon", "0.5")
    doc = json.loads(out)
    assert code == 0
    assert doc["tilde_M"] == 8 * math.pi and doc["A"] == "inf"


def test_profile_invert(capsys):
    code, out, _ = run_cli(capsys, "profile", "invert", "--mass", repr(4 * math.pi),
                           "--epsilon", "0.5")
    assert code == 0
    assert json.loads(out)["a"] == pytest.approx(A_4PI, rel=1e-7)
    code, _, err = run_cli(capsys, "profile", "invert", "--mass", "20", "--epsilon", "2")
    assert code == 2 and "threshold" in err
    code, out, err = run_cli(capsys, "profile", "invert", "--mass", "14", "--epsilon", "2",
                             "--allow-nonunique")
    assert code == 0 and json.loads(out)["unique"] is False


def test_profile_shoot_deterministic(tmp_path, capsys):
    for d in ("a", "b"):
        code, _, _ = run_cli(capsys, "profile", "shoot", "--a", "1", "--epsilon", "1",
                             "--out", str(tmp_path / d))
        assert code == 0
    for f in ("shoot.csv", "shoot.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    doc = json.loads((tmp_path / "a" / "shoot.json").read_text())
    assert all(doc["bounds_ok"])


def test_profile_map_and_reconstruct(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "profile", "map", "--epsilon", "0.5", "--a-min", "0.1",
                           "--a-max", "10", "--n", "6", "--out", str(tmp_path))
    assert code == 0 and json.loads(out)["increasing"]
    _, cols = storage.read_csv(tmp_path / "mass_map.csv")
    assert list(cols) == list(storage.MASS_MAP_COLUMNS)
    assert np.allclose(cols["mass_over_8pi"], cols["mass"] / (8 * math.pi))
    code, out, _ = run_cli(capsys, "profile", "reconstruct", "--mass", repr(4 * math.pi),
                           "--epsilon", "0.5", "--out", str(tmp_path))
    assert code == 0
    _, cols = storage.read_csv(tmp_path / "profile.csv")
    assert list(cols) == list(storage.PROFILE_COLUMNS)
    assert cols["U"][0] == pytest.approx(2 * A_4PI, rel=1e-7)


def test_usage_errors(capsys):
    assert cli.main(["profile"]) == 1
    assert cli.main(["profile", "reconstruct", "--epsilon", "1"]) == 1
    assert cli.main([]) == 1


# ---------------------------------------------------------------- simulate / verify

@pytest.fixture(scope="module")
def heat_rundir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("heat")
    p = write_config(tmp, HEAT_CONFIG)
    assert cli.main(["simulate", str(p)]) == 0
    (run,) = (tmp / "runs").iterdir()
    return run


def test_simulate_outputs(heat_rundir):
    summary = json.loads((heat_rundir / "summary.json").read_text())
    assert summary["status"] == "ok"
    assert summary["exponent_check"]["pass"]
    assert summary["mass_drift_relative"] < 1e-12
    head = (heat_rundir / "series.csv").read_text().splitlines()[:2]
    assert head[0].startswith(f"# kellersegel {__version__} config_hash=")
    assert head[1].startswith("t,mass,linf_u,l1_u,l2_u,l2_gradv,linf_gradv,energy")
    for name in ("u.snap", "v.snap", "config.txt"):
        assert (heat_rundir / name).exists()


def test_simulate_is_deterministic(tmp_path, heat_rundir):
    before = {f.name: f.read_bytes() for f in heat_rundir.iterdir() if f.suffix != ".json"
              or f.name == "summary.json"}
    cfg = tmp_path / "again.cfg"
    cfg.write_text(HEAT_CONFIG + f"output.dir = {heat_rundir.parent}\n")
    assert cli.main(["simulate", str(cfg)]) == 0
    after = {f.name: f.read_bytes() for f in heat_rundir.iterdir() if f.name in before}
    assert after == before


def test_simulate_bad_key_writes_nothing(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text(HEAT_CONFIG + f"output.dir = {tmp_path / 'out'}\ngrid.typo = 3\n")
    assert cli.main(["simulate", str(p)]) == 1
    assert not (tmp_path / "out").exists()


def test_simulate_profile_start_reports_stationarity(tmp_path):
    text = ("grid.n = 256\nparams.epsilon = 0.5\ninit.kind = profile\n"
            f"init.mass = {4 * math.pi!r}\nsolver.dt = 0.005\nsolver.frame = rescaled\n"
            f"solver.t_end = {math.e - 1!r}\n")
    assert cli.main(["simulate", str(write_config(tmp_path, text))]) == 0
    (run,) = (tmp_path / "runs").iterdir()
    summary = json.loads((run / "summary.json").read_text())
    assert summary["stationarity_drift"] < 1e-4


def test_simulate_instability_persists_last_state(tmp_path, monkeypatch):
    real_step = cli.step
    calls = {"n": 0}

    def flaky(state, params, cfg, dt=None):
        calls["n"] += 1
        if calls["n"] == 25:
            raise InstabilityError("forced", state)
        return real_step(state, params, cfg, dt)

    monkeypatch.setattr(cli, "step", flaky)
    assert cli.main(["simulate", str(write_config(tmp_path, HEAT_CONFIG))]) == 3
    (run,) = (tmp_path / "runs").iterdir()
    summary = json.loads((run / "summary.json").read_text())
    assert summary["status"] == "instability"
    _, _, t, _ = storage.read_snapshot(run / "u.snap")
    assert t == pytest.approx(summary["final_time"]) and t > 0.4


def test_verify_claims(heat_rundir, tmp_path, capsys):
    claims = tmp_path / "claims.txt"
    claims.write_text("u_decay p=inf\nu_decay p=2  # comment\ngradu_decay\n"
                      "gradv_decay r=2 window=10,100 tolerance=0.05\n")
    code, out, _ = run_cli(capsys, "verify", str(heat_rundir), str(claims))
    report = json.loads(out)
    assert len(report["verdicts"]) == 4
    assert code == (0 if all(v["pass"] for v in report["verdicts"]) else 2)
    assert report["verdicts"][0]["pass"]
    assert (heat_rundir / "verdicts.json").exists()


def test_verify_empty_claims(heat_rundir, tmp_path, capsys):
    empty = tmp_path / "empty.txt"
    empty.write_text("# nothing to check\n")
    code, out, _ = run_cli(capsys, "verify", str(heat_rundir), str(empty))
    assert code == 0 and json.loads(out)["verdicts"] == []


def test_verify_missing_series_and_unknown_claim(heat_rundir, tmp_path, capsys):
    c = tmp_path / "c.txt"
    c.write_text("profile_convergence p=1\n")
    code, _, err = run_cli(capsys, "verify", str(heat_rundir), str(c))
    assert code == 2 and "profile_dist" in err
    c.write_text("made_up_claim\n")
    code, _, _ = run_cli(capsys, "verify", str(heat_rundir), str(c))
    assert code == 1
