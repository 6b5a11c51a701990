import pytest

from fpeps.config import SCHEMA, ConfigError, load_config, parse_config

BASIC = """
[run]
seed = 3
[model]
kind = ising
L = 4
B = 2.5   # inline comment
[stage.1]
D = 3
tau = 0.01
max_steps = 5
[stage.0]
D = 2
tau = 0.05
max_steps = 10
method = su
D_prime = auto
"""


def test_parse_basic():
    cfg = parse_config(BASIC)
    assert cfg.seed == 3
    assert cfg.model().B == 2.5
    assert [s["D"] for s in cfg.stages] == [2, 3]
    assert cfg.stages[0]["D_prime"] is None
    assert cfg.stages[1]["method"] == "fu"
    sched = cfg.schedule()
    assert sched.seed == 3 and len(sched.stages) == 2


def test_defaults_for_absent_sections():
    cfg = parse_config(BASIC)
    sp = cfg.section("scaling_probe")
    assert sp == {k: d for k, (_, d) in SCHEMA["scaling_probe"].items()}


@pytest.mark.parametrize(
    "text",
    [
        "[bogus]\nx = 1\n",
        "[run]\nseeed = 1\n",
        "[model]\nkind = ising\n",
        "[model]\nkind = potts\nL = 3\n",
        "[run]\nthreads = 0\n",
        "[run]\nseed = abc\n",
        "[stage.0]\nD = 2\ntau = -1\nmax_steps = 3\n",
        "[stage.0]\nD = 2\ntau = 0.1\nmax_steps = 3\nmethod = magic\n",
        "[stage.0]\nD = 2\ntau = 0.1\nmax_steps = 3\nfull_tensor = maybe\n",
        "[energy_table]\ncells = 4:2\n",
        "[scaling_probe]\nband_low = 9\nband_high = 8\n",
        "[stage]\nD = 2\n",
        "no section header\n",
    ],
)
def test_invalid_configs_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_keys_are_case_sensitive():
    with pytest.raises(ConfigError):
        parse_config("[model]\nkind = ising\nl = 4\n")


def test_hash_stable_and_sensitive():
    a = parse_config(BASIC)
    b = parse_config(BASIC.replace("B = 2.5   # inline comment", "B = 2.50"))
    assert a.hash == b.hash and len(a.hash) == 12
    assert parse_config(BASIC.replace("B = 2.5", "B = 2.0")).hash != a.hash
    assert a.with_overrides(seed=4).hash != a.hash
    assert a.with_overrides(seed=4).seed == 4


def test_overrides_validate_threads():
    with pytest.raises(ConfigError):
        parse_config(BASIC).with_overrides(threads=0)


def test_model_required_when_asked():
    with pytest.raises(ConfigError):
        parse_config("[run]\nseed = 1\n").model()
    with pytest.raises(ConfigError):
        parse_config("[run]\nseed = 1\n").schedule()


def test_lists_and_tags():
    cfg = parse_config(
        "[gauge_study]\nmodels = ising:1, heisenberg\n"
        "[energy_table]\ncells = 4:2:2.0; 6:3:3\ntaus = 0.1, 0.01\n"
        "[run]\nobservables = sz, sx\n"
    )
    assert cfg.section("gauge_study")["models"] == [("ising", 1.0), ("heisenberg", 0.0)]
    assert cfg.section("energy_table")["cells"] == [(4, 2, 2.0), (6, 3, 3.0)]
    assert cfg.section("run")["observables"] == ["sz", "sx"]


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")


def test_shipped_configs_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    paths = sorted(root.glob("*.ini"))
    assert paths
    for p in paths:
        load_config(p)
