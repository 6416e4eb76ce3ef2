import csv
import math

import numpy as np
import pytest

from ksverify.cli import EXIT_FAIL, EXIT_PASS, EXIT_USAGE, main
from ksverify.config import ConfigError, RunConfig, build_profile, parse_config
from ksverify.fields import Grid, mass

SMALL = ["n=64", "L=6", "T=0.1", "sample_dt=0.02"]


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# -- parsing -----------------------------------------------------------------------------

def test_empty_config_gives_defaults():
    assert parse_config("") == RunConfig()


def test_comments_several_keys_per_line_and_alias():
    cfg = parse_config("# header\nd=1 n=128  # trailing\neps=0.5 v0=elliptic\n")
    assert cfg.n == 128 and cfg.epsilon == 0.5 and cfg.v0 == "elliptic"


def test_overrides_apply_last():
    cfg = parse_config("n=128\n", ["n=32", "alpha=2"])
    assert cfg.n == 32 and cfg.alpha == 2.0


def test_exponent_alone_selects_power_law():
    cfg = parse_config("m=3\n")
    assert cfg.law == "power" and cfg.diffusion_law().m == 3.0


def test_missing_v0_is_reported_against_its_key():
    with pytest.raises(ConfigError, match="v0 required when epsilon>0") as info:
        parse_config("epsilon=0.5\n")
    assert info.value.key == "v0"


def test_subcritical_exponent_in_the_plane_is_refused():
    with pytest.raises(ConfigError) as info:
        parse_config("d=2\nlaw=power\nm=0.3\n")
    assert info.value.key == "m" and info.value.line == 3


@pytest.mark.parametrize("text,key,line", [
    ("n=64\nbogus=1\n", "bogus", 2),
    ("T=-1\n", "T", 1),
    ("n=64\n\nsample_dt=2\n", "sample_dt", 3),
    ("scheme=central\nlaw=power\n", "scheme", 1),
    ("initial=gaussian(0,1,2)\n", "initial", 1),
    ("reference=gaussian(0,1);blob\n", "reference", 1),
    ("v0=sideways\n", "v0", 1),
    ("d=2\nscenario=verify-convexity\n", "scenario", 2),
    ("n=abc\n", "n", 1),
])
def test_errors_name_key_and_line(text, key, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.key == key and info.value.line == line
    assert f"line {line}" in str(info.value)


def test_unparseable_line():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("just words\n")


def test_as_text_round_trips():
    cfg = parse_config("d=1\nepsilon=0.25\nv0=zero\nreference=gaussian(0,1);bump(1,0.5)\nC=2\n")
    assert parse_config(cfg.as_text()) == cfg


@pytest.mark.parametrize("spec", ["gaussian", "gaussian(0.5)", "gaussian(0.5,0.7)", "bump(0,1)",
                                  "uniform-slab(-1,1)", "two-bumps(2,0.5)"])
def test_profile_grammar_builds_unit_mass(spec):
    rho = build_profile(spec, Grid(1, 128, 6.0))
    assert mass(rho) == pytest.approx(1.0, rel=1e-12) and rho.values.min() >= 0


def test_barenblatt_profile_mass_comes_from_its_constant():
    g = Grid(1, 256, 6.0)
    small, large = build_profile("barenblatt(1,0.5)", g), build_profile("barenblatt(1,1)", g)
    assert 0 < mass(small) < mass(large)


def test_profile_mass_scaling():
    rho = build_profile("gaussian(0,1)", Grid(1, 128, 6.0), total_mass=3.0)
    assert mass(rho) == pytest.approx(3.0, rel=1e-12)


# -- command line ---------------------------------------------------------------------------

def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path), "--override", "epsilon=0.5"]) == EXIT_USAGE
    assert "v0 required" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "missing.txt")]) == EXIT_USAGE
    assert main(["simulate", "--criteria", "1"]) == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main(["no-such-scenario"])
    assert info.value.code == 2


def test_simulate_writes_run_directory(tmp_path, capsys):
    out = tmp_path / "sim"
    assert main(["simulate", "--out", str(out), "--override", *SMALL, "alpha=1"]) == EXIT_PASS
    assert "simulate: PASS" in capsys.readouterr().out
    for name in ("config.txt", "meta.txt", "diag.csv", "verify.csv", "diagnostics.png", "snapshots.png"):
        assert (out / name).exists(), name
    energy = np.array([float(r["energy"]) for r in _read_csv(out / "diag.csv")])
    assert np.all(np.diff(energy) <= 1e-6 * (1 + np.abs(energy[:-1])))
    rows = _read_csv(out / "verify.csv")
    assert rows and all(float(r["slack"]) >= 0 for r in rows)
    meta = (out / "meta.txt").read_text()
    assert "summary.exit_status=0" in meta and "config.n=64" in meta


def test_rerun_from_saved_config_is_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--out", str(a), "--no-plots", "-q", "--override", *SMALL, "alpha=1"]) == EXIT_PASS
    assert main(["simulate", "--config", str(a / "config.txt"), "--out", str(b), "--no-plots", "-q"]) == EXIT_PASS
    for name in ("diag.csv", "verify.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_contraction_without_perturbation(tmp_path):
    out = tmp_path / "c"
    code = main(["verify-contraction", "--out", str(out), "--no-plots", "-q",
                 "--override", *SMALL, "alpha=1", "perturbation=0", "C=1"])
    assert code == EXIT_PASS
    rows = _read_csv(out / "verify.csv")
    assert all(float(r["slack"]) >= 0 and float(r["lhs"]) == 0.0 for r in rows)
    assert (out / "partner" / "diag.csv").exists()


def test_contraction_with_perturbation(tmp_path):
    out = tmp_path / "c"
    code = main(["verify-contraction", "--out", str(out), "--no-plots", "-q",
                 "--override", *SMALL, "alpha=1", "perturbation=0.05", "C=2"])
    assert code == EXIT_PASS
    rows = _read_csv(out / "verify.csv")
    assert math.sqrt(float(rows[0]["lhs"])) == pytest.approx(0.05, rel=1e-9)


def test_evi_scenario(tmp_path):
    out = tmp_path / "e"
    code = main(["verify-evi", "--out", str(out), "--no-plots", "-q",
                 "--override", *SMALL, "alpha=1", "reference=gaussian(0,0.7);bump(1,0.5)"])
    assert code in (EXIT_PASS, EXIT_FAIL)
    labels = {r["check"] for r in _read_csv(out / "verify.csv")}
    assert labels <= {"evi-ref0", "evi-ref1"}
    assert "summary.C_min_ref1=" in (out / "meta.txt").read_text()


def test_convexity_with_given_constant(tmp_path):
    out = tmp_path / "g"
    code = main(["verify-convexity", "--out", str(out), "--no-plots", "-q",
                 "--override", *SMALL, "alpha=1", "C=0", "s_samples=5"])
    assert code in (EXIT_PASS, EXIT_FAIL)
    rows = _read_csv(out / "verify.csv")
    assert [float(r["t_or_s"]) for r in rows] == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert all(float(r["constant_used"]) == 0.0 for r in rows)
    # the chord meets the energy at both endpoints
    assert abs(float(rows[0]["slack"])) <= 1e-12 and abs(float(rows[-1]["slack"])) <= 1e-12


def test_estimate_loglip(tmp_path):
    out = tmp_path / "l"
    code = main(["estimate-loglip", "--out", str(out), "--no-plots", "-q",
                 "--override", *SMALL, "alpha=1", "pair_budget=500"])
    assert code == EXIT_PASS
    labels = {r["check"] for r in _read_csv(out / "verify.csv")}
    assert labels == {"loglip", "loglip-weighted", "grad-sup-log"}


def test_suite_subset(tmp_path, capsys):
    out = tmp_path / "s"
    code = main(["suite", "--out", str(out), "--no-plots", "--criteria", "11,12"])
    text = capsys.readouterr().out
    assert code == EXIT_PASS and "suite: PASS" in text
    assert [r["check"] for r in _read_csv(out / "verify.csv")] == ["criterion-11", "criterion-12"]
