import json
import os
import subprocess

import numpy as np
import pytest

import qualsynth as qs

SMALL = {
    "n_treated": 2,
    "n_donors": 8,
    "n_years": 10,
    "first_year": 2000,
    "t0": 2005,
    "noise_sd": 0.0,
    "planted_effect": -0.3,
    "seed": 3,
}


def test_simgen_panel_shape_and_truth():
    panel, truth = qs.simgen(json.dumps(SMALL))
    assert len(panel) == 10
    assert panel.years == (2000, 2009)
    assert panel.t0 == 2005
    assert panel.treated[:2] == [True, True]
    assert panel.values().shape == (10, 10)
    assert json.loads(truth)["treated"][0]["region"] == "T01"
    again = qs.parse_panel(panel.to_csv(), 2005)
    assert np.array_equal(again.values(), panel.values())


def test_hp_filter_limits():
    y = np.sin(np.arange(20) / 3.0)
    trend, cycle = qs.hp_filter(y, 0.0)
    assert np.array_equal(trend, y)
    trend, cycle = qs.hp_filter(y)
    assert np.allclose(trend + cycle, y, atol=1e-12)
    line = 0.5 - 0.02 * np.arange(15)
    assert np.allclose(qs.hp_filter(line, 1600.0)[0], line, atol=1e-10)
    assert qs.annual_phi() == 6.25


def test_simplex_qp_recovers_planted_weights():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(6, 4))
    w = np.array([0.5, 0.0, 0.3, 0.2])
    x, obj = qs.solve_simplex_qp(a, a @ w)
    assert np.allclose(x, w, atol=1e-6)
    assert obj < 1e-10


def test_fit_synth_recovers_noise_free_effect():
    panel, _ = qs.simgen(json.dumps(SMALL))
    sol = qs.fit_synth(panel, "T01", evaluation_budget=200, random_starts=1)
    gaps = sol["gaps"]["values"]
    assert np.allclose(gaps[:6], 0.0, atol=1e-6)
    assert np.allclose(gaps[6:], -0.3, atol=1e-6)
    assert abs(sum(sol["weights"].values()) - 1.0) < 1e-9


def test_residualize_and_pvalues():
    panel, _ = qs.simgen(json.dumps(dict(SMALL, noise_sd=0.05)))
    resid, r2 = qs.residualize(panel)
    assert resid.shape == (10, 10)
    assert np.all((r2 >= 0) & (r2 <= 1))
    p = qs.placebo_pvalues(panel, evaluation_budget=100, random_starts=1)
    assert set(p) == {"T01", "T02"}
    for entry in p.values():
        assert 0 < entry["p_exact"] <= 1


def test_sampler_and_ks():
    draws, acc = qs.mh_chain(lambda t: -0.5 * t * t, seed=1)
    assert draws.size == 10000
    assert 0.2 <= acc <= 0.4
    assert abs(draws.mean()) < 0.15
    assert qs.ks_statistic([0.0, 1.0], [5.0, 6.0]) == 1.0
    assert qs.kolmogorov_survival(1.0) == pytest.approx(0.26999967167735456, abs=1e-10)


def test_errors_carry_codes():
    with pytest.raises(qs.QualsynthError) as err:
        qs.hp_filter([1.0, 2.0])
    assert err.value.code == "TooShort"
    with pytest.raises(qs.QualsynthError):
        qs.simgen('{"noise_sd": -1}')


def test_pipeline_run_and_report(tmp_path):
    cfg = {
        "simgen": SMALL,
        "output_dir": str(tmp_path / "run"),
        "sampler": {"iterations": 600, "burn_in": 100},
        "synth": {"evaluation_budget": 100, "random_starts": 1},
        "placebo": {"subsets": 20},
    }
    result = qs.run(json.dumps(cfg))
    assert result["ok"], result["error"]
    assert [s[1] for s in result["stages"]] == ["ok"] * 7
    assert (tmp_path / "run" / "report" / "table2_did.txt").exists()
    files = qs.report(str(tmp_path / "run"))
    assert "report/README.md" in files


@pytest.mark.skipif("QUALSYNTH_CLI" not in os.environ, reason="CLI path not provided")
def test_cli_subcommands(tmp_path):
    cli = os.environ["QUALSYNTH_CLI"]
    out = subprocess.run([cli, "--help"], capture_output=True, text=True, check=True).stdout
    for sub in ["ingest", "simgen", "residualize", "smooth", "filter", "synth", "placebo", "report", "run"]:
        assert sub in out
    sim = tmp_path / "sim"
    subprocess.run([cli, "simgen", "-o", str(sim), "--treated", "2", "--donors", "6", "--seed", "4"], check=True)
    assert (sim / "panel.csv").exists() and (sim / "truth.json").exists()
    bad = subprocess.run(
        [cli, "ingest", "-i", str(sim / "panel.csv"), "--t0", "1980", "-o", str(tmp_path / "bad")],
        capture_output=True,
        text=True,
    )
    assert bad.returncode != 0
    assert "NoPrePeriod" in bad.stderr and "t0" in bad.stderr
