from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

import oracles
from varcpd.estimator import SolverConfig, StepRule
from varcpd.exceptions import ConfigInvalid
from varcpd.harness import (
    POWER_HEADER,
    GridChoice,
    PowerRow,
    ScenarioConfig,
    emit_power_csv,
    load_config,
    preset_by_name,
    preset_figures,
    read_power_csv,
    run_scenario,
    wilson_interval,
)

TINY = dict(p=3, T=80, R=2, S=10, replicates=2, jump_fro_grid=(0.0,))


# --- Wilson interval ----------------------------------------------------------


def test_wilson_zero_successes():
    lo, hi = wilson_interval(0, 30)
    assert lo == 0.0
    assert hi == pytest.approx(oracles.wilson_upper_zero(30), rel=1e-14)


@given(n=st.integers(1, 10_000), data=st.data())
def test_wilson_matches_closed_form_and_covers(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = wilson_interval(k, n)
    ref_lo, ref_hi = oracles.wilson_closed_form(k, n)
    assert lo == pytest.approx(max(0.0, ref_lo), abs=1e-12)
    assert hi == pytest.approx(min(1.0, ref_hi), abs=1e-12)
    assert 0.0 <= lo <= k / n <= hi <= 1.0


def test_wilson_rejects_bad_counts():
    with pytest.raises(ConfigInvalid):
        wilson_interval(3, 2)


# --- ScenarioConfig -----------------------------------------------------------


def test_scenario_defaults_are_desk_scale():
    cfg = ScenarioConfig()
    assert (cfg.p, cfg.T, cfg.R, cfg.S, cfg.replicates) == (10, 400, 3, 150, 50)
    cfg.validate()


@pytest.mark.parametrize(
    "change, fragment",
    [
        (dict(R=0), "R <= p"),
        (dict(gamma1=1.0), "gamma"),
        (dict(h=0.01), "p/T < h"),
        (dict(h=0.6), "p/T < h"),
        (dict(T=30, p=3, h=0.11), "floor(Th)"),
        (dict(tau=5), "inside [Th, T - Th]"),
        (dict(jump_fro_grid=(0.5, 0.2)), "strictly increasing"),
        (dict(jump_fro_grid=(0.0, 50.0)), "feasible maximum"),
        (dict(replicates=0), "replicates"),
        (dict(S=1), "S >= 2"),
        (dict(delta=1.5), "delta"),
    ],
)
def test_scenario_validation_names_constraint(change, fragment):
    with pytest.raises(ConfigInvalid, match="scenario 'x'") as info:
        ScenarioConfig(name="x", **change).validate()
    assert fragment in str(info.value)


def test_candidate_grids():
    cfg = ScenarioConfig(T=512, tau=256)
    assert cfg.candidate_grid().points == (256,)
    th = 50
    dy = replace(cfg, grid_kind="dyadic").candidate_grid().points
    assert dy == (64, 128, 256, 384, 448)
    win = replace(cfg, grid_kind=GridChoice.WINDOW).candidate_grid().points
    assert win == tuple(range(th, 512 - th + 1))
    assert replace(cfg, grid_kind="full").candidate_grid().points == win


# --- run_scenario -------------------------------------------------------------


def test_null_scenario_row_is_type_one_error():
    rows = run_scenario(ScenarioConfig(name="null", **TINY))
    assert len(rows) == 1
    r = rows[0]
    assert r.jump_fro == 0.0 and r.power == r.rejections / r.replicates


def test_single_replicate_power_is_binary():
    rows = run_scenario(ScenarioConfig(name="one", **{**TINY, "replicates": 1, "jump_fro_grid": (0.0, 0.5)}))
    assert all(r.power in (0.0, 1.0) for r in rows)


def test_run_scenario_is_deterministic(tmp_path):
    cfg = ScenarioConfig(name="det", **{**TINY, "jump_fro_grid": (0.0, 0.6)})
    a = emit_power_csv(run_scenario(cfg), tmp_path / "a.csv").read_bytes()
    b = emit_power_csv(run_scenario(cfg), tmp_path / "b.csv").read_bytes()
    assert a == b


def test_threads_do_not_change_results():
    cfg = ScenarioConfig(name="par", **{**TINY, "jump_fro_grid": (0.0, 0.6)})
    assert run_scenario(cfg, threads=1) == run_scenario(cfg, threads=2)


def test_run_scenario_rejects_invalid_config():
    with pytest.raises(ConfigInvalid, match="R <= p"):
        run_scenario(ScenarioConfig(name="bad", p=3, R=4))


# --- CSV ----------------------------------------------------------------------


def test_power_csv_round_trip(tmp_path):
    lo, hi = wilson_interval(7, 30)
    row = PowerRow("fig9", "p", 20, 0.1 + 0.2, 7, 30, 7 / 30, lo, hi)
    path = emit_power_csv([row], tmp_path / "power.csv")
    assert path.read_text().splitlines()[0] == ",".join(POWER_HEADER)
    (back,) = read_power_csv(path)
    assert back == row
    assert back.power == back.rejections / back.replicates


def test_power_csv_requires_rows(tmp_path):
    with pytest.raises(ConfigInvalid):
        emit_power_csv([], tmp_path / "x.csv")


def test_power_row_bounds():
    with pytest.raises(ConfigInvalid):
        PowerRow("s", "p", 1, 0.0, 5, 4, 1.25, 0.0, 1.0)


# --- presets ------------------------------------------------------------------


def test_five_presets_with_expected_axes():
    presets = preset_figures()
    assert [p.name for p in presets] == ["fig1", "fig2", "fig3", "fig4", "fig5"]
    axes = {p.name: [s.param_value for s in p.scenarios] for p in presets}
    assert axes["fig1"] == [10, 20, 40]
    assert axes["fig2"] == ["single", "dyadic"]
    assert axes["fig3"] == [200, 400, 800]
    assert axes["fig4"] == [0.1, 0.3, 0.5, 0.7, 0.9]
    assert axes["fig5"] == [2, 4, 8]


def test_location_preset_has_symmetric_pairs():
    fig4 = preset_by_name("fig4")
    taus = {s.param_value: s.change_point for s in fig4.scenarios}
    T = fig4.scenarios[0].T
    for a, b in ((0.1, 0.9), (0.3, 0.7)):
        assert taus[a] + taus[b] == T


def test_dimension_preset_varies_only_p():
    fig1 = preset_by_name("fig1")
    fixed = {(s.T, s.R, s.gamma1, s.gamma2, s.alpha, s.jump_fro_grid, s.h, s.S, s.replicates) for s in fig1.scenarios}
    assert len(fixed) == 1


def test_every_preset_validates():
    for preset in preset_figures():
        assert len(preset.scenarios) >= 2
        for s in preset.scenarios:
            s.validate()
            assert s.jump_fro_grid[0] == 0.0
            assert 100 <= s.S <= 300 and s.replicates < 100 and s.T < 5000


def test_preset_overrides_and_unknown_name():
    fig3 = preset_by_name("fig3", master_seed=42).with_overrides(replicates=3, S=None)
    assert all(s.replicates == 3 and s.S == 100 and s.master_seed == 42 for s in fig3.scenarios)
    with pytest.raises(ConfigInvalid):
        preset_by_name("fig6")


# --- configuration files ------------------------------------------------------


def test_load_config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(
        "[scenario]\nname = demo\np = 6\nT = 300\nR = 2\ngamma1 = 0.8\ngamma2 = 0.7\n"
        "tau = none\njump_fro_grid = 0, 0.25, 0.5\ngrid_kind = dyadic\nreplicates = 12\nmaster_seed = 9\n"
        "[calibration]\nh = 0.2\ndelta = 0.75\nS = 40\nconstant_grid = 0.1 1 10\n"
        "[solver]\nmax_iterations = 300\ntolerance = 1e-7\nstep_rule = backtracking\nrestart = no\n"
    )
    cfg, solver = load_config(path)
    assert cfg.name == "demo" and (cfg.p, cfg.T, cfg.R) == (6, 300, 2)
    assert cfg.tau is None and cfg.jump_fro_grid == (0.0, 0.25, 0.5)
    assert cfg.grid_kind is GridChoice.DYADIC and cfg.replicates == 12 and cfg.master_seed == 9
    assert (cfg.h, cfg.delta, cfg.S, cfg.constant_grid) == (0.2, 0.75, 40, (0.1, 1.0, 10.0))
    assert solver == SolverConfig(max_iterations=300, tolerance=1e-7, step_rule=StepRule.BACKTRACKING, restart=False)
    cfg.validate()


@pytest.mark.parametrize(
    "text",
    [
        "[scenario]\nbogus = 1\n",
        "[extra]\nx = 1\n",
        "[scenario]\np = ten\n",
        "[solver]\ntolerance = small\n",
        "[solver]\nstep_rule = magic\n",
        "[scenario]\ngrid_kind = spiral\n",
        "not an ini file",
    ],
)
def test_load_config_errors(tmp_path, text):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigInvalid):
        load_config(path)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigInvalid):
        load_config(tmp_path / "missing.ini")
