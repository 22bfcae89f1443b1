"""Replicated power studies at desk scale.

A :class:`ScenarioConfig` describes one power curve: a base low-rank
transition matrix, a grid of Frobenius jump sizes, and the settings of the
calibrated test. :func:`run_scenario` simulates ``replicates`` trajectories
per jump, runs :func:`~varcpd.calibration.detect` on each and aggregates the
rejections into :class:`PowerRow` records.

Seeding
-------
The base matrix is derived from ``(master_seed, p, R)`` and the ``r``-th
replicate from ``(master_seed, r)``. Every jump size therefore sees the same
innovations (common random numbers), which keeps the estimated power curves
smooth in the jump size and makes results independent of execution order.
Odd replicates put the shifted matrix first and even replicates the base
matrix, so changes at ``tau`` and ``T - tau`` are equally hard to detect and
every power estimate uses an exactly balanced mix of the two orders.
"""

from __future__ import annotations

import configparser
import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .calibration import CalibrationConfig, DEFAULT_CONSTANT_GRID, boundary_length, detect
from .detection import CandidateGrid, dyadic_grid, single_point, window_grid
from .estimator import SolverConfig, StepRule
from .exceptions import ConfigInvalid, InfeasibleJump
from .io import write_rows
from .var_model import (
    ChangeSpec,
    NoiseModel,
    make_change_pair,
    max_feasible_jump,
    random_low_rank_transition,
    simulate,
)

__all__ = [
    "GridChoice",
    "ScenarioConfig",
    "PowerRow",
    "Preset",
    "WILSON_Z",
    "wilson_interval",
    "base_transition",
    "run_replicate",
    "run_scenario",
    "run_preset",
    "emit_power_csv",
    "read_power_csv",
    "preset_figures",
    "preset_by_name",
    "load_config",
    "POWER_HEADER",
]

WILSON_Z = 1.959963984540054  # standard normal 0.975 quantile
POWER_HEADER = [
    "scenario", "varied_param", "param_value", "jump_fro",
    "rejections", "replicates", "power", "wilson_lo", "wilson_hi",
]
_BASE_STREAM = 0xBA5E


class GridChoice(enum.Enum):
    SINGLE = "single"
    DYADIC = "dyadic"
    # Both 'full' and 'window' search every t in [Th, T - Th]: the calibrated
    # test cannot evaluate candidates inside the boundary intervals.
    FULL = "full"
    WINDOW = "window"


@dataclass(frozen=True)
class ScenarioConfig:
    """One power curve.

    ``tau=None`` places the change at ``T // 2``. Only the zero jump yields a
    trajectory without a change, so a grid of ``(0,)`` is a pure null study.
    ``gamma1`` bounds the base matrix and ``gamma2`` the shifted one.
    """

    name: str = "scenario"
    p: int = 10
    T: int = 400
    R: int = 3
    gamma1: float = 0.9
    gamma2: float = 0.9
    tau: Optional[int] = None
    jump_fro_grid: tuple = (0.0, 0.2, 0.4, 1.0)
    alpha: float = 0.05
    grid_kind: GridChoice = GridChoice.SINGLE
    h: Optional[float] = None
    delta: float = 0.8
    S: int = 150
    replicates: int = 50
    master_seed: int = 0
    varied_param: str = ""
    param_value: object = ""
    constant_grid: tuple = DEFAULT_CONSTANT_GRID

    def __post_init__(self):
        object.__setattr__(self, "grid_kind", GridChoice(self.grid_kind))
        object.__setattr__(self, "jump_fro_grid", tuple(float(j) for j in self.jump_fro_grid))

    @property
    def change_point(self) -> int:
        return self.T // 2 if self.tau is None else self.tau

    @property
    def resolved_h(self) -> float:
        return 5.0 * self.p / self.T if self.h is None else self.h

    def calibration_config(self) -> CalibrationConfig:
        return CalibrationConfig(
            h=self.h, delta=self.delta, constant_grid=self.constant_grid,
            quantile_samples=self.S, alpha=self.alpha,
        )

    def candidate_grid(self) -> CandidateGrid:
        th = boundary_length(self.T, self.resolved_h)
        if self.grid_kind is GridChoice.SINGLE:
            return single_point(self.change_point, self.T)
        if self.grid_kind is GridChoice.DYADIC:
            return dyadic_grid(self.T).restrict(th, self.T - th)
        return window_grid(self.T, th)

    def validate(self) -> "ScenarioConfig":
        """Raise :class:`ConfigInvalid` naming the first violated constraint."""
        def need(ok, msg):
            if not ok:
                raise ConfigInvalid(f"scenario '{self.name}': {msg}")

        need(self.p >= 1, "p >= 1")
        need(1 <= self.R <= self.p, "1 <= R <= p")
        need(0 < self.gamma1 < 1 and 0 < self.gamma2 < 1, "0 < gamma < 1")
        need(0 < self.alpha < 1, "0 < alpha < 1")
        need(0 < self.delta < 1, "0 < delta < 1")
        need(self.S >= 2, "S >= 2")
        need(self.replicates >= 1, "replicates >= 1")
        need(len(self.jump_fro_grid) > 0, "jump_fro_grid non-empty")
        need(all(j >= 0 for j in self.jump_fro_grid), "jump_fro >= 0")
        need(list(self.jump_fro_grid) == sorted(set(self.jump_fro_grid)),
             "jump_fro_grid strictly increasing")
        need(self.master_seed >= 0, "master_seed >= 0")
        h = self.resolved_h
        need(self.p / self.T < h < 0.5, f"p/T < h < 1/2 (h={h:.6g}, p/T={self.p / self.T:.6g})")
        need(self.T >= 2 * math.ceil(self.T * h) + 2, "T >= 2 ceil(Th) + 2")
        th = boundary_length(self.T, h)
        need(th > self.p, f"boundary length floor(Th)={th} > p")
        tau = self.change_point
        need(1 <= tau <= self.T - 1, "1 <= tau <= T - 1")
        if self.grid_kind is GridChoice.SINGLE:
            need(th <= tau <= self.T - th, f"single-point tau={tau} inside [Th, T - Th] = [{th}, {self.T - th}]")
        else:
            need(len(self.candidate_grid()) > 0, "candidate grid non-empty inside [Th, T - Th]")
        try:
            self.calibration_config()
        except ConfigInvalid as exc:
            raise ConfigInvalid(f"scenario '{self.name}': {exc}") from None
        base = base_transition(self)
        limit = max_feasible_jump(base, self.gamma2)
        need(max(self.jump_fro_grid) <= limit,
             f"largest jump_fro {max(self.jump_fro_grid):.6g} <= feasible maximum {limit:.6g}")
        return self


@dataclass(frozen=True)
class PowerRow:
    scenario: str
    varied_param: str
    param_value: object
    jump_fro: float
    rejections: int
    replicates: int
    power: float
    wilson_lo: float
    wilson_hi: float

    def __post_init__(self):
        if not 0 <= self.rejections <= self.replicates:
            raise ConfigInvalid("need 0 <= rejections <= replicates")

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, k) for k in POWER_HEADER)


def wilson_interval(k: int, n: int, z: float = WILSON_Z) -> tuple[float, float]:
    """Wilson score interval for ``k`` successes out of ``n``."""
    if n <= 0 or not 0 <= k <= n:
        raise ConfigInvalid("need n > 0 and 0 <= k <= n")
    z2 = z * z
    centre = (k + z2 / 2) / (n + z2)
    half = z / (n + z2) * math.sqrt(k * (n - k) / n + z2 / 4)
    lo, hi = centre - half, centre + half
    # clip rounding at the boundaries so the interval always covers k/n
    lo = 0.0 if k == 0 else max(0.0, min(lo, k / n))
    hi = 1.0 if k == n else min(1.0, max(hi, k / n))
    return lo, hi


def base_transition(cfg: ScenarioConfig):
    """Unshifted matrix of a scenario; depends only on ``(master_seed, p, R, gamma1)``."""
    rng = np.random.default_rng([cfg.master_seed, _BASE_STREAM, cfg.p, cfg.R])
    return random_low_rank_transition(cfg.p, cfg.R, cfg.gamma1, rng)


def run_replicate(task) -> bool:
    """Simulate one trajectory and run the calibrated test; returns the decision.

    Replicate ``r`` draws two independent streams from ``(master_seed, r)``,
    one for the trajectory and one for the calibration. They do not depend on
    the jump size or the scenario, so power curves share common random
    numbers. The parity of ``r`` fixes the order of the change pair.
    """
    cfg, base, jump, solver_cfg, rep = task
    sim_rng, det_rng = np.random.default_rng([cfg.master_seed, rep]).spawn(2)
    theta1, theta2 = make_change_pair(base, jump, gamma_after=cfg.gamma2)
    if rep % 2:
        theta1, theta2 = theta2, theta1
    noise = NoiseModel.identity(cfg.p)
    spec = ChangeSpec(theta1, theta2, cfg.change_point) if jump > 0 else ChangeSpec.null(theta1)
    traj = simulate(spec, noise, cfg.T, sim_rng)
    result = detect(
        traj, theta1.op_norm, theta2.op_norm, cfg.candidate_grid(),
        cfg.calibration_config(), solver_cfg, det_rng, noise,
    )
    return bool(result.psi)


def _map(tasks, threads: int):
    if threads <= 1:
        return [run_replicate(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run_replicate, tasks))


def run_scenario(
    cfg: ScenarioConfig, solver_cfg: SolverConfig = SolverConfig(), threads: int = 1
) -> list[PowerRow]:
    """Power for every jump in ``cfg.jump_fro_grid``, in grid order.

    Under the zero jump the true operator norms of both segments equal that of
    the base matrix, so the zero-jump row is the empirical type-I error.
    """
    cfg.validate()
    base = base_transition(cfg)
    rows = []
    for jump in cfg.jump_fro_grid:
        try:
            make_change_pair(base, jump, gamma_after=cfg.gamma2)
        except InfeasibleJump as exc:
            raise ConfigInvalid(f"scenario '{cfg.name}': {exc}") from None
        tasks = [(cfg, base, jump, solver_cfg, r) for r in range(cfg.replicates)]
        k = sum(_map(tasks, threads))
        n = cfg.replicates
        lo, hi = wilson_interval(k, n)
        rows.append(PowerRow(cfg.name, cfg.varied_param, cfg.param_value, jump, k, n, k / n, lo, hi))
    return rows


@dataclass(frozen=True)
class Preset:
    """A named family of scenarios sharing everything but one axis."""

    name: str
    description: str
    varied_param: str
    scenarios: tuple = field(default_factory=tuple)

    def with_overrides(self, **changes) -> "Preset":
        """Copy with the given :class:`ScenarioConfig` fields replaced in every scenario."""
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, scenarios=tuple(replace(s, **changes) for s in self.scenarios))


def run_preset(preset: Preset, solver_cfg: SolverConfig = SolverConfig(), threads: int = 1) -> list[PowerRow]:
    rows = []
    for scenario in preset.scenarios:
        rows.extend(run_scenario(scenario, solver_cfg, threads))
    return rows


def emit_power_csv(rows: Sequence[PowerRow], path) -> Path:
    if not rows:
        raise ConfigInvalid("no power rows to write")
    return write_rows(path, POWER_HEADER, [r.as_tuple() for r in rows])


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def read_power_csv(path) -> list[PowerRow]:
    from .io import read_rows

    header, raw = read_rows(path)
    if header != POWER_HEADER:
        raise ConfigInvalid(f"{path}: unexpected header {header}")
    return [
        PowerRow(
            scenario=r[0], varied_param=r[1], param_value=_parse_value(r[2]),
            jump_fro=float(r[3]), rejections=int(r[4]), replicates=int(r[5]),
            power=float(r[6]), wilson_lo=float(r[7]), wilson_hi=float(r[8]),
        )
        for r in raw
    ]


# Desk-scale presets. Jump grids span the empirical phase transition of each
# family; the largest jump is chosen so that every curve saturates.
_PRESET_S = 100
_PRESET_N = 50
_GAMMA = 0.9
# Long boundary intervals (150 observations at T=400) for the known-location
# presets: the null models fitted on them are accurate enough that the
# simulated quantiles hold the level even for rank-8 truths.
_PRESET_H = 0.375


def _scenario(name, varied, value, **kw) -> ScenarioConfig:
    kw.setdefault("S", _PRESET_S)
    kw.setdefault("replicates", _PRESET_N)
    kw.setdefault("gamma1", _GAMMA)
    kw.setdefault("gamma2", _GAMMA)
    return ScenarioConfig(name=name, varied_param=varied, param_value=value, **kw)


def preset_figures(master_seed: int = 0) -> list[Preset]:
    """The five desk-scale presets (power against jump size along one axis).

    ======  ============================  ========================================
    preset  varied axis                   fixed settings
    ======  ============================  ========================================
    fig1    p in {10, 20, 40}             T=800, R=3, h=0.15, tau=T/2, single point
    fig2    single point vs dyadic grid   p=10, T=512, R=3, tau=256
    fig3    T in {200, 400, 800}          p=10, R=3, h=0.375, tau=T/2, single point
    fig4    tau/T in {.1, .3, .5, .7, .9}  p=10, T=1600, R=3, h=0.09375, single point
    fig5    R in {2, 4, 8}                p=10, T=400, h=0.375, tau=T/2, single point
    ======  ============================  ========================================
    """
    s = master_seed
    fig1 = Preset(
        "fig1", "power against jump size for growing dimension", "p",
        tuple(
            _scenario("fig1", "p", p, p=p, T=800, R=3, h=0.15,
                      jump_fro_grid=(0.0, 0.3, 0.8), master_seed=s)
            for p in (10, 20, 40)
        ),
    )
    fig2 = Preset(
        "fig2", "known change location against a dyadic search", "grid",
        tuple(
            _scenario("fig2", "grid", kind, p=10, T=512, R=3, tau=256, grid_kind=kind,
                      jump_fro_grid=(0.0, 0.2, 0.4, 0.8), master_seed=s)
            for kind in ("single", "dyadic")
        ),
    )
    fig3 = Preset(
        "fig3", "power against jump size for growing sample length", "T",
        tuple(
            _scenario("fig3", "T", T, p=10, T=T, R=3, h=_PRESET_H,
                      jump_fro_grid=(0.0, 0.15, 0.3, 0.6, 1.2), master_seed=s)
            for T in (200, 400, 800)
        ),
    )
    fig4 = Preset(
        "fig4", "power against jump size for different change locations", "tau_frac",
        tuple(
            _scenario("fig4", "tau_frac", frac, p=10, T=1600, R=3, h=0.09375,
                      tau=int(round(frac * 1600)), jump_fro_grid=(0.0, 0.15, 0.3, 0.6), master_seed=s)
            for frac in (0.1, 0.3, 0.5, 0.7, 0.9)
        ),
    )
    fig5 = Preset(
        "fig5", "power against jump size for growing rank", "R",
        tuple(
            _scenario("fig5", "R", R, p=10, T=400, R=R, h=_PRESET_H,
                      jump_fro_grid=(0.0, 0.15, 0.3, 0.6, 1.2), master_seed=s)
            for R in (2, 4, 8)
        ),
    )
    return [fig1, fig2, fig3, fig4, fig5]


def preset_by_name(name: str, master_seed: int = 0) -> Preset:
    for preset in preset_figures(master_seed):
        if preset.name == name:
            return preset
    raise ConfigInvalid(f"unknown preset '{name}' (choose from fig1..fig5)")


_SCENARIO_INT = {"p", "T", "R", "replicates", "master_seed", "tau", "S"}
_SCENARIO_FLOAT = {"gamma1", "gamma2", "alpha", "h", "delta"}


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(",", " ").split())


def load_config(path) -> tuple[ScenarioConfig, SolverConfig]:
    """Read a ``key = value`` file with ``[scenario]``, ``[solver]`` and
    ``[calibration]`` sections.

    Scenario keys: ``name p T R gamma1 gamma2 tau jump_fro_grid alpha
    grid_kind replicates master_seed``. Calibration keys: ``h delta S
    constant_grid``. Solver keys: ``max_iterations tolerance step_rule
    restart``. ``tau`` and ``h`` accept ``none``.
    """
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from None
    unknown = set(parser.sections()) - {"scenario", "solver", "calibration"}
    if unknown:
        raise ConfigInvalid(f"unknown config sections {sorted(unknown)}")

    scenario: dict = {}
    allowed = {
        "scenario": _SCENARIO_INT | _SCENARIO_FLOAT | {"name", "jump_fro_grid", "grid_kind"},
        "calibration": {"h", "delta", "S", "constant_grid"},
    }
    for section in ("scenario", "calibration"):
        if not parser.has_section(section):
            continue
        for key, text in parser.items(section):
            key = {"s": "S", "t": "T", "r": "R"}.get(key, key)
            if key not in allowed[section]:
                raise ConfigInvalid(f"unknown key '{key}' in [{section}]")
            text = text.strip()
            try:
                if text.lower() == "none" and key in {"tau", "h"}:
                    value = None
                elif key in _SCENARIO_INT:
                    value = int(text)
                elif key in _SCENARIO_FLOAT:
                    value = float(text)
                elif key in {"jump_fro_grid", "constant_grid"}:
                    value = _floats(text)
                else:
                    value = text
                scenario[key] = value
            except ValueError:
                raise ConfigInvalid(f"bad value for '{key}': {text!r}") from None
    try:
        cfg = ScenarioConfig(**scenario)
    except ValueError as exc:
        raise ConfigInvalid(str(exc)) from None

    solver: dict = {}
    if parser.has_section("solver"):
        sec = parser["solver"]
        for key in sec:
            try:
                if key == "max_iterations":
                    solver[key] = sec.getint(key)
                elif key == "tolerance":
                    solver[key] = sec.getfloat(key)
                elif key == "step_rule":
                    solver[key] = StepRule(sec[key].strip())
                elif key == "restart":
                    solver[key] = sec.getboolean(key)
                else:
                    raise ConfigInvalid(f"unknown key '{key}' in [solver]")
            except ValueError:
                raise ConfigInvalid(f"bad value for '{key}': {sec[key]!r}") from None
    return cfg, SolverConfig(**solver)
