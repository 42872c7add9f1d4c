"""Run settings and the offline/online stages shared by the CLI and the tests."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources

import numpy as np

from ftrom.conslaw import BurgersConfig
from ftrom.demo_bump import BumpStudyConfig
from ftrom.errors import ConfigError, NotFoundError
from ftrom.hdm import shock_position, slice_profile, solve_hdm
from ftrom.mesh import StructuredQuadMesh, build_rect_mesh
from ftrom.registration import RegistrationParams, RegistrationResult, register_snapshot
from ftrom.rom import (
    RomBases,
    RomSolution,
    SnapshotRecord,
    SnapshotSet,
    aligned_state,
    build_fixed_mesh_bases,
    build_rom_bases,
    relative_l2_error,
    solve_fixed_mesh,
    solve_rom,
)
from ftrom.storage import parse_config

logger = logging.getLogger(__name__)

# config key -> (settings attribute, kind); kinds: int, float, list, optional float
CONFIG_KEYS = {
    "mesh.nx": ("nx", "int"),
    "mesh.nt": ("nt", "int"),
    "burgers.nu": ("nu", "float"),
    "hdm.mu": ("train_mu", "list"),
    "hdm.rtol": ("hdm_rtol", "float"),
    "registration.reference_mu": ("reference_mu", "float"),
    "registration.k": ("k", "int"),
    "registration.n_samples": ("n_samples", "int"),
    "registration.threshold": ("threshold", "float"),
    "registration.safety": ("safety", "float"),
    "registration.r": ("radius", "float"),
    "registration.count_per_edge": ("count_per_edge", "int"),
    "registration.seed": ("seed", "int"),
    "basis.n_q": ("n_q", "int"),
    "basis.state_mu": ("state_mu", "list"),
    "basis.fixed_n_q": ("fixed_n_q", "int"),
    "rom.mu": ("test_mu", "list"),
    "rom.t_slice": ("t_slice", "float"),
    "rom.lam0": ("lam0", "float"),
    "rom.max_iter": ("max_iter", "int"),
    "rom.truth": ("truth", "int"),
    "bump.centers": ("bump_centers", "list"),
    "bump.n_grid": ("bump_n_grid", "int"),
    "bump.x_t": ("bump_x_t", "float"),
    "bump.test_center": ("bump_test_center", "float"),
}


@dataclass(frozen=True)
class Settings:
    nx: int = 100
    nt: int = 50
    nu: float = 1e-3
    train_mu: tuple = (0.5, 1.0)
    hdm_rtol: float = 1e-10
    reference_mu: float | None = None
    k: int = 5
    n_samples: int = 50000
    threshold: float = 1e-8
    safety: float = 1.0
    radius: float = 100.0
    count_per_edge: int = 10
    seed: int = 0
    n_q: int = 1
    state_mu: tuple = (0.5,)
    fixed_n_q: int = 2
    test_mu: tuple = (0.75, 2.0)
    t_slice: float = 1.0
    lam0: float = 1e-4
    max_iter: int = 100
    truth: int = 1
    bump_centers: tuple = (-0.4, -0.2, 0.0, 0.2, 0.4)
    bump_n_grid: int = 1000
    bump_x_t: float = 0.0
    bump_test_center: float = 0.1

    @property
    def mesh(self) -> StructuredQuadMesh:
        return build_rect_mesh(self.nx, self.nt)

    @property
    def registration(self) -> RegistrationParams:
        return RegistrationParams(
            k=self.k,
            n_samples=self.n_samples,
            threshold=self.threshold,
            safety=self.safety,
            radius=self.radius,
            count_per_edge=self.count_per_edge,
            seed=self.seed,
        )

    @property
    def bump(self) -> BumpStudyConfig:
        return BumpStudyConfig(
            tuple(self.bump_centers), np.linspace(-1.0, 1.0, self.bump_n_grid), self.bump_x_t, self.bump_test_center
        )

    @property
    def lm(self) -> dict:
        return {"lam0": self.lam0, "max_iter": self.max_iter}

    def burgers(self, mu: float) -> BurgersConfig:
        return BurgersConfig(self.nu, mu)


def _convert(name: str, kind: str, value):
    def number(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {v!r}")
        return v

    if kind == "list":
        values = value if isinstance(value, list) else [value]
        return tuple(float(number(v)) for v in values)
    if isinstance(value, list):
        raise ConfigError(f"{name}: expected a single value")
    if kind == "int":
        if not isinstance(number(value), int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    return float(number(value))


def settings_from_config(config: dict) -> Settings:
    kwargs = {}
    for name, value in config.items():
        if name not in CONFIG_KEYS:
            raise ConfigError(f"unknown key {name!r}")
        attr, kind = CONFIG_KEYS[name]
        kwargs[attr] = _convert(name, kind, value)
    return Settings(**kwargs)


def default_config_text() -> str:
    return resources.files("ftrom").joinpath("default.cfg").read_text()


def load_settings(text: str | None = None) -> Settings:
    """Settings from config text (the packaged default when ``None``)."""
    text = default_config_text() if text is None else text
    return settings_from_config(parse_config(text, known_keys=CONFIG_KEYS))


# --------------------------------------------------------------------------- stages


def compute_snapshots(settings: Settings, mus) -> dict[float, np.ndarray]:
    mesh = settings.mesh
    return {float(mu): solve_hdm(mesh, settings.burgers(mu), rtol=settings.hdm_rtol) for mu in mus}


def _index_of(mus, mu, what: str) -> int:
    hits = [i for i, m in enumerate(mus) if np.isclose(m, mu, rtol=0.0, atol=1e-12)]
    if not hits:
        raise ConfigError(f"{what} mu={mu} is not among the snapshots {list(mus)}")
    return hits[0]


def register_snapshots(
    settings: Settings, states: dict[float, np.ndarray]
) -> tuple[SnapshotSet, dict[float, RegistrationResult]]:
    """Register every snapshot onto the reference; the reference keeps identity dofs."""
    if settings.reference_mu is None:
        raise ConfigError("registration.reference_mu is not set")
    mesh = settings.mesh
    mus = sorted(states)
    ref_idx = _index_of(mus, settings.reference_mu, "reference")
    Q_ref = states[mus[ref_idx]]
    entries, results = [], {}
    for mu in mus:
        if mu == mus[ref_idx]:
            entries.append(SnapshotRecord(mu, states[mu], mesh.identity_dofs(), np.array(states[mu])))
            continue
        res = register_snapshot(states[mu], Q_ref, mesh, settings.registration)
        Q_aligned = aligned_state(states[mu], res.dofs, mesh, settings.burgers(mu))
        entries.append(SnapshotRecord(mu, states[mu], res.dofs, Q_aligned))
        results[mu] = res
    return SnapshotSet(mesh, tuple(entries), ref_idx), results


def build_bases(settings: Settings, snapshots: SnapshotSet) -> tuple[RomBases, RomBases]:
    """Feature-tracking bases and the fixed-mesh comparison bases."""
    mus = list(snapshots.mus)
    state_idx = [_index_of(mus, mu, "basis.state_mu") for mu in settings.state_mu]
    for name, n_q, available in (("basis.n_q", settings.n_q, len(state_idx)), ("basis.fixed_n_q", settings.fixed_n_q, len(mus))):
        if not 1 <= n_q <= available:
            raise ConfigError(f"{name}={n_q} must lie in [1, {available}] (number of snapshots)")
    ft = build_rom_bases(snapshots, settings.n_q, state_snapshots=state_idx)
    fixed = build_fixed_mesh_bases(snapshots.matrix(aligned=False), snapshots.mus, settings.fixed_n_q)
    return ft, fixed


@dataclass(frozen=True)
class ModelResult:
    solution: RomSolution
    slice_x: np.ndarray
    slice_q: np.ndarray
    shock: float  # nan when the level is not crossed
    l2_error: float  # nan without truth


@dataclass(frozen=True)
class RomComparison:
    mu: float
    ft: ModelResult
    fixed: ModelResult
    truth_slice: tuple | None
    truth_shock: float


def _shock(Q, mesh, dofs, t_slice, mu) -> float:
    try:
        return shock_position(Q, mesh, dofs, t_slice, mu=mu)
    except NotFoundError:
        return float("nan")


def _model_result(sol: RomSolution, mesh, dofs, settings: Settings, truth) -> ModelResult:
    xs, qs = slice_profile(sol.Q_hat, mesh, dofs, settings.t_slice)
    err = float("nan") if truth is None else relative_l2_error(sol.Q_hat, dofs, truth, mesh)
    return ModelResult(sol, xs, qs, _shock(sol.Q_hat, mesh, dofs, settings.t_slice, sol.mu), err)


def compare_roms(settings: Settings, ft: RomBases, fixed: RomBases, mu: float, truth=None) -> RomComparison:
    mesh = settings.mesh
    cfg = settings.burgers(mu)
    s_ft = solve_rom(mu, ft, mesh, cfg, **settings.lm)
    s_fixed = solve_fixed_mesh(mu, fixed, mesh, cfg, **settings.lm)
    truth_slice, truth_shock = None, float("nan")
    if truth is not None:
        truth_slice = slice_profile(truth, mesh, None, settings.t_slice)
        truth_shock = _shock(truth, mesh, None, settings.t_slice, mu)
    return RomComparison(
        float(mu),
        _model_result(s_ft, mesh, s_ft.dofs, settings, truth),
        _model_result(s_fixed, mesh, None, settings, truth),
        truth_slice,
        truth_shock,
    )


def exact_shock_position(mu: float, t: float = 1.0) -> float:
    """Rankine-Hugoniot: the step from ``mu`` to 0 at ``x = -0.5`` moves at ``mu / 2``."""
    return -0.5 + 0.5 * mu * t
