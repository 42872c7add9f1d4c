"""Command-line driver: ``ftrom <stage> [--config PATH] [--out DIR] [--seed N] [--mu LIST]``.

Exit codes: 0 success, 1 hard failure, 2 usage or configuration error,
3 completed but at least one ROM solve stopped without converging.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from ftrom import plotting
from ftrom.demo_bump import bump_svd_study
from ftrom.errors import ConfigError, FtromError, RegistrationFailureError, StorageError
from ftrom.export import export_state_csv, export_state_vtk, write_csv, write_rows
from ftrom.mesh import MappingDofs, StructuredQuadMesh
from ftrom.pipeline import (
    Settings,
    build_bases,
    compare_roms,
    compute_snapshots,
    exact_shock_position,
    load_settings,
    register_snapshots,
)
from ftrom.rom import RomSolution, SnapshotRecord, SnapshotSet
from ftrom.storage import DiscreteState, read_record, write_record

logger = logging.getLogger("ftrom")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_FLAGGED = 0, 1, 2, 3


class UsageError(FtromError):
    pass


def mu_tag(mu: float) -> str:
    return f"mu_{float(mu)!r}"


def parse_mu_list(text: str) -> tuple:
    items = [tok.strip() for tok in text.split(",") if tok.strip()]
    try:
        return tuple(float(tok) for tok in items)
    except ValueError:
        raise UsageError(f"--mu expects comma-separated numbers, got {text!r}") from None


class Run:
    """Output directory bookkeeping and the run manifest."""

    def __init__(self, out: Path, config: str, settings: Settings):
        self.out, self.config, self.settings = out, config, settings
        self.out.mkdir(parents=True, exist_ok=True)
        self.stages: list = []
        self._files: list = []
        self._flags: list = []

    def path(self, *parts) -> Path:
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        self._files.append(str(p.relative_to(self.out)))
        return p

    def flag(self, message: str) -> None:
        logger.warning(message)
        self._flags.append(message)

    @property
    def flagged(self) -> bool:
        return any(s["flagged"] for s in self.stages)

    def stage(self, name: str, func, *args):
        t0 = time.perf_counter()
        self._files, self._flags = [], []
        result = func(self, *args)
        self.stages.append(
            {"name": name, "wall_time_s": time.perf_counter() - t0, "files": sorted(self._files), "flagged": self._flags}
        )
        self.write_manifest()
        return result

    def write_manifest(self) -> None:
        path = self.out / "manifest.json"
        previous = []
        if path.exists():
            try:
                previous = json.loads(path.read_text()).get("stages", [])
            except (OSError, ValueError):
                previous = []
        names = {s["name"] for s in self.stages}
        manifest = {
            "config": self.config,
            "output_dir": str(self.out),
            "seeds": {"registration": self.settings.seed},
            "settings": dataclasses.asdict(self.settings),
            "stages": [s for s in previous if s["name"] not in names] + self.stages,
        }
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------- loading


def _load_snapshots(run: Run, subdir: str, mus) -> dict[float, SnapshotRecord]:
    out = {}
    for mu in mus:
        rec = read_record(run.out / subdir / f"{mu_tag(mu)}.ftrm")
        if not isinstance(rec, SnapshotRecord):
            raise StorageError(f"{subdir}/{mu_tag(mu)}.ftrm is not a snapshot record")
        out[float(mu)] = rec
    return out


def _snapshot_set(run: Run) -> SnapshotSet:
    s = run.settings
    if s.reference_mu is None:
        raise ConfigError("registration.reference_mu is not set")
    recs = _load_snapshots(run, "register", sorted(s.train_mu))
    mus = sorted(recs)
    ref = [i for i, mu in enumerate(mus) if np.isclose(mu, s.reference_mu, rtol=0.0, atol=1e-12)]
    if not ref:
        raise ConfigError(f"reference mu={s.reference_mu} is not among {mus}")
    return SnapshotSet(s.mesh, tuple(recs[mu] for mu in mus), ref[0])


def _truth_states(paths) -> dict[float, np.ndarray]:
    truths = {}
    for p in paths:
        rec = read_record(p)
        if isinstance(rec, (DiscreteState, SnapshotRecord)):
            truths[float(rec.mu)] = rec.Q
        else:
            raise StorageError(f"{p}: truth must be a state or snapshot record")
    return truths


def _lookup(table: dict, mu: float):
    for key, value in table.items():
        if np.isclose(key, mu, rtol=0.0, atol=1e-12):
            return value
    return None


# --------------------------------------------------------------------------- stages


def stage_hdm(run: Run, mus) -> None:
    if not mus:
        raise UsageError("empty mu list for the HDM sweep")
    mesh = run.settings.mesh
    write_record(run.path("mesh.ftrm"), mesh)
    for mu, Q in compute_snapshots(run.settings, mus).items():
        write_record(run.path("hdm", f"{mu_tag(mu)}.ftrm"), SnapshotRecord(mu, Q, mesh.identity_dofs(), Q.copy()))


def stage_truth(run: Run, mus) -> None:
    for mu, Q in compute_snapshots(run.settings, mus).items():
        write_record(run.path("truth", f"{mu_tag(mu)}.ftrm"), DiscreteState(Q, mu))


def stage_register(run: Run) -> None:
    s = run.settings
    if s.reference_mu is None:
        raise ConfigError("registration.reference_mu is not set")
    recs = _load_snapshots(run, "hdm", sorted(s.train_mu))
    snapshots, results = register_snapshots(s, {mu: r.Q for mu, r in recs.items()})
    rows = []
    for e in snapshots.entries:
        tag = mu_tag(e.mu)
        write_record(run.path("register", f"{tag}.ftrm"), e)
        res = results.get(e.mu)
        if res is not None:
            write_record(run.path("register", f"warp_{tag}.ftrm"), res.warp)
            write_record(run.path("register", f"landmarks_{tag}_reference.ftrm"), res.reference)
            write_record(run.path("register", f"landmarks_{tag}_moving.ftrm"), res.moving)
            plotting.plot_field(run.path("register", f"aligned_{tag}.png"), s.mesh, e.Q_aligned, e.dofs, f"aligned mu={e.mu:g}")
        rows.append([e.mu, float(res is None), 0.0 if res is None else res.max_displacement])
    write_rows(run.path("register", "summary.csv"), ["mu", "is_reference", "max_displacement"], rows)


def _spectrum_csv(path, sv) -> None:
    sv = np.asarray(sv, dtype=float)
    norm = sv / sv[0] if sv.size and sv[0] > 0 else sv
    write_csv(path, ["index", "sigma", "sigma_normalized"], [np.arange(1, sv.size + 1), sv, norm])


def stage_basis(run: Run) -> None:
    ft, fixed = build_bases(run.settings, _snapshot_set(run))
    write_record(run.path("basis", "ft_bases.ftrm"), ft)
    write_record(run.path("basis", "fixed_bases.ftrm"), fixed)
    _spectrum_csv(run.path("basis", "ft_spectrum.csv"), ft.singular_values)
    _spectrum_csv(run.path("basis", "fixed_spectrum.csv"), fixed.singular_values)
    spectra = {
        "aligned (feature tracking)": ft.singular_values / ft.singular_values[0],
        "unaligned (fixed mesh)": fixed.singular_values / fixed.singular_values[0],
    }
    plotting.plot_spectra(run.path("basis", "spectra.png"), spectra)


def stage_rom(run: Run, mus, truth_paths=()) -> None:
    s = run.settings
    if not mus:
        raise UsageError("empty mu list for the ROM sweep")
    ft = read_record(run.out / "basis" / "ft_bases.ftrm")
    fixed = read_record(run.out / "basis" / "fixed_bases.ftrm")
    truths = _truth_states(truth_paths)
    mesh = s.mesh
    rows = []
    for mu in mus:
        truth = _lookup(truths, mu)
        cmp = compare_roms(s, ft, fixed, mu, truth)
        tag = mu_tag(mu)
        curves = {}
        for name, res in (("ft", cmp.ft), ("fixed", cmp.fixed)):
            sol: RomSolution = res.solution
            write_record(run.path("rom", tag, f"{name}_solution.ftrm"), sol)
            write_csv(run.path("rom", tag, f"slice_{name}.csv"), ["x", "q"], [res.slice_x, res.slice_q])
            curves[{"ft": "feature-tracking ROM", "fixed": "fixed-mesh ROM"}[name]] = (res.slice_x, res.slice_q)
            if not sol.converged:
                run.flag(f"{name} ROM at mu={mu:g} did not converge ({sol.reason})")
            rows.append(
                [mu, name, float(sol.converged), sol.n_iter, sol.objective, res.shock,
                 exact_shock_position(mu, s.t_slice), cmp.truth_shock, res.l2_error]
            )
        if cmp.truth_slice is not None:
            write_csv(run.path("rom", tag, "slice_truth.csv"), ["x", "q"], list(cmp.truth_slice))
            curves["HDM"] = cmp.truth_slice
        plotting.plot_curves(run.path("rom", tag, "slice.png"), curves, "x", f"q(x, t={s.t_slice:g})", f"mu = {mu:g}")
        plotting.plot_field(run.path("rom", tag, "field_ft.png"), mesh, cmp.ft.solution.Q_hat, cmp.ft.solution.dofs, f"feature-tracking ROM, mu = {mu:g}")
    header = ["mu", "model", "converged", "n_iter", "objective", "shock_position", "shock_exact", "shock_truth", "l2_error"]
    write_rows(run.path("rom", "summary.csv"), header, rows)


def stage_demo_bump(run: Run) -> None:
    cfg = run.settings.bump
    res = bump_svd_study(cfg)
    n = len(cfg.centers)
    write_csv(run.path("bump", "spectra.csv"), ["index", "unaligned", "aligned"], [np.arange(1, n + 1), res.sv_unaligned, res.sv_aligned])
    labels = [f"c={c!r}" for c in map(float, cfg.centers)]
    write_csv(run.path("bump", "profiles_physical.csv"), ["x", *labels], [res.grid, *res.unaligned.T])
    write_csv(run.path("bump", "profiles_reference.csv"), ["xi", *labels], [res.grid, *res.aligned.T])
    p = res.projection
    write_csv(run.path("bump", "projection.csv"), ["x", "truth", "unaligned_fit", "aligned_fit"], [p["x"], p["truth"], p["unaligned_fit"], p["aligned_fit"]])
    plotting.plot_spectra(run.path("bump", "spectra.png"), {"unaligned": res.sv_unaligned, "aligned": res.sv_aligned})
    plotting.plot_curves(run.path("bump", "profiles_physical.png"), {l: (res.grid, col) for l, col in zip(labels, res.unaligned.T)}, "x", "y")
    plotting.plot_curves(run.path("bump", "profiles_reference.png"), {l: (res.grid, col) for l, col in zip(labels, res.aligned.T)}, "xi", "y")
    plotting.plot_curves(
        run.path("bump", "projection.png"),
        {"truth": (p["x"], p["truth"]), "unaligned fit": (p["x"], p["unaligned_fit"]), "aligned fit": (p["x"], p["aligned_fit"])},
        "x",
        "y",
        f"out-of-sample bump c = {cfg.test_center:g}",
    )


def stage_export(run: Run, source: Path, fmt: str, target: Path | None, mesh_path, aligned: bool) -> None:
    rec = read_record(source)
    mesh = read_record(mesh_path) if mesh_path else run.settings.mesh
    if not isinstance(mesh, StructuredQuadMesh):
        raise StorageError(f"{mesh_path}: not a mesh record")
    if isinstance(rec, DiscreteState):
        Q, dofs = rec.Q, None
    elif isinstance(rec, SnapshotRecord):
        Q, dofs = (rec.Q_aligned, rec.dofs) if aligned else (rec.Q, None)
    elif isinstance(rec, RomSolution):
        Q, dofs = rec.Q_hat, MappingDofs.from_flat(rec.x_hat)
    else:
        raise UsageError(f"{source}: records of type {type(rec).__name__} carry no cell field")
    suffix = ".csv" if fmt == "csv" else ".vtk"
    target = Path(target) if target else source.with_suffix(suffix)
    target.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        export_state_csv(target, mesh, Q, dofs)
    else:
        export_state_vtk(target, mesh, Q, dofs)
    run._files.append(str(target))


# --------------------------------------------------------------------------- entry point


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="configuration file (default: packaged defaults)")
    common.add_argument("--out", default="ftrom_out", help="output directory")
    common.add_argument("--seed", type=int, help="registration seed (overrides config)")
    common.add_argument("--mu", help="comma-separated parameter list (overrides config sweep)")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="ftrom", description="Feature-tracking reduced-order models for space-time Burgers.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("hdm", parents=[common], help="solve the HDM at the training parameters")
    sub.add_parser("register", parents=[common], help="register snapshots onto the reference")
    sub.add_parser("basis", parents=[common], help="build state and mesh bases")
    rom = sub.add_parser("rom", parents=[common], help="solve both ROMs at the test parameters")
    rom.add_argument("--truth", nargs="+", default=[], help="HDM state/snapshot records for error reporting")
    sub.add_parser("demo-bump", parents=[common], help="Gaussian bump singular-value study")
    exp = sub.add_parser("export", parents=[common], help="export a record's cell field")
    exp.add_argument("input", type=Path)
    exp.add_argument("--format", required=True, choices=["csv", "vtk-legacy"])
    exp.add_argument("--output", type=Path)
    exp.add_argument("--mesh", type=Path, help="mesh record (default: mesh from the config)")
    exp.add_argument("--aligned", action="store_true", help="export the aligned field of a snapshot")
    sub.add_parser("run", parents=[common], help="hdm, truth, register, basis and rom in sequence")
    return p


def _settings(args) -> Settings:
    text = None
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    s = load_settings(text)
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        s = dataclasses.replace(s, seed=args.seed)
    return s


def _dispatch(args, run: Run) -> None:
    s = run.settings
    mus = parse_mu_list(args.mu) if args.mu is not None else None
    cmd = args.command
    if cmd == "hdm":
        if mus is not None:
            run.settings = s = dataclasses.replace(s, train_mu=mus)
        run.stage("hdm", stage_hdm, s.train_mu)
    elif cmd == "register":
        run.stage("register", stage_register)
    elif cmd == "basis":
        run.stage("basis", stage_basis)
    elif cmd == "rom":
        run.stage("rom", stage_rom, s.test_mu if mus is None else mus, args.truth)
    elif cmd == "demo-bump":
        run.stage("demo-bump", stage_demo_bump)
    elif cmd == "export":
        run.stage("export", stage_export, args.input, args.format, args.output, args.mesh, args.aligned)
    elif cmd == "run":
        test_mu = s.test_mu if mus is None else mus
        run.stage("hdm", stage_hdm, s.train_mu)
        truth_paths = []
        if s.truth:
            run.stage("truth", stage_truth, test_mu)
            truth_paths = [run.out / "truth" / f"{mu_tag(mu)}.ftrm" for mu in test_mu]
        run.stage("register", stage_register)
        run.stage("basis", stage_basis)
        run.stage("rom", stage_rom, test_mu, truth_paths)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = _settings(args)
        run = Run(Path(args.out), args.config or "<default>", settings)
        _dispatch(args, run)
    except (UsageError, ConfigError) as exc:
        print(f"ftrom {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RegistrationFailureError as exc:
        print(f"ftrom {args.command}: {exc}; offending cells: {exc.cells}", file=sys.stderr)
        return EXIT_FAILURE
    except FtromError as exc:
        print(f"ftrom {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_FLAGGED if run.flagged else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
