"""Experiment command line: simulate, cloud, compare, bea, plot.

All commands read one JSON config (every field has the default experiment
values, so an empty config reproduces the reference setup), write their
outputs atomically under --out, and remove partial files on failure.  Each
CSV and SVG output starts with a comment line carrying the canonicalized
config; the bea JSON carries it as a top-level key.  Numeric CSV fields are
printed with 17 significant digits and parse back to identical doubles.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import svgplot
from .backward_error import modified_field_coefficients, taylor_coefficients, variational_one_step_map
from .dynamics import PhaseState, eval_conformal_factor, eval_hamiltonian
from .integrators import (
    DiscreteLagrangianKind,
    NewtonDivergenceError,
    ReferenceConfig,
    StepperConfig,
    reference_trajectory,
    reference_trajectory_array,
    trajectory,
)
from .measure import (
    DensityKind,
    PointCloud,
    VolumeConfig,
    cell600_vertices,
    registered_volume_estimates,
    sphere_cloud,
)
from .series import (
    k2_hamiltonian_field,
    modified_altered_hamiltonian,
    modified_conformal_hamiltonian,
    series_table,
)

__all__ = ["ExperimentConfig", "load_config", "main"]

_MODELS = {"particle-harmonic": "harmonic", "particle-free": "free"}
_KINDS = tuple(k.value for k in DiscreteLagrangianKind)
_SHAPES = ("cell600", "sphere5000")


class ConfigError(ValueError):
    """The experiment config is malformed."""


@dataclasses.dataclass(frozen=True)
class CloudSpec:
    center: tuple = (0.0, 0.0, 1.0, 1.0)
    radius: float = 0.01
    shape: str = "cell600"


@dataclasses.dataclass(frozen=True)
class BeaSpec:
    base_h: float = 1e-2
    levels: int = 8


@dataclasses.dataclass(frozen=True)
class PlotSpec:
    csv: str = "simulate.csv"
    x: str = "t"
    y: tuple = ()
    title: str = ""


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Experiment parameters; defaults reproduce the reference setup."""

    model: str = "particle-harmonic"
    kind: str = "M"
    ell: int = 2
    h: float = 0.25
    steps: int = 200
    initial: tuple = (0.0, 0.0, 1.0, 1.0)
    cloud: CloudSpec = dataclasses.field(default_factory=CloudSpec)
    seed: int = 1
    mc_samples: int = 1_000_000
    substeps: int = 1000
    cloud_substeps: int = 64
    record_every: int = 5
    bea: BeaSpec = dataclasses.field(default_factory=BeaSpec)
    plot: PlotSpec = dataclasses.field(default_factory=PlotSpec)

    def __post_init__(self):
        if self.model not in _MODELS:
            raise ConfigError(f"model must be one of {sorted(_MODELS)}, got {self.model!r}")
        if self.kind not in _KINDS:
            raise ConfigError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        if self.ell not in (0, 1, 2, 3):
            raise ConfigError(f"ell must be in 0..3, got {self.ell}")
        if not self.h > 0.0:
            raise ConfigError("h must be positive")
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if len(self.initial) != 4:
            raise ConfigError("initial must be 4 numbers (x, y, px, py)")
        if self.cloud.shape not in _SHAPES:
            raise ConfigError(f"cloud shape must be one of {_SHAPES}")
        if len(self.cloud.center) != 4:
            raise ConfigError("cloud center must be a 4-vector")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")

    @property
    def potential(self) -> str:
        return _MODELS[self.model]

    @property
    def kind_enum(self) -> DiscreteLagrangianKind:
        return DiscreteLagrangianKind(self.kind)

    @property
    def state0(self) -> PhaseState:
        values = [float(v) for v in self.initial]
        return PhaseState(values[:2], values[2:])

    def canonical(self) -> str:
        """Deterministic JSON encoding of the fully defaulted config."""
        return json.dumps(dataclasses.asdict(self), sort_keys=True, separators=(",", ":"))


def _build(cls, data: dict, where: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config key(s) in {where}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        if name == "cloud":
            value = _build(CloudSpec, dict(value), "cloud")
        elif name == "bea":
            value = _build(BeaSpec, dict(value), "bea")
        elif name == "plot":
            value = _build(PlotSpec, dict(value), "plot")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Optional[str]) -> ExperimentConfig:
    """Config from a JSON file; a missing path means all defaults."""
    if path is None:
        return ExperimentConfig()
    with open(path, "r", encoding="utf-8") as handle:
        try:
            data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return _build(ExperimentConfig, data, "config")


# --- output plumbing -----------------------------------------------------


class OutputTracker:
    """Writes files atomically and removes everything written on failure."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.written: List[Path] = []

    def write_text(self, name: str, text: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        final = self.out_dir / name
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=str(self.out_dir))
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                handle.write(text)
            os.replace(tmp, final)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.written.append(final)
        return final

    def discard_all(self) -> None:
        for path in self.written:
            try:
                path.unlink()
            except OSError:
                pass
        self.written.clear()


def _num(value: float) -> str:
    return format(float(value), ".17g")


def _csv_text(config: ExperimentConfig, header: Sequence[str], rows: Sequence[Sequence[float]]) -> str:
    lines = [f"# config: {config.canonical()}"]
    lines.append(",".join(header))
    for row in rows:
        formatted = [str(row[0])] + [_num(v) for v in row[1:]]
        lines.append(",".join(formatted))
    return "\n".join(lines) + "\n"


def _thread_count() -> int:
    env = os.environ.get("CONFINT_THREADS")
    if env is not None:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigError(f"CONFINT_THREADS must be an integer, got {env!r}")
        return max(1, cap)
    return max(1, min(8, os.cpu_count() or 1))


# --- commands ------------------------------------------------------------


def cmd_simulate(config: ExperimentConfig, tracker: OutputTracker) -> Path:
    """Trajectory CSV with energies and error against the reference flow."""
    table = series_table(config.potential, config.kind)
    state0 = config.state0
    h = config.h
    energy_run = modified_conformal_hamiltonian(table, config.ell, state0, h)
    energy_plain = eval_hamiltonian(table.system, state0)

    cfg = StepperConfig(h=h)
    states = trajectory(config.kind_enum, table.model, state0, cfg, energy_run, config.steps)
    reference = reference_trajectory(
        table.system, state0, h, config.steps, ReferenceConfig(config.substeps)
    )

    rows = []
    for step_index, (state, ref) in enumerate(zip(states, reference)):
        h_val = eval_hamiltonian(table.system, state)
        n_val = eval_conformal_factor(table.system, state)
        k_plain = n_val * (h_val - energy_plain)
        k_mod = modified_altered_hamiltonian(table, 2, state, h, energy_run)
        e_mod = modified_conformal_hamiltonian(table, 2, state, h)
        err = float(np.linalg.norm(state.as_array() - ref.as_array()))
        rows.append(
            (step_index, step_index * h, state.q[0], state.q[1], state.p[0], state.p[1],
             h_val, k_plain, k_mod, e_mod, err)
        )
    header = ["step", "t", "x", "y", "px", "py", "H", "K_E", "Kmod", "Emod", "err_norm"]
    return tracker.write_text("simulate.csv", _csv_text(config, header, rows))


def _build_cloud(config: ExperimentConfig) -> PointCloud:
    center = np.asarray(config.cloud.center, dtype=float)
    if config.cloud.shape == "cell600":
        return cell600_vertices(center, config.cloud.radius)
    return sphere_cloud(center, config.cloud.radius, 5000)


def _integrate_cloud(config: ExperimentConfig, table, cloud: PointCloud, record_steps: List[int]):
    """Per-point trajectories of the proposed map; returns clouds at record steps.

    Each point carries its own frozen energy parameter, evaluated once at
    its initial position.  Points are independent, so they may be advanced
    in parallel; results are assembled in point order and are identical for
    any thread count.
    """
    cfg = StepperConfig(h=config.h)
    kind = config.kind_enum

    def run(point: PhaseState) -> List[PhaseState]:
        energy = modified_conformal_hamiltonian(table, config.ell, point, config.h)
        return trajectory(kind, table.model, point, cfg, energy, config.steps)

    workers = _thread_count()
    points = list(cloud.points)
    if workers > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trajectories = list(pool.map(run, points))
    else:
        trajectories = [run(point) for point in points]

    return {
        step: PointCloud(tuple(traj[step] for traj in trajectories)) for step in record_steps
    }


def cmd_cloud(config: ExperimentConfig, tracker: OutputTracker) -> List[Path]:
    """Volume series CSVs for the chosen integrator and for the reference flow."""
    table = series_table(config.potential, config.kind)
    cloud0 = _build_cloud(config)
    record_steps = [s for s in range(0, config.steps + 1) if s % config.record_every == 0]

    vcfg = VolumeConfig(samples=config.mc_samples, seed=config.seed)
    density_mu0 = DensityKind.mu0(table.system)
    density_mod = DensityKind.mu_mod2(table, config.h)

    clouds = _integrate_cloud(config, table, cloud0, record_steps)
    reference_states = reference_trajectory_array(
        table.system, cloud0.as_array(), config.h, config.steps,
        ReferenceConfig(config.cloud_substeps),
    )

    def volume_rows(cloud_at) -> List[tuple]:
        # volumes evaluated in the initial cloud's frame: exact change of
        # variables, and it keeps the fixed sample stream paired across records
        rows = []
        for step in record_steps:
            est0, est2 = registered_volume_estimates(
                cloud_at(step), cloud0, [density_mu0, density_mod], vcfg
            )
            rows.append(
                (step, step * config.h, est0.value, est0.std_error, est2.value, est2.std_error)
            )
        return rows

    header = ["step", "t", "vol_mu0", "se_mu0", "vol_mumod2", "se_mumod2"]
    paths = []
    paths.append(tracker.write_text(
        "cloud.csv", _csv_text(config, header, volume_rows(lambda s: clouds[s]))
    ))
    paths.append(tracker.write_text(
        "cloud_reference.csv",
        _csv_text(config, header, volume_rows(lambda s: PointCloud.from_array(reference_states[s]))),
    ))

    # per-time-slice scatter of the integrator cloud, for projection plots
    point_rows = []
    for step in record_steps:
        for index, pt in enumerate(clouds[step].points):
            point_rows.append(
                (step, step * config.h, index, pt.q[0], pt.q[1], pt.p[0], pt.p[1])
            )
    point_header = ["step", "t", "index", "x", "y", "px", "py"]
    # index column is integral; format through the numeric path is fine
    paths.append(tracker.write_text(
        "cloud_points.csv", _csv_text(config, point_header, point_rows)
    ))
    return paths


def cmd_compare(config: ExperimentConfig, tracker: OutputTracker) -> Path:
    """Paired H-drift and reference error for the ell = 0 and ell = 2 runs."""
    table = series_table(config.potential, config.kind)
    state0 = config.state0
    cfg = StepperConfig(h=config.h)
    kind = config.kind_enum

    runs = {}
    for ell in (0, 2):
        energy = modified_conformal_hamiltonian(table, ell, state0, config.h)
        runs[ell] = trajectory(kind, table.model, state0, cfg, energy, config.steps)
    reference = reference_trajectory(
        table.system, state0, config.h, config.steps, ReferenceConfig(config.substeps)
    )

    h0 = eval_hamiltonian(table.system, state0)
    rows = []
    for step_index in range(config.steps + 1):
        row = [step_index, step_index * config.h]
        for ell in (0, 2):
            row.append(eval_hamiltonian(table.system, runs[ell][step_index]) - h0)
        for ell in (0, 2):
            row.append(float(np.linalg.norm(
                runs[ell][step_index].as_array() - reference[step_index].as_array()
            )))
        rows.append(tuple(row))
    header = ["step", "t", "Hdrift_ell0", "Hdrift_ell2", "err_ell0", "err_ell2"]
    return tracker.write_text("compare.csv", _csv_text(config, header, rows))


def cmd_bea(config: ExperimentConfig, tracker: OutputTracker) -> Path:
    """Taylor and modified-equation coefficients of the configured step map, as JSON."""
    table = series_table(config.potential, config.kind)
    state0 = config.state0
    energy = modified_conformal_hamiltonian(table, config.ell, state0, config.h)
    one_step = variational_one_step_map(config.kind_enum, table.model, energy)

    taylor = taylor_coefficients(one_step, state0, 3, config.bea.base_h, config.bea.levels)
    fields = modified_field_coefficients(one_step, state0, config.bea.base_h, config.bea.levels)
    oracle = k2_hamiltonian_field(table, state0, energy)

    doc = {
        "config": json.loads(config.canonical()),
        "energy": energy,
        "d1": taylor.d[0].tolist(),
        "d2": taylor.d[1].tolist(),
        "d3": taylor.d[2].tolist(),
        "f0": fields.f[0].tolist(),
        "f1": fields.f[1].tolist(),
        "f2": fields.f[2].tolist(),
        "oracle_f2": oracle.tolist(),
    }
    return tracker.write_text("bea.json", json.dumps(doc, indent=2) + "\n")


def _read_csv(path: Path) -> Dict[str, List[float]]:
    header: Optional[List[str]] = None
    columns: Dict[str, List[float]] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                columns = {name: [] for name in header}
                continue
            for name, token in zip(header, line.split(",")):
                columns[name].append(float(token))
    if header is None:
        raise ConfigError(f"{path} contains no CSV header")
    return columns


def cmd_plot(config: ExperimentConfig, tracker: OutputTracker) -> Path:
    """Self-contained SVG line chart of columns from a CSV produced here."""
    csv_path = Path(config.plot.csv)
    if not csv_path.is_absolute():
        csv_path = tracker.out_dir / csv_path
    columns = _read_csv(csv_path)
    x_name = config.plot.x
    if x_name not in columns:
        raise ConfigError(f"x column {x_name!r} not in {sorted(columns)}")
    y_names = list(config.plot.y) or [
        name for name in columns if name not in (x_name, "step", "index")
    ]
    missing = [name for name in y_names if name not in columns]
    if missing:
        raise ConfigError(f"y column(s) {missing} not in {sorted(columns)}")
    series = [(name, columns[x_name], columns[name]) for name in y_names]
    svg = svgplot.line_chart(
        series,
        xlabel=x_name,
        ylabel=", ".join(y_names) if len(y_names) <= 3 else "",
        title=config.plot.title,
        header_comment=f"config: {config.canonical()}",
    )
    return tracker.write_text("plot.svg", svg)


_COMMANDS = {
    "simulate": cmd_simulate,
    "cloud": cmd_cloud,
    "compare": cmd_compare,
    "bea": cmd_bea,
    "plot": cmd_plot,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="confint",
        description="Experiments with structure-preserving integrators for conformally Hamiltonian systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", default=None, help="path to a JSON config (defaults reproduce the reference setup)")
        cmd.add_argument("--out", default=".", help="output directory")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"confint: {exc}", file=sys.stderr)
        return 1

    tracker = OutputTracker(Path(args.out))
    try:
        _COMMANDS[args.command](config, tracker)
    except NewtonDivergenceError as exc:
        tracker.discard_all()
        print(f"confint {args.command}: solver failure: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        tracker.discard_all()
        print(f"confint {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
