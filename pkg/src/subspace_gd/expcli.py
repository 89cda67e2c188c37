"""Config-driven experiment runner for the subspace-gd package.

Reproduces the six experiment families as seeded sweeps driven by flat
key=value configs, writes one trace CSV per (sweep value, run), aggregates
multi-run statistics, and renders SVG plots.  Invoked as ``subspace-gd``::

    subspace-gd run <preset-or-config> [--set k=v]... [--scale desk|paper]
                    [--out dir] [--threads n]
    subspace-gd theory <preset-or-config> [--set k=v] [--scale desk|paper]
    subspace-gd plot <csv-or-glob> [--out file.svg]
    subspace-gd aggregate <glob> [--out file.csv]

The environment variable SUBSPACE_GD_SEED overrides master_seed (it is
applied last, after any --set).  Exit codes: 0 success, 1 config error,
2 every training run in the sweep diverged.

Heavy imports (numpy, matplotlib) happen inside command handlers so that
--threads can pin BLAS thread counts before numpy loads.
"""

from __future__ import annotations

import argparse
import csv
import glob as globmod
import hashlib
import math
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

EXPERIMENTS = (
    "robustness-linear",
    "robustness-uos",
    "stepsize-sweep",
    "depth-sweep",
    "subspace-sweep",
    "wd-sweep",
    "custom",
)

TRACE_HEADER = ["t", "loss", "recon_norm", "recon_restricted", "off_sub",
                "oracle_dist", "status"]
ROBUSTNESS_HEADER = ["sigma", "mean_error", "std_error", "mean_rel_error"]

INT_KEYS = {"m", "d", "s", "n", "L", "d_w", "T", "runs", "master_seed",
            "trials", "uos_k", "log_stride", "relu"}
FLOAT_KEYS = {"kappa", "eta", "prefactor", "lam", "gamma", "C1"}
LIST_KEYS = {"sweep_values", "sigma_grid"}
STR_KEYS = {"experiment", "parameterization", "sweep", "output_dir"}
ALLOWED_KEYS = INT_KEYS | FLOAT_KEYS | LIST_KEYS | STR_KEYS

SWEEP_AXES = {"lam", "gamma", "eta", "prefactor", "kappa",
              "L", "s", "d_w", "m", "d", "n", "T", "uos_k"}

# When sweeping one member of a derived pair, the other is cleared so the
# resolver recomputes it from the swept value.
PAIRED_AXES = {"lam": "gamma", "gamma": "lam", "eta": "prefactor",
               "prefactor": "eta"}

PRESETS: dict[str, dict[str, str]] = {
    "robustness-linear": {
        "experiment": "robustness-linear",
        "m": "128", "d": "256", "s": "16", "n": "1000", "kappa": "1",
        "L": "5", "d_w": "4096", "parameterization": "normalized", "relu": "0",
        "prefactor": "0.5", "T": "100000", "log_stride": "200",
        "sweep": "lam", "sweep_values": "0,1e-4,1e-3,1e-2,1e-1",
        "runs": "1", "master_seed": "0",
        "trials": "100", "sigma_grid": "0.01,0.05,0.1,0.2,0.4",
    },
    "robustness-uos": {
        "experiment": "robustness-uos",
        "m": "128", "d": "256", "s": "4", "uos_k": "3", "n": "1000",
        "kappa": "1",
        "L": "5", "d_w": "4096", "parameterization": "normalized", "relu": "1",
        "prefactor": "0.5", "T": "100000", "log_stride": "200",
        "sweep": "lam", "sweep_values": "0,1e-4,1e-3,1e-2,1e-1",
        "runs": "1", "master_seed": "0",
        "trials": "100", "sigma_grid": "0.01,0.05,0.1,0.2,0.4",
    },
    "stepsize-sweep": {
        "experiment": "stepsize-sweep",
        "m": "128", "d": "256", "s": "4", "n": "100", "kappa": "1",
        "L": "3", "d_w": "512", "parameterization": "normalized", "relu": "0",
        "lam": "1e-3", "T": "10000", "log_stride": "50",
        "sweep": "prefactor", "sweep_values": "0.01,0.1,0.5,1,2,5",
        "runs": "1", "master_seed": "0",
    },
    "depth-sweep": {
        "experiment": "depth-sweep",
        "m": "32", "d": "64", "s": "4", "n": "1000", "kappa": "1",
        "L": "2", "d_w": "1000", "parameterization": "raw", "relu": "0",
        "eta": "0.1", "lam": "1e-4", "T": "100000", "log_stride": "200",
        "sweep": "L", "sweep_values": "2,3,5",
        "runs": "3", "master_seed": "0",
    },
    "subspace-sweep": {
        "experiment": "subspace-sweep",
        "m": "128", "d": "256", "s": "2", "n": "1000", "kappa": "1",
        "L": "3", "d_w": "512", "parameterization": "raw", "relu": "0",
        "eta": "0.1", "lam": "1e-3", "T": "30000", "log_stride": "200",
        "sweep": "s", "sweep_values": "2,4,8,16,32",
        "runs": "10", "master_seed": "0",
    },
    "wd-sweep": {
        "experiment": "wd-sweep",
        "m": "32", "d": "64", "s": "4", "n": "1000", "kappa": "1",
        "L": "3", "d_w": "1000", "parameterization": "raw", "relu": "0",
        "eta": "0.1", "lam": "1e-4", "T": "60000", "log_stride": "100",
        "sweep": "lam", "sweep_values": "1e-4,1e-3,1e-2",
        "runs": "3", "master_seed": "0",
    },
}

# Reduced sizes that preserve the dimension ratios at desk runtime.
DESK_OVERRIDES: dict[str, dict[str, str]] = {
    "robustness-linear": {"d_w": "512", "n": "200", "T": "20000"},
    "robustness-uos": {"d_w": "512", "n": "200", "T": "20000"},
    "stepsize-sweep": {},
    "depth-sweep": {"d_w": "256", "n": "200", "T": "60000"},
    "subspace-sweep": {"n": "200", "T": "10000"},
    "wd-sweep": {"d_w": "256", "n": "200", "T": "30000"},
}

# Choices the source figures leave unstated; echoed into run metadata.
ASSUMPTIONS: dict[str, tuple[str, ...]] = {
    "robustness-linear": (
        "test protocol: 100 trials, condition-1 coefficients at norm sqrt(s)",
        "step-size prefactor 0.5 within the covered range",
        "training horizon chosen",
    ),
    "robustness-uos": (
        "test protocol: 100 trials, condition-1 coefficients at norm sqrt(s)",
        "step-size prefactor 0.5 within the covered range",
        "training horizon chosen",
        "number of subspaces k = 3 chosen",
    ),
    "stepsize-sweep": (
        "hidden width d_w = 512 chosen (not stated for this setup)",
        "sample count n = 100 chosen",
        "interior step-size grid points chosen; endpoints 0.01 and 5 stated",
    ),
    "depth-sweep": ("depth grid {2, 3, 5} chosen",),
    "subspace-sweep": (
        "depth L = 3 chosen",
        "training horizon chosen",
    ),
    "wd-sweep": (
        "weight-decay grid chosen to bracket 1e-4",
        "training horizon chosen",
    ),
}


class ConfigError(ValueError):
    """Invalid experiment configuration (bad key, value, or combination)."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Typed view of one flat key=value experiment configuration."""

    experiment: str
    m: int
    d: int
    s: int
    n: int
    kappa: float
    L: int
    d_w: int
    parameterization: str
    relu: bool
    T: int
    sweep: str
    sweep_values: tuple
    uos_k: int = 0
    eta: float | None = None
    prefactor: float | None = None
    lam: float | None = None
    gamma: float | None = None
    C1: float = 1.0
    log_stride: int = 100
    runs: int = 1
    master_seed: int = 0
    trials: int = 100
    sigma_grid: tuple = ()
    output_dir: str | None = None
    source: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.parameterization not in ("raw", "normalized"):
            raise ConfigError(
                f"parameterization must be raw or normalized, "
                f"got {self.parameterization!r}")
        for name in ("m", "d", "s", "n", "L", "d_w", "T", "runs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"need {name} >= 1, got {getattr(self, name)}")
        if self.sweep not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {sorted(SWEEP_AXES)}, "
                              f"got {self.sweep!r}")
        if not self.sweep_values:
            raise ConfigError("sweep_values must be nonempty")
        if (self.lam is None and self.gamma is None
                and self.sweep not in ("lam", "gamma")):
            raise ConfigError("specify lam or gamma (or sweep one of them)")
        if self.is_uos and self.uos_k < 1:
            raise ConfigError(f"need uos_k >= 1, got {self.uos_k}")
        if self.is_robustness:
            if not self.sigma_grid:
                raise ConfigError("robustness experiments need sigma_grid")
            if self.trials < 1:
                raise ConfigError(f"need trials >= 1, got {self.trials}")

    @property
    def is_uos(self) -> bool:
        return self.experiment == "robustness-uos" or (
            self.experiment == "custom" and self.uos_k > 0)

    @property
    def is_robustness(self) -> bool:
        return self.experiment.startswith("robustness") or (
            self.experiment == "custom" and bool(self.sigma_grid))


@dataclass
class RunSummary:
    """What one sweep produced: file locations, end states, statistics."""

    config_hash: str
    output_dir: str
    run_csvs: dict
    aggregate_csvs: dict
    robustness_csvs: dict
    final_metrics: dict
    statuses: dict

    @property
    def all_diverged(self) -> bool:
        flat = [st for sts in self.statuses.values() for st in sts]
        return bool(flat) and all(st == "diverged" for st in flat)


# ---------------------------------------------------------------------------
# Config assembly: preset -> scale overrides -> config file -> --set -> env.
# ---------------------------------------------------------------------------

def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat key=value lines; '#' starts a comment, blanks ignored."""
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if key not in ALLOWED_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        mapping[key] = value
    return mapping


def resolve_mapping(config_arg: str, scale: str = "desk",
                    sets: tuple[str, ...] = ()) -> dict[str, str]:
    """Merge preset, scale overrides, config file, --set pairs, and the
    SUBSPACE_GD_SEED environment override into one flat mapping."""
    if config_arg in PRESETS:
        file_items: dict[str, str] = {}
        experiment = config_arg
    else:
        path = Path(config_arg)
        if not path.is_file():
            raise ConfigError(
                f"{config_arg!r} is neither a preset "
                f"({', '.join(PRESETS)}) nor a config file")
        file_items = parse_config_text(path.read_text())
        experiment = file_items.get("experiment", "")
        if experiment not in EXPERIMENTS:
            raise ConfigError(
                f"config file must set experiment to one of {EXPERIMENTS}")
    mapping = dict(PRESETS.get(experiment, {}))
    if scale == "desk":
        mapping.update(DESK_OVERRIDES.get(experiment, {}))
    elif scale != "paper":
        raise ConfigError(f"scale must be desk or paper, got {scale!r}")
    mapping.update(file_items)
    mapping.setdefault("experiment", experiment)
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        key, value = key.strip(), value.strip()
        if key not in ALLOWED_KEYS:
            raise ConfigError(f"--set: unknown key {key!r}")
        mapping[key] = value
    env_seed = os.environ.get("SUBSPACE_GD_SEED")
    if env_seed:
        mapping["master_seed"] = env_seed
    return mapping


def _parse_typed(key: str, value: str):
    try:
        if key in INT_KEYS:
            return int(value)
        if key in FLOAT_KEYS:
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return value


def build_config(mapping: dict[str, str]) -> ExperimentConfig:
    """Type-check a flat mapping into an ExperimentConfig."""
    required = ("experiment", "m", "d", "s", "n", "kappa", "L", "d_w",
                "parameterization", "T", "sweep", "sweep_values")
    missing = [k for k in required if not mapping.get(k)]
    if missing:
        raise ConfigError(f"missing config keys: {', '.join(missing)}")
    kw: dict = {}
    for key, value in mapping.items():
        if key not in ALLOWED_KEYS:
            raise ConfigError(f"unknown key {key!r}")
        if value == "" and key not in LIST_KEYS:
            continue
        if key in LIST_KEYS:
            continue
        kw[key] = _parse_typed(key, value)
    kw["relu"] = bool(kw.get("relu", 0))
    axis = mapping["sweep"].strip()
    value_type = int if axis in INT_KEYS else float
    try:
        kw["sweep_values"] = tuple(
            value_type(v.strip())
            for v in mapping["sweep_values"].split(",") if v.strip())
    except ValueError:
        raise ConfigError(
            f"bad sweep_values {mapping['sweep_values']!r} for axis {axis}")
    grid = mapping.get("sigma_grid", "")
    try:
        kw["sigma_grid"] = tuple(
            float(v.strip()) for v in grid.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad sigma_grid {grid!r}")
    kw["source"] = tuple(sorted(mapping.items()))
    return ExperimentConfig(**kw)


def load_config(config_arg: str, scale: str = "desk",
                sets: tuple[str, ...] = ()) -> ExperimentConfig:
    return build_config(resolve_mapping(config_arg, scale, sets))


def config_hash(config: ExperimentConfig) -> str:
    items = config.source or tuple(
        (k, str(v)) for k, v in sorted(vars(config).items()) if k != "source")
    digest = hashlib.sha256()
    for key, value in items:
        digest.update(f"{key}={value}\n".encode())
    return digest.hexdigest()[:12]


def sweep_point(config: ExperimentConfig, value) -> ExperimentConfig:
    """Substitute one sweep value into the config, clearing the partner
    field of a derived pair so it is recomputed."""
    kw = {config.sweep: value}
    partner = PAIRED_AXES.get(config.sweep)
    if partner:
        kw[partner] = None
    return replace(config, **kw)


def format_value(value) -> str:
    if isinstance(value, int):
        return str(value)
    return f"{value:g}"


# ---------------------------------------------------------------------------
# CSV plumbing. Floats serialize at 17 significant digits so that parsing
# reproduces every float64 bit-exactly.
# ---------------------------------------------------------------------------

def format_float(x) -> str:
    return f"{float(x):.17g}"


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty CSV") from None
        return header, [row for row in reader if row]


def trace_rows(trace) -> list[list[str]]:
    """Serialize a TrainTrace to schema rows, appending a sentinel row
    when the run diverged."""
    rows = []
    for rec in trace.records:
        rows.append([
            str(rec["t"]),
            format_float(rec["loss"]),
            format_float(rec["recon_norm"]),
            format_float(rec["recon_restricted"]),
            format_float(rec["off_sub"]),
            format_float(rec["oracle_dist"]),
            "ok",
        ])
    if trace.status == "diverged":
        nan = format_float(float("nan"))
        rows.append([str(trace.diverged_at), nan, nan, nan, nan, nan,
                     "diverged"])
    return rows


def _column_median(values: list[float]) -> float:
    if any(math.isnan(v) for v in values):
        return float("nan")
    import statistics
    return float(statistics.median(values))


def _column_pstd(values: list[float]) -> float:
    if any(math.isnan(v) for v in values):
        return float("nan")
    import statistics
    return float(statistics.pstdev(values))


def aggregate_tables(tables: list[tuple[list[str], list[list[str]]]]
                     ) -> tuple[list[str], list[list[str]], str]:
    """Median/population-std aggregation of runs sharing a schema.

    Rows align on the first column (string match); only rows whose status
    is ok contribute.  Returns (header, rows, status) where status is ok,
    partial, or diverged depending on how many source runs diverged.
    """
    if not tables:
        raise ValueError("nothing to aggregate")
    header = tables[0][0]
    for other_header, _ in tables[1:]:
        if other_header != header:
            raise ValueError(
                f"schema mismatch: {other_header} vs {header}")
    has_status = header[-1] == "status"
    metric_cols = header[1:-1] if has_status else header[1:]
    diverged = 0
    keyed: list[dict[str, list[float]]] = []
    for _, rows in tables:
        table_map: dict[str, list[float]] = {}
        bad = False
        for row in rows:
            if has_status and row[-1] != "ok":
                bad = True
                continue
            values = row[1:-1] if has_status else row[1:]
            table_map[row[0]] = [float(v) for v in values]
        diverged += bad
        keyed.append(table_map)
    common = set(keyed[0])
    for table_map in keyed[1:]:
        common &= set(table_map)
    out_header = [header[0]]
    for col in metric_cols:
        out_header += [f"{col}_median", f"{col}_std"]
    out_header.append("status")
    if diverged == 0:
        status = "ok"
    elif diverged == len(tables):
        status = "diverged"
    else:
        status = "partial"
    out_rows = []
    for key in sorted(common, key=float):
        row = [key]
        for j in range(len(metric_cols)):
            column = [table_map[key][j] for table_map in keyed]
            row.append(format_float(_column_median(column)))
            row.append(format_float(_column_pstd(column)))
        row.append(status)
        out_rows.append(row)
    return out_header, out_rows, status


def aggregate(paths, out_path=None) -> str:
    """Aggregate run CSVs matching identical schemas into one CSV."""
    paths = sorted(str(p) for p in paths)
    if not paths:
        raise ValueError("no CSV paths given")
    header, rows, _ = aggregate_tables([read_csv(p) for p in paths])
    out_path = str(out_path or "aggregate.csv")
    write_csv(out_path, header, rows)
    return out_path


# ---------------------------------------------------------------------------
# Sweep execution.
# ---------------------------------------------------------------------------

def _make_instance(config: ExperimentConfig, seed: int):
    from . import problem

    if config.is_uos:
        return problem.gen_uos(config.m, config.d, config.s, config.uos_k,
                               config.n, config.kappa, seed)
    return problem.gen_instance(config.m, config.d, config.s, config.n,
                                config.kappa, seed)


def _make_net(config: ExperimentConfig, seed: int):
    from . import model

    dims = model.NetDims(L=config.L, m=config.m, d_w=config.d_w, d=config.d)
    init = (model.init_fanin if config.parameterization == "raw"
            else model.init_standard_normal)
    return init(dims, seed, relu_at_penultimate=config.relu)


def _hyper_params(config: ExperimentConfig):
    from . import trainer

    return trainer.HyperParams(
        T=config.T, eta=config.eta, lam=config.lam, gamma=config.gamma,
        prefactor=config.prefactor, C1=config.C1,
        log_stride=config.log_stride)


def run(config: ExperimentConfig, out_dir=None, echo=print) -> RunSummary:
    """Execute the configured sweep and write all CSVs plus metadata.

    One trace CSV per (sweep value, run index); robustness experiments add
    one test-error CSV per trained run.  A diverged run is recorded via the
    status column and does not abort the sweep.  Deterministic for a fixed
    master_seed and thread count.
    """
    from . import problem, trainer
    from .numkit import child_seed

    start = time.time()
    out = Path(out_dir or config.output_dir
               or f"runs/{config.experiment}")
    out.mkdir(parents=True, exist_ok=True)
    summary = RunSummary(
        config_hash=config_hash(config), output_dir=str(out),
        run_csvs={}, aggregate_csvs={}, robustness_csvs={},
        final_metrics={}, statuses={})
    tau_lines: list[str] = []
    reduce_applied = not (config.is_uos or config.relu)
    for value in config.sweep_values:
        point = sweep_point(config, value)
        label = f"{config.sweep}={format_value(value)}"
        point_dir = out / label
        point_dir.mkdir(exist_ok=True)
        summary.run_csvs[label] = []
        summary.robustness_csvs[label] = []
        summary.statuses[label] = []
        resolved_gamma = None
        for r in range(point.runs):
            instance = _make_instance(point, child_seed(point.master_seed,
                                                        "instance", r))
            train_data = (problem.reduce_samples(instance)
                          if reduce_applied else instance)
            net = _make_net(point, child_seed(point.master_seed, "init", r))
            trace = trainer.train(net, train_data, _hyper_params(point))
            resolved_gamma = trace.hp.gamma
            csv_path = point_dir / f"run{r}.csv"
            write_csv(csv_path, TRACE_HEADER, trace_rows(trace))
            summary.run_csvs[label].append(str(csv_path))
            summary.statuses[label].append(trace.status)
            echo(f"{label} run{r}: {trace.status} "
                 f"({len(trace.records)} records, {trace.wall_time:.1f}s)")
            if point.is_robustness and trace.status == "ok":
                from . import metrics

                rob = metrics.test_robustness(
                    net, instance, point.sigma_grid, trials=point.trials,
                    seed=child_seed(point.master_seed, "test", r))
                rob_path = point_dir / f"robustness{r}.csv"
                write_csv(rob_path, ROBUSTNESS_HEADER, [
                    [format_float(row.sigma), format_float(row.mean_error),
                     format_float(row.std_error),
                     format_float(row.mean_rel_error)]
                    for row in rob])
                summary.robustness_csvs[label].append(str(rob_path))
        header, rows, _ = aggregate_tables(
            [read_csv(p) for p in summary.run_csvs[label]])
        agg_path = point_dir / "aggregate.csv"
        write_csv(agg_path, header, rows)
        summary.aggregate_csvs[label] = str(agg_path)
        if rows:
            last = rows[-1]
            summary.final_metrics[label] = {
                name: float(cell)
                for name, cell in zip(header, last) if name != "status"}
        if len(summary.robustness_csvs[label]) > 1:
            aggregate(summary.robustness_csvs[label],
                      point_dir / "robustness_aggregate.csv")
        tau_lines.append(f"tau_ub[{label}]: "
                         f"{_tau_ub_for(point, resolved_gamma)}")
    _write_metadata(out, config, summary, tau_lines,
                    reduce_applied, time.time() - start)
    echo(f"wrote results under {out}")
    return summary


def _tau_ub_for(point: ExperimentConfig, resolved_gamma) -> str:
    from . import trainer
    from .numkit import child_seed

    if not resolved_gamma or resolved_gamma <= 0:
        return "unbounded"
    instance = _make_instance(point, child_seed(point.master_seed,
                                                "instance", 0))
    try:
        report = trainer.derive_hyperparams(instance, L=point.L,
                                            d_w=point.d_w,
                                            gamma=resolved_gamma)
    except ValueError:
        return "out-of-range"
    return format_float(report.tau_ub)


def _write_metadata(out: Path, config: ExperimentConfig,
                    summary: RunSummary, tau_lines: list[str],
                    reduce_applied: bool, elapsed: float) -> None:
    from . import __version__

    lines = [
        f"package_version: {__version__}",
        f"config_hash: {summary.config_hash}",
        f"sample_reduction: {'yes' if reduce_applied else 'no'}",
        f"elapsed_seconds: {elapsed:.1f}",
    ]
    for key, value in (config.source or ()):
        lines.append(f"config.{key}: {value}")
    for note in ASSUMPTIONS.get(config.experiment, ()):
        lines.append(f"assumption: {note}")
    lines.extend(tau_lines)
    for label, statuses in summary.statuses.items():
        for r, st in enumerate(statuses):
            lines.append(f"status[{label}/run{r}]: {st}")
    (out / "metadata.txt").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Theory report.
# ---------------------------------------------------------------------------

def theory(config: ExperimentConfig, echo=print) -> None:
    """Print resolved and derived hyperparameters per sweep value."""
    from . import trainer
    from .numkit import child_seed, spec_stats

    for value in config.sweep_values:
        point = sweep_point(config, value)
        label = f"{config.sweep}={format_value(value)}"
        instance = _make_instance(point, child_seed(point.master_seed,
                                                    "instance", 0))
        hp = trainer.resolve_hyperparams(_hyper_params(point), instance,
                                         point.L)
        echo(f"{label}:")
        echo(f"  eta (resolved): {hp.eta:.6g}")
        echo(f"  lam (resolved): {hp.lam:.6g}")
        echo(f"  gamma (resolved): {hp.gamma:.6g}")
        st = spec_stats(instance.X)
        m = instance.A.shape[0]
        echo(f"  eta_star: {m / (point.L * st.op_norm ** 2):.6g}")
        if hp.gamma <= 0:
            echo("  lambda_star: 0")
            echo("  T_star: unbounded")
            echo("  tau_ub: unbounded")
            continue
        try:
            report = trainer.derive_hyperparams(instance, L=point.L,
                                                d_w=point.d_w, gamma=hp.gamma)
        except ValueError as exc:
            echo(f"  (gamma outside theory range: {exc})")
            continue
        echo(f"  lambda_star: {report.lambda_star:.6g}")
        echo(f"  T_star: {report.T_star}")
        tau = ("unbounded" if math.isinf(report.tau_ub)
               else f"{report.tau_ub:.6g}")
        echo(f"  tau_ub: {tau}")
        echo(f"  gamma_cap: {report.gamma_cap:.6g}")
        echo(f"  {report.width_required_note}")


# ---------------------------------------------------------------------------
# Plot rendering.
# ---------------------------------------------------------------------------

def _numeric_columns(header: list[str], rows: list[list[str]]):
    cols = {}
    for j, name in enumerate(header):
        if name == "status":
            continue
        try:
            cols[name] = [float(row[j]) for row in rows]
        except ValueError:
            continue
    return cols


def _line_label(path: Path) -> str:
    if "=" in path.parent.name:
        return path.parent.name
    return path.stem


def _tau_markers(paths: list[Path]) -> list[float]:
    values = []
    for path in paths:
        for parent in (path.parent, path.parent.parent):
            meta = parent / "metadata.txt"
            if not meta.is_file():
                continue
            for line in meta.read_text().splitlines():
                if line.startswith("tau_ub") and ":" in line:
                    tail = line.split(":", 1)[1].strip()
                    try:
                        tau = float(tail)
                    except ValueError:
                        continue
                    if math.isfinite(tau) and tau not in values:
                        values.append(tau)
    return values


def emit_plot(csv_arg, out_path=None) -> str:
    """Render CSVs (a path or glob) to one deterministic SVG.

    Trace-schema files get two log-scale panels (reconstruction and
    off-subspace error) with one line per file; robustness files get a
    log-log test-error panel; anything else plots each numeric column
    against the first column.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "subspace-gd"
    paths = [Path(p) for p in sorted(globmod.glob(str(csv_arg)))]
    if not paths:
        candidate = Path(csv_arg)
        if candidate.is_file():
            paths = [candidate]
        else:
            raise ValueError(f"no CSV matches {csv_arg!r}")
    tables = []
    for path in paths:
        header, rows = read_csv(path)
        if not rows:
            raise ValueError(f"{path}: no data rows")
        tables.append((path, header, _numeric_columns(header, rows)))
    first_header = tables[0][1]

    def pick(cols, name):
        return cols.get(name) if name in cols else cols.get(f"{name}_median")

    if first_header[0] == "t" and any(
            c.startswith("recon_norm") for c in first_header):
        fig, axes = plt.subplots(1, 2, figsize=(11, 4.2))
        for path, _, cols in tables:
            label = _line_label(path)
            for ax, metric in zip(axes, ("recon_norm", "off_sub")):
                series = pick(cols, metric)
                if series is None or all(math.isnan(v) for v in series):
                    continue
                ax.plot(cols["t"], series, label=label)
        for ax, metric in zip(axes, ("recon_norm", "off_sub")):
            ax.set_xlabel("t")
            ax.set_ylabel(metric)
            ax.set_yscale("log")
            for tau in _tau_markers(paths):
                ax.axvline(tau, color="gray", linestyle="--", linewidth=0.8)
            ax.legend(fontsize=8)
    elif first_header[0] == "sigma":
        fig, ax = plt.subplots(figsize=(6, 4.2))
        for path, _, cols in tables:
            series = pick(cols, "mean_error")
            if series is None:
                continue
            ax.plot(cols["sigma"], series, marker="o",
                    label=_line_label(path))
        ax.set_xlabel("sigma")
        ax.set_ylabel("mean_error")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.legend(fontsize=8)
    else:
        fig, ax = plt.subplots(figsize=(6, 4.2))
        x_name = first_header[0]
        positive = True
        for path, header, cols in tables:
            for name, series in cols.items():
                if name == x_name:
                    continue
                label = (f"{_line_label(path)}:{name}"
                         if len(tables) > 1 else name)
                ax.plot(cols[x_name], series, label=label)
                positive = positive and all(
                    v > 0 for v in series if not math.isnan(v))
        ax.set_xlabel(x_name)
        if positive:
            ax.set_yscale("log")
        ax.legend(fontsize=8)
    out_path = str(out_path or paths[0].with_suffix(".svg"))
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out_path


# ---------------------------------------------------------------------------
# CLI entry point.
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subspace-gd",
        description="Seeded experiment sweeps for deep linear subspace "
                    "recovery: run, aggregate, and plot.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a sweep preset or config")
    run_p.add_argument("config", help=f"preset ({', '.join(PRESETS)}) "
                                      "or key=value config file")
    run_p.add_argument("--set", action="append", default=[], metavar="K=V",
                       help="override one config key")
    run_p.add_argument("--scale", choices=("desk", "paper"), default="desk")
    run_p.add_argument("--out", default=None, help="output directory")
    run_p.add_argument("--threads", type=int, default=None,
                       help="BLAS/OpenMP thread count")

    th_p = sub.add_parser("theory", help="print derived hyperparameters")
    th_p.add_argument("config")
    th_p.add_argument("--set", action="append", default=[], metavar="K=V")
    th_p.add_argument("--scale", choices=("desk", "paper"), default="desk")

    plot_p = sub.add_parser("plot", help="render CSVs to SVG")
    plot_p.add_argument("csv", help="CSV path or glob")
    plot_p.add_argument("--out", default=None, help="output SVG path")

    agg_p = sub.add_parser("aggregate", help="median/std across run CSVs")
    agg_p.add_argument("pattern", help="glob of run CSVs")
    agg_p.add_argument("--out", default="aggregate.csv")
    return parser


def _pin_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise ConfigError(f"need --threads >= 1, got {n}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            _pin_threads(args.threads)
            config = load_config(args.config, args.scale, tuple(args.set))
            summary = run(config, out_dir=args.out)
            return 2 if summary.all_diverged else 0
        if args.command == "theory":
            config = load_config(args.config, args.scale, tuple(args.set))
            theory(config)
            return 0
        if args.command == "plot":
            out = emit_plot(args.csv, args.out)
            print(out)
            return 0
        if args.command == "aggregate":
            paths = sorted(globmod.glob(args.pattern))
            out = aggregate(paths, args.out)
            print(out)
            return 0
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
