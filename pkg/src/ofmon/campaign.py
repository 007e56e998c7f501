"""Declarative experiment campaigns.

A campaign is one JSON document: a trace source, the sampling methods and
rates to sweep, trial counts and which experiments to run.  Running the same
campaign with the same seed writes byte-identical result files; rows are
ordered by (method, mode, rate, trial) no matter how the work was scheduled.
"""

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import jsonschema

from .controller import ControllerConfig, export_records
from .evaluation import (
    run_overhead_experiment,
    run_rate_experiment,
    run_wmrd_experiment,
)
from .sampling import SamplingMethod, SamplingMode, config_for_rate, derive_seed
from .simulate import Simulation
from .traceio import (
    ExponentialGap,
    Fixed,
    FixedGap,
    Geometric,
    ParetoDiscrete,
    SyntheticSpec,
    UniformRandom,
    ZipfSkewed,
    generate_trace,
    randomize_trace,
    read_csv_trace,
)

WORKERS_ENV = "OFMON_WORKERS"
DEFAULT_OVERHEAD_DELAYS_MS = [1, 5, 10, 20, 50, 100]


class ConfigError(Exception):
    """Campaign or CLI configuration is unusable."""


_DIST_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"kind": {"const": "geometric"}, "p": {"type": "number"}},
            "required": ["kind", "p"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "kind": {"const": "pareto"},
                "alpha": {"type": "number"},
                "min_size": {"type": "integer"},
            },
            "required": ["kind", "alpha"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"kind": {"const": "fixed"}, "packets": {"type": "integer"}},
            "required": ["kind", "packets"],
            "additionalProperties": False,
        },
    ]
}

_KEYMODE_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"kind": {"const": "uniform"}},
            "required": ["kind"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"kind": {"const": "zipf"}, "skew": {"type": "number"}},
            "required": ["kind", "skew"],
            "additionalProperties": False,
        },
    ]
}

_GAP_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"kind": {"const": "exponential"}, "mean_ms": {"type": "number"}},
            "required": ["kind", "mean_ms"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"kind": {"const": "fixed"}, "gap_ms": {"type": "number"}},
            "required": ["kind", "gap_ms"],
            "additionalProperties": False,
        },
    ]
}

_SYNTHETIC_SCHEMA = {
    "type": "object",
    "properties": {
        "flows": {"type": "integer", "minimum": 1},
        "sizes": _DIST_SCHEMA,
        "ips": _KEYMODE_SCHEMA,
        "ports": _KEYMODE_SCHEMA,
        "tcp_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "gaps": _GAP_SCHEMA,
        "duration_ms": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer"},
    },
    "required": ["flows"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": {"type": "integer"},
        "trace": {
            "type": "object",
            "properties": {"csv": {"type": "string"}, "synthetic": _SYNTHETIC_SCHEMA},
            "minProperties": 1,
            "maxProperties": 1,
            "additionalProperties": False,
        },
        "randomize_keys_seed": {"type": "integer"},
        "sampling": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "method": {"enum": ["ip-suffix", "port", "hash"]},
                    "mode": {"enum": ["source", "pair"]},
                },
                "required": ["method"],
                "additionalProperties": False,
            },
        },
        "rates": {"type": "array", "minItems": 1, "items": {"type": "string"}},
        "trials": {"type": "integer", "minimum": 1},
        "experiments": {
            "type": "array",
            "minItems": 1,
            "items": {"enum": ["rate", "wmrd", "overhead", "export"]},
            "uniqueItems": True,
        },
        "timeouts": {
            "type": "object",
            "properties": {
                "idle_ms": {"type": "number", "exclusiveMinimum": 0},
                "hard_ms": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "install_delay_ms": {"type": "number", "minimum": 0},
        "overhead": {
            "type": "object",
            "properties": {
                "delays_ms": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"type": "number", "minimum": 0},
                },
                "rate": {"type": "string"},
            },
            "additionalProperties": False,
        },
        "export": {
            "type": "object",
            "properties": {
                "rate": {"type": "string"},
                "format": {"enum": ["jsonl", "csv"]},
            },
            "additionalProperties": False,
        },
        "output_dir": {"type": "string"},
        "workers": {"type": "integer", "minimum": 1},
    },
    "required": ["seed", "trace", "sampling", "rates", "trials", "experiments"],
    "additionalProperties": False,
}


def _ms_to_ns(ms: float) -> int:
    return int(round(ms * 1_000_000))


def parse_rate(text: str) -> Fraction:
    try:
        rate = Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad rate {text!r}: {exc}") from exc
    if not 0 < rate <= 1:
        raise ConfigError(f"rate {text!r} outside (0, 1]")
    return rate


def _parse_synthetic(spec: dict) -> SyntheticSpec:
    sizes = spec.get("sizes", {"kind": "geometric", "p": 0.5})
    if sizes["kind"] == "geometric":
        size_dist = Geometric(sizes["p"])
    elif sizes["kind"] == "pareto":
        size_dist = ParetoDiscrete(sizes["alpha"], sizes.get("min_size", 1))
    else:
        size_dist = Fixed(sizes["packets"])

    def key_mode(cfg: dict):
        return UniformRandom() if cfg["kind"] == "uniform" else ZipfSkewed(cfg["skew"])

    gaps = spec.get("gaps", {"kind": "exponential", "mean_ms": 50})
    if gaps["kind"] == "exponential":
        gap = ExponentialGap(_ms_to_ns(gaps["mean_ms"]))
    else:
        gap = FixedGap(_ms_to_ns(gaps["gap_ms"]))
    return SyntheticSpec(
        flow_count=spec["flows"],
        size_distribution=size_dist,
        ip_mode=key_mode(spec.get("ips", {"kind": "uniform"})),
        port_mode=key_mode(spec.get("ports", {"kind": "uniform"})),
        tcp_fraction=spec.get("tcp_fraction", 0.8),
        gap=gap,
        duration_ns=_ms_to_ns(spec.get("duration_ms", 1000)),
        seed=spec.get("seed", 0),
    )


_METHODS = {m.value: m for m in SamplingMethod}
_MODES = {m.value: m for m in SamplingMode}


@dataclass(frozen=True)
class CampaignConfig:
    """Validated campaign: everything needed to run and nothing ambient."""

    seed: int
    trace_path: str | None
    synthetic: SyntheticSpec | None
    randomize_keys_seed: int | None
    sampling: tuple[tuple[SamplingMethod, SamplingMode], ...]
    rates: tuple[Fraction, ...]
    trials: int
    experiments: tuple[str, ...]
    controller: ControllerConfig
    overhead_delays_ns: tuple[int, ...]
    overhead_rate: Fraction
    export_rate: Fraction
    export_format: str
    output_dir: str | None
    workers: int

    def load_trace(self) -> list:
        if self.trace_path is not None:
            trace = list(read_csv_trace(self.trace_path))
        else:
            trace = generate_trace(self.synthetic)
        if self.randomize_keys_seed is not None:
            trace = randomize_trace(trace, self.randomize_keys_seed)
        return trace


def load_campaign(path: str) -> CampaignConfig:
    """Parse and validate a campaign file; raises ConfigError on any problem."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read campaign file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"campaign file is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"campaign config invalid at {where}: {exc.message}") from exc

    trace_cfg = raw["trace"]
    trace_path = trace_cfg.get("csv")
    if trace_path is not None:
        resolved = Path(path).parent / trace_path
        if not resolved.exists():
            raise ConfigError(f"trace not found: {resolved}")
        trace_path = str(resolved)
    synthetic = None
    if "synthetic" in trace_cfg:
        try:
            synthetic = _parse_synthetic(trace_cfg["synthetic"])
        except ValueError as exc:
            raise ConfigError(f"bad synthetic trace spec: {exc}") from exc

    sampling = tuple(
        (_METHODS[item["method"]], _MODES[item.get("mode", "source")])
        for item in raw["sampling"]
    )
    rates = tuple(parse_rate(r) for r in raw["rates"])
    timeouts = raw.get("timeouts", {})
    try:
        controller = ControllerConfig(
            install_delay_ns=_ms_to_ns(raw.get("install_delay_ms", 0)),
            idle_timeout_ns=_ms_to_ns(timeouts.get("idle_ms", 15_000)),
            hard_timeout_ns=_ms_to_ns(timeouts.get("hard_ms", 0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    overhead = raw.get("overhead", {})
    export = raw.get("export", {})
    workers = raw.get("workers") or int(os.environ.get(WORKERS_ENV, "1") or "1")
    if workers < 1:
        raise ConfigError("worker count must be >= 1")
    return CampaignConfig(
        seed=raw["seed"],
        trace_path=trace_path,
        synthetic=synthetic,
        randomize_keys_seed=raw.get("randomize_keys_seed"),
        sampling=sampling,
        rates=rates,
        trials=raw["trials"],
        experiments=tuple(raw["experiments"]),
        controller=controller,
        overhead_delays_ns=tuple(
            _ms_to_ns(d) for d in overhead.get("delays_ms", DEFAULT_OVERHEAD_DELAYS_MS)
        ),
        overhead_rate=parse_rate(overhead.get("rate", "1")),
        export_rate=parse_rate(export["rate"]) if "rate" in export else rates[0],
        export_format=export.get("format", "jsonl"),
        output_dir=raw.get("output_dir"),
        workers=workers,
    )


def _rate_cell(args):
    trace, method, mode, rate, trials, seed, controller = args
    return run_rate_experiment(trace, method, mode, rate, trials, seed, controller)


def _wmrd_cell(args):
    trace, method, mode, rate, trials, seed, controller = args
    return run_wmrd_experiment(trace, method, mode, rate, trials, seed, controller)


def _run_cells(cell_fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [cell_fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(cell_fn, jobs))


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path: Path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_campaign(config: CampaignConfig, out_dir: str, progress=print) -> list[str]:
    """Execute every selected experiment; returns the files written.

    Cells (method, mode, rate) may run in a worker pool, but output ordering
    is fixed by sorting on the cell coordinates, never by completion.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace = config.load_trace()
    progress(f"trace ready: {len(trace)} packets")
    written: list[str] = []

    cells = [
        (method, mode, rate)
        for method, mode in config.sampling
        for rate in config.rates
    ]

    def cell_seed(tag: str, method, mode, rate) -> int:
        return derive_seed(config.seed, tag, method.value, mode.value, str(rate))

    if "rate" in config.experiments:
        jobs = [
            (trace, m, mo, r, config.trials, cell_seed("rate", m, mo, r), config.controller)
            for m, mo, r in cells
        ]
        summaries = _run_cells(_rate_cell, jobs, config.workers)
        summaries.sort(key=lambda s: (s.method.value, s.mode.value, s.target_rate))
        rows = []
        for s in summaries:
            for trial, count in enumerate(s.counts):
                rows.append(
                    [s.method.value, s.mode.value, str(s.target_rate), str(s.realized_rate),
                     trial, count, s.theoretical_count]
                )
        _write_csv(
            out / "rate_results.csv",
            ["method", "mode", "target_rate", "realized_rate", "trial", "sampled_flows",
             "theoretical_flows"],
            rows,
        )
        _write_json(
            out / "rate_summary.json",
            [
                {
                    "method": s.method.value,
                    "mode": s.mode.value,
                    "target_rate": str(s.target_rate),
                    "realized_rate": str(s.realized_rate),
                    "trials": s.trials,
                    "theoretical_count": s.theoretical_count,
                    "median": s.median,
                    "p5": s.p5,
                    "p95": s.p95,
                }
                for s in summaries
            ],
        )
        written += ["rate_results.csv", "rate_summary.json"]
        progress(f"rate experiment done: {len(summaries)} cells")

    if "wmrd" in config.experiments:
        jobs = [
            (trace, m, mo, r, config.trials, cell_seed("wmrd", m, mo, r), config.controller)
            for m, mo, r in cells
        ]
        summaries = _run_cells(_wmrd_cell, jobs, config.workers)
        summaries.sort(key=lambda s: (s.method.value, s.mode.value, s.target_rate))
        rows = []
        for s in summaries:
            for trial, value in enumerate(s.values):
                rows.append(
                    [s.method.value, s.mode.value, str(s.target_rate), str(s.realized_rate),
                     trial, value]
                )
        _write_csv(
            out / "wmrd_results.csv",
            ["method", "mode", "target_rate", "realized_rate", "trial", "wmrd"],
            rows,
        )
        _write_json(
            out / "wmrd_summary.json",
            [
                {
                    "method": s.method.value,
                    "mode": s.mode.value,
                    "target_rate": str(s.target_rate),
                    "realized_rate": str(s.realized_rate),
                    "trials": s.trials,
                    "min": s.minimum,
                    "q1": s.q1,
                    "median": s.median,
                    "q3": s.q3,
                    "max": s.maximum,
                }
                for s in summaries
            ],
        )
        written += ["wmrd_results.csv", "wmrd_summary.json"]
        progress(f"wmrd experiment done: {len(summaries)} cells")

    if "overhead" in config.experiments:
        sampling_cfg = None
        if config.overhead_rate != 1:
            method, mode = config.sampling[0]
            sampling_cfg = config_for_rate(
                method, mode, config.overhead_rate, derive_seed(config.seed, "overhead")
            )
        points = run_overhead_experiment(
            trace,
            config.overhead_delays_ns,
            sampling=sampling_cfg,
            idle_timeout_ns=config.controller.idle_timeout_ns,
        )
        rows = [
            [p.install_delay_ns, p.protocol.name, p.flows, p.redundant_packets,
             p.mean_redundant_packets_per_flow, p.redundant_bytes, p.total_flow_bytes,
             p.redundant_byte_percent]
            for p in points
        ]
        _write_csv(
            out / "overhead_results.csv",
            ["install_delay_ns", "protocol", "flows", "redundant_packets",
             "mean_redundant_packets_per_flow", "redundant_bytes", "total_flow_bytes",
             "redundant_byte_percent"],
            rows,
        )
        written.append("overhead_results.csv")
        progress(f"overhead experiment done: {len(config.overhead_delays_ns)} delays")

    if "export" in config.experiments:
        for method, mode in config.sampling:
            cfg = config_for_rate(
                method, mode, config.export_rate,
                cell_seed("export", method, mode, config.export_rate),
            )
            result = Simulation(cfg, config.controller, track_flows=False).run(trace)
            name = f"records_{method.value}_{mode.value}.{config.export_format}"
            with open(out / name, "w", newline="") as fh:
                export_records(result.records, fh, config.export_format)
            written.append(name)
        progress(f"export experiment done: {len(config.sampling)} record files")

    _write_json(out / "manifest.json", {"files": sorted(written)})
    written.append("manifest.json")
    return [str(out / name) for name in written]
