"""JSON/CSV formats: scenario and problem inputs, output bundles.

Inputs are strict: ``schema_version`` must be 1 and unknown keys are
rejected. CSV floats are written with 17 significant digits so traces
round-trip bit for bit; JSON floats use Python's shortest round-trip repr.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import jsonschema
import numpy as np

from .model import ConfigurationError, SystemConfig
from .sim import ArrivalModel, MarkovChain, MarkovChannelModel, Scenario, SimTrace, summarize

SCHEMA_VERSION = 1
TRACE_COLUMNS = ("slot", "user", "band", "queue", "rate", "energy", "gain")
SWEEP_COLUMNS = ("V", "seed", "power", "mean_queue", "stable")

_number_list = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_chain = {
    "type": "object",
    "additionalProperties": False,
    "required": ["states", "transition"],
    "properties": {
        "states": _number_list,
        "transition": {"type": "array", "items": _number_list, "minItems": 1},
        "initial": _number_list,
    },
}

SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "system", "channel", "arrivals", "horizon"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n_users", "n_bands", "noise_psd", "v_param"],
            "properties": {
                "n_users": {"type": "integer", "minimum": 1},
                "n_bands": {"type": "integer", "minimum": 1},
                "noise_psd": {"type": "number", "exclusiveMinimum": 0},
                "v_param": {"type": "number", "minimum": 0},
                "symbols_per_slot": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "channel": {
            "oneOf": [
                _chain,
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["chains"],
                    "properties": {
                        "chains": {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": _chain}}
                    },
                },
            ]
        },
        "arrivals": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "mean"],
            "properties": {
                "kind": {"enum": ["deterministic", "bernoulli_bulk", "poisson", "discretized_exponential"]},
                "mean": {"oneOf": [{"type": "number", "minimum": 0}, _number_list]},
                "size": {"oneOf": [{"type": "number", "exclusiveMinimum": 0}, _number_list]},
            },
        },
        "horizon": {"type": "integer", "minimum": 1},
        "burn_in_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "initial_queue": _number_list,
    },
}

PROBLEM_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "gains", "queues"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "gains": _number_list,
        "queues": _number_list,
        "vn0": {"type": "number", "exclusiveMinimum": 0},
        "v_param": {"type": "number", "exclusiveMinimum": 0},
        "noise_psd": {"type": "number", "exclusiveMinimum": 0},
    },
    "oneOf": [
        {"required": ["vn0"], "not": {"anyOf": [{"required": ["v_param"]}, {"required": ["noise_psd"]}]}},
        {"required": ["v_param", "noise_psd"], "not": {"required": ["vn0"]}},
    ],
}


def _load_json(path, schema) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if exc.lineno - 1 < len(text.splitlines()) else ""
        raise ConfigurationError(
            f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})\n    {line}"
        ) from exc
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"{path}: {where}: {exc.message}") from exc
    return doc


def _chain_from(doc) -> MarkovChain:
    states = doc["states"]
    initial = doc.get("initial", [1.0 / len(states)] * len(states))
    return MarkovChain(states, doc["transition"], initial)


def scenario_from_dict(doc: dict) -> Scenario:
    jsonschema.validate(doc, SCENARIO_SCHEMA)
    system = SystemConfig(**doc["system"])
    n, m = system.n_users, system.n_bands
    ch = doc["channel"]
    if "chains" in ch:
        channel = MarkovChannelModel(tuple(tuple(_chain_from(c) for c in row) for row in ch["chains"]))
    else:
        channel = MarkovChannelModel.uniform(_chain_from(ch), n, m)
    arr = doc["arrivals"]
    mean = np.broadcast_to(np.asarray(arr["mean"], dtype=float), (n,)) if np.ndim(arr["mean"]) == 0 else arr["mean"]
    arrivals = ArrivalModel(arr["kind"], mean, arr.get("size"))
    return Scenario(
        system=system,
        channel=channel,
        arrivals=arrivals,
        horizon=doc["horizon"],
        burn_in_fraction=doc.get("burn_in_fraction", 0.1),
        seed=doc.get("seed", 0),
        initial_queue=doc.get("initial_queue"),
    )


def load_scenario(path) -> Scenario:
    doc = _load_json(path, SCENARIO_SCHEMA)
    try:
        return scenario_from_dict(doc)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


def load_problem(path):
    """Read a single-band problem file; returns ``(gains, queues, vn0)``."""
    doc = _load_json(path, PROBLEM_SCHEMA)
    gains = np.asarray(doc["gains"], dtype=float)
    queues = np.asarray(doc["queues"], dtype=float)
    if gains.shape != queues.shape:
        raise ConfigurationError(f"{path}: gains and queues differ in length")
    if np.any(gains <= 0):
        raise ConfigurationError(f"{path}: gain must be positive")
    if np.any(queues < 0):
        raise ConfigurationError(f"{path}: queues must be nonnegative")
    vn0 = doc["vn0"] if "vn0" in doc else doc["v_param"] * doc["noise_psd"]
    return gains, queues, float(vn0)


def dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- output bundle ----------------------------------------------------------------


def summary_document(trace: SimTrace, scenario: Scenario) -> dict:
    doc = trace.summary.to_dict()
    doc["schema_version"] = SCHEMA_VERSION
    doc["seed"] = scenario.seed
    doc["v_param"] = scenario.system.v_param
    doc["noise_psd"] = scenario.system.noise_psd
    doc["symbols_per_slot"] = trace.symbols_per_slot
    doc["mean_arrival"] = trace.mean_arrival.tolist()
    return doc


def write_trace_csv(trace: SimTrace, path):
    t, n, m = trace.rates.shape
    slot, user, band = np.meshgrid(np.arange(t), np.arange(n), np.arange(m), indexing="ij")
    queue = np.broadcast_to(trace.queues[:, :, None], (t, n, m))
    cols = [slot, user, band, queue, trace.rates, trace.energies, trace.gains]
    table = np.column_stack([c.reshape(-1) for c in cols])
    np.savetxt(
        path, table, delimiter=",", header=",".join(TRACE_COLUMNS), comments="",
        fmt=["%d", "%d", "%d"] + ["%.17g"] * 4,
    )


def read_trace_csv(path, summary_doc: dict) -> SimTrace:
    """Rebuild a trace from ``trace.csv`` plus the run constants kept in summary.json."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if tuple(header) != TRACE_COLUMNS:
        raise ConfigurationError(f"{path}: unexpected header {header}")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t, n, m = (int(table[:, i].max()) + 1 for i in range(3))
    if table.shape[0] != t * n * m:
        raise ConfigurationError(f"{path}: expected {t * n * m} rows, found {table.shape[0]}")
    cube = table.reshape(t, n, m, len(TRACE_COLUMNS))
    trace = SimTrace(
        queues=np.ascontiguousarray(cube[:, :, 0, 3]),
        arrivals=np.full((t, n), np.nan),
        gains=np.ascontiguousarray(cube[..., 6]),
        channel_state=np.full((t, n, m), -1),
        rates=np.ascontiguousarray(cube[..., 4]),
        energies=np.ascontiguousarray(cube[..., 5]),
        mean_arrival=np.asarray(summary_doc["mean_arrival"], dtype=float),
        burn_in=int(summary_doc["burn_in"]),
        symbols_per_slot=float(summary_doc["symbols_per_slot"]),
    )
    trace.summary = summarize(trace)
    return trace


def write_bundle(trace: SimTrace, scenario: Scenario, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(summary_document(trace, scenario), out / "summary.json")
    write_trace_csv(trace, out / "trace.csv")
    return out


def resummarize_bundle(out_dir) -> dict:
    """Recompute summary.json from trace.csv alone."""
    out = Path(out_dir)
    stored = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    trace = read_trace_csv(out / "trace.csv", stored)
    doc = trace.summary.to_dict()
    for key in ("schema_version", "seed", "v_param", "noise_psd", "symbols_per_slot", "mean_arrival"):
        doc[key] = stored[key]
    return doc


def write_sweep_csv(rows, fh):
    fh.write(",".join(SWEEP_COLUMNS) + "\n")
    for r in rows:
        stable = "NA" if r.stable is None else str(r.stable).lower()
        fh.write(f"{r.v:.17g},{r.seed},{r.power:.17g},{r.mean_queue:.17g},{stable}\n")


def read_sweep_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
