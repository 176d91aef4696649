"""File formats: scenario YAML, IQ records, diagram and estimate tables."""

from __future__ import annotations

import csv
import re
import struct
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .estimation import ChirpEstimate
from .signal_model import ChirpPulseTrain, ConfigError, IQRecord, Scenario
from .sso import SSODiagram

IQ_MAGIC = b"CHIRPIQ\0"
_HEADER = struct.Struct("<8sdd")

ESTIMATE_COLUMNS = ["id", "gamma", "duration", "omega_rad_s", "slope_rad_s2", "b_sweep",
                    "b_slope", "rmse_p", "n_points"]
DIAGRAM_COLUMNS = ["snippet", "t", "lambda", "freq_rad_s", "magnitude"]

_TRAIN_KEYS = {"A": "amplitude", "theta": "theta", "omega": "theta", "B": "bandwidth_param",
               "d": "duration", "t0": "start_time", "PRI": "pri", "pulses": "burst_count"}


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads exponent floats without a sign (``1e9``, ``2.0e7``)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                |[-+]?\.(?:inf|Inf|INF)
                |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


@dataclass
class ScenarioFile:
    """A scenario plus the optional plan and pipeline hints stored with it."""

    scenario: Scenario
    plan: dict = field(default_factory=dict)
    pipeline: dict = field(default_factory=dict)


def _train(entry: dict) -> ChirpPulseTrain:
    unknown = set(entry) - set(_TRAIN_KEYS)
    if unknown:
        raise ConfigError(f"unknown train keys {sorted(unknown)}")
    if "theta" in entry and "omega" in entry:
        raise ConfigError("give either theta or omega, not both")
    kw = {_TRAIN_KEYS[k]: v for k, v in entry.items()}
    if "burst_count" in kw:
        kw["burst_count"] = int(kw["burst_count"])
    try:
        return ChirpPulseTrain(**{k: v if k == "burst_count" else float(v)
                                  for k, v in kw.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_scenario(doc: dict) -> ScenarioFile:
    if not isinstance(doc, dict) or "trains" not in doc:
        raise ConfigError("scenario needs a 'trains' list")
    try:
        sc = Scenario(tuple(_train(e) for e in doc["trains"]),
                      horizon=float(doc["horizon"]),
                      sample_rate=float(doc["sample_rate"]),
                      band_center=float(doc.get("band_center", 0.0)),
                      name=str(doc.get("name", "")))
    except KeyError as exc:
        raise ConfigError(f"scenario is missing {exc}") from exc
    return ScenarioFile(sc, dict(doc.get("plan") or {}), dict(doc.get("pipeline") or {}))


def bundled_examples() -> list[str]:
    root = resources.files("chirpsep") / "data" / "examples"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def example_path(name: str) -> Path:
    """Filesystem path of a bundled scenario such as ``example1`` or ``crossover``."""
    path = Path(str(resources.files("chirpsep") / "data" / "examples" / f"{name}.yaml"))
    if not path.is_file():
        raise ConfigError(f"no bundled scenario {name!r}; have {bundled_examples()}")
    return path


def load_scenario(path) -> ScenarioFile:
    """Read a scenario file; a bare name that is not a file selects a bundled example."""
    if not Path(path).exists() and not Path(path).suffix:
        path = example_path(str(path))
    with open(path) as fh:
        try:
            doc = yaml.load(fh, Loader=_Loader)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    sf = parse_scenario(doc)
    if not sf.scenario.name:
        sf.scenario = Scenario(sf.scenario.trains, sf.scenario.horizon,
                               sf.scenario.sample_rate, sf.scenario.band_center,
                               Path(path).stem)
    return sf


def scenario_to_dict(sf: ScenarioFile) -> dict:
    sc = sf.scenario
    doc = {"name": sc.name, "horizon": sc.horizon, "sample_rate": sc.sample_rate,
           "band_center": sc.band_center,
           "trains": [{"A": t.amplitude, "theta": t.theta, "B": t.bandwidth_param,
                       "d": t.duration, "t0": t.start_time, "PRI": t.pri,
                       "pulses": t.burst_count} for t in sc.trains]}
    if sf.plan:
        doc["plan"] = dict(sf.plan)
    if sf.pipeline:
        doc["pipeline"] = dict(sf.pipeline)
    return doc


def save_scenario(sf: ScenarioFile, path):
    with open(path, "w") as fh:
        yaml.safe_dump(scenario_to_dict(sf), fh, sort_keys=False)


# -- IQ records -------------------------------------------------------------------

def write_iq_csv(record: IQRecord, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "t", "re", "im"])
        for i, (t, s) in enumerate(zip(record.times, record.samples)):
            w.writerow([i, repr(float(t)), repr(float(s.real)), repr(float(s.imag))])


def read_iq_csv(path) -> IQRecord:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] < 1 or data.shape[1] != 4:
        raise ValueError(f"{path}: expected columns index,t,re,im")
    t = data[:, 1]
    if t.size > 1:
        rate = (t.size - 1) / (t[-1] - t[0])
    else:
        raise ValueError(f"{path}: need at least two samples to infer the rate")
    return IQRecord(data[:, 2] + 1j * data[:, 3], float(rate), float(t[0]))


def write_iq_bin(record: IQRecord, path):
    inter = np.empty(2 * len(record), "<f8")
    inter[0::2] = record.samples.real
    inter[1::2] = record.samples.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(IQ_MAGIC, record.sample_rate, record.t0))
        fh.write(inter.tobytes())


def read_iq_bin(path) -> IQRecord:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, rate, t0 = _HEADER.unpack_from(raw)
    if magic != IQ_MAGIC:
        raise ValueError(f"{path}: not a CHIRPIQ file")
    body = np.frombuffer(raw, "<f8", offset=_HEADER.size)
    if body.size % 2:
        raise ValueError(f"{path}: odd number of float64 values")
    return IQRecord(body[0::2] + 1j * body[1::2], rate, t0)


def write_iq(record: IQRecord, path):
    (write_iq_csv if str(path).endswith(".csv") else write_iq_bin)(record, path)


def read_iq(path) -> IQRecord:
    return read_iq_csv(path) if str(path).endswith(".csv") else read_iq_bin(path)


# -- tables -----------------------------------------------------------------------

def write_diagram_csv(diagram: SSODiagram, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DIAGRAM_COLUMNS)
        for row in zip(diagram.snippet, diagram.t, diagram.lam, diagram.freq,
                       diagram.magnitude):
            w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def write_estimates_csv(estimates: list[ChirpEstimate], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ESTIMATE_COLUMNS)
        for i, e in enumerate(estimates, start=1):
            w.writerow([i] + [repr(float(v)) for v in
                              (e.gamma, e.duration, e.omega, e.slope, e.b_param_sweep,
                               e.b_param_slope, e.rmse_p)] + [e.n_points])


def read_estimates_csv(path) -> list[ChirpEstimate]:
    """Estimates from a table; supports are not stored, so they come back empty."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(ChirpEstimate(
                gamma=float(row["gamma"]), duration=float(row["duration"]),
                omega=float(row["omega_rad_s"]), slope=float(row["slope_rad_s2"]),
                b_param_sweep=float(row["b_sweep"]), b_param_slope=float(row["b_slope"]),
                rmse_p=float(row["rmse_p"]), support=np.zeros(0, np.int64)))
    return out
