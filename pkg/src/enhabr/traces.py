"""Network traces: loading, validation, downscaling, and one-step predictors."""

import csv
import json
import math
from dataclasses import dataclass, replace
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from enhabr.errors import DegenerateTrace, NotInitialized, ParseError, ValidationError

NETWORK_KINDS = ("threeG", "fourG", "fiveG", "wifi", "synthetic")
CSV_FIELDS = ("timestamp_s", "throughput_kbps", "loss_rate")
_FIELD_ALIASES = {"timestamp": "timestamp_s", "throughput": "throughput_kbps", "loss": "loss_rate"}

EWMA = "ewma"
HOLT_WINTERS = "holt_winters"


@dataclass(frozen=True)
class TraceSample:
    timestamp: float
    throughput: float
    loss_rate: float


@dataclass(frozen=True)
class NetworkTrace:
    """Throughput (kbps) and loss observations.

    Sample ``i`` describes the interval ``(t[i-1], t[i]]``; throughput is
    treated as piecewise constant over that interval.
    """

    id: str
    network_kind: str
    samples: tuple

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if self.network_kind not in NETWORK_KINDS:
            raise ValidationError(f"unknown network kind {self.network_kind!r}")
        if len(self.samples) < 2:
            raise ValidationError("a trace needs at least 2 samples")
        prev = None
        for i, s in enumerate(self.samples):
            if not all(math.isfinite(v) for v in (s.timestamp, s.throughput, s.loss_rate)):
                raise ValidationError(f"sample {i} has a non-finite field")
            if s.throughput < 0:
                raise ValidationError(f"sample {i}: negative throughput {s.throughput}")
            if not 0.0 <= s.loss_rate <= 1.0:
                raise ValidationError(f"sample {i}: loss_rate {s.loss_rate} outside [0, 1]")
            if prev is not None and s.timestamp <= prev:
                raise ValidationError(
                    f"sample {i}: timestamp {s.timestamp} does not increase (previous {prev})"
                )
            prev = s.timestamp

    @property
    def duration(self):
        return self.samples[-1].timestamp - self.samples[0].timestamp

    @cached_property
    def timestamps(self):
        return np.array([s.timestamp for s in self.samples])

    @cached_property
    def throughput(self):
        return np.array([s.throughput for s in self.samples])

    @cached_property
    def loss(self):
        return np.array([s.loss_rate for s in self.samples])

    @property
    def mean_throughput(self):
        return float(self.throughput.mean())

    @property
    def mean_loss(self):
        return float(self.loss.mean())


def _parse_float(text, what, line):
    try:
        return float(text)
    except (TypeError, ValueError):
        raise ParseError(f"cannot parse {what} {text!r}", line=line) from None


def _read_csv(path):
    meta = {}
    samples = []
    columns = None
    with open(path, newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].partition(":")
                if sep:
                    meta[key.strip()] = value.strip()
                continue
            row = next(csv.reader([line]))
            if columns is None and not _looks_numeric(row[0]):
                columns = [_FIELD_ALIASES.get(c.strip(), c.strip()) for c in row]
                missing = set(CSV_FIELDS) - set(columns)
                if missing:
                    raise ParseError(f"header lacks {sorted(missing)}", line=lineno)
                continue
            cols = columns or list(CSV_FIELDS)
            if len(row) != len(cols):
                raise ParseError(f"expected {len(cols)} fields, got {len(row)}", line=lineno)
            rec = dict(zip(cols, row))
            samples.append(TraceSample(
                _parse_float(rec["timestamp_s"], "timestamp", lineno),
                _parse_float(rec["throughput_kbps"], "throughput", lineno),
                _parse_float(rec["loss_rate"], "loss_rate", lineno),
            ))
    return meta, samples


def _looks_numeric(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def _read_json(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    if not isinstance(doc, dict) or "samples" not in doc:
        raise ParseError("trace JSON must be an object with a 'samples' list")
    samples = []
    for i, rec in enumerate(doc["samples"]):
        try:
            samples.append(TraceSample(
                float(rec["timestamp_s"]), float(rec["throughput_kbps"]), float(rec["loss_rate"])
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"sample {i} is malformed ({exc})") from None
    meta = {k: doc[k] for k in ("id", "network_kind") if k in doc}
    return meta, samples


def load_trace(path, format=None):
    """Read a CSV or JSON trace; ``format`` defaults to the file extension."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "csv":
        meta, samples = _read_csv(path)
    elif fmt == "json":
        meta, samples = _read_json(path)
    else:
        raise ParseError(f"unsupported trace format {fmt!r}")
    return NetworkTrace(
        id=str(meta.get("id", path.stem)),
        network_kind=str(meta.get("network_kind", "synthetic")),
        samples=samples,
    )


def load_trace_dir(directory):
    paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in (".csv", ".json"))
    return [load_trace(p) for p in paths]


def save_trace(trace, path, format=None):
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            fh.write(f"# id: {trace.id}\n# network_kind: {trace.network_kind}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_FIELDS)
            for s in trace.samples:
                writer.writerow([repr(s.timestamp), repr(s.throughput), repr(s.loss_rate)])
    elif fmt == "json":
        doc = {
            "id": trace.id,
            "network_kind": trace.network_kind,
            "samples": [dict(zip(CSV_FIELDS, (s.timestamp, s.throughput, s.loss_rate)))
                        for s in trace.samples],
        }
        path.write_text(json.dumps(doc, indent=1) + "\n")
    else:
        raise ParseError(f"unsupported trace format {fmt!r}")


def bundled_trace(name="fixture_3g"):
    """A trace shipped with the package (see ``enhabr/data``)."""
    with resources.as_file(resources.files("enhabr.data").joinpath(f"{name}.csv")) as p:
        return load_trace(p)


def scale_throughput(trace, factor):
    if factor == 1.0:
        return trace
    samples = [replace(s, throughput=s.throughput * factor) for s in trace.samples]
    return replace(trace, samples=samples)


def downscale_trace(trace, ladder, target_mean="auto"):
    """Multiply every throughput sample by one scalar so the mean hits ``target_mean``.

    ``"auto"`` targets the midpoint of the ladder's lowest and highest rungs.
    """
    if not ladder.bitrates:
        raise ValidationError("ladder is empty")
    mean = trace.mean_throughput
    if mean <= 0:
        raise DegenerateTrace(f"trace {trace.id} has all-zero throughput")
    target = ladder.midpoint if target_mean == "auto" else float(target_mean)
    if target <= 0:
        raise ValidationError("target mean must be positive")
    if target == mean:
        return trace
    return scale_throughput(trace, target / mean)


def with_loss(trace, loss_rate):
    """Copy of ``trace`` whose loss column is the constant ``loss_rate``."""
    samples = [replace(s, loss_rate=loss_rate) for s in trace.samples]
    return replace(trace, samples=samples)


@dataclass(frozen=True)
class PredictorState:
    """One-step predictor; ``level``/``trend`` are in the predicted series' unit."""

    kind: str = EWMA
    ewma_alpha: float = 0.3
    hw_alpha: float = 0.5
    hw_beta: float = 0.1
    level: float = 0.0
    trend: float = 0.0
    count: int = 0

    def __post_init__(self):
        if self.kind not in (EWMA, HOLT_WINTERS):
            raise ValidationError(f"unknown predictor kind {self.kind!r}")
        if not 0 < self.ewma_alpha <= 1:
            raise ValidationError("ewma_alpha must lie in (0, 1]")
        if not (0 < self.hw_alpha <= 1 and 0 < self.hw_beta <= 1):
            raise ValidationError("Holt-Winters constants must lie in (0, 1]")

    @property
    def initialized(self):
        return self.count > 0

    @property
    def prediction(self):
        if not self.initialized:
            raise NotInitialized("predictor has not seen any observation")
        if self.kind == EWMA:
            return self.level
        return self.level + self.trend


def predict_next(state, observation):
    """Fold one observation into ``state``; returns ``(new_state, prediction)``.

    Holt-Winters is the non-seasonal additive-trend form, initialised from the
    first two observations (level = second value, trend = their difference).
    """
    if not math.isfinite(observation) or observation < 0:
        raise ValidationError(f"observation must be finite and >= 0, got {observation}")
    if state.kind == EWMA:
        if state.count == 0:
            level = observation
        else:
            level = state.ewma_alpha * observation + (1 - state.ewma_alpha) * state.level
        new = replace(state, level=level, count=state.count + 1)
    elif state.count == 0:
        new = replace(state, level=observation, trend=0.0, count=1)
    elif state.count == 1:
        new = replace(state, level=observation, trend=observation - state.level, count=2)
    else:
        a, b = state.hw_alpha, state.hw_beta
        level = a * observation + (1 - a) * (state.level + state.trend)
        trend = b * (level - state.level) + (1 - b) * state.trend
        new = replace(state, level=level, trend=trend, count=state.count + 1)
    return new, new.prediction
