"""Bitrate ladder, calibrated quality maps, and enhancement latency constants.

The quality model is data: anchor points loaded from JSON and linearly
interpolated. The shipped calibration lives in ``data/quality_default.json``.
"""

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from enhabr.errors import ConfigError, OutOfRange, ValidationError

RESOLUTIONS = ("p240", "p360", "p480", "p720", "p1080")

NONE = "none"
SR = "sr"
RECOVERY = "recovery"
REUSE = "reuse"


def resolution_key(res):
    """Normalise ``240``, ``"240"``, ``"240p"`` or ``"p240"`` to ``"p240"``."""
    text = str(res).strip().lower().strip("p")
    key = f"p{text}"
    if key not in RESOLUTIONS:
        raise ConfigError(f"unknown resolution {res!r}")
    return key


@dataclass(frozen=True)
class Rung:
    bitrate: float
    resolution: str


@dataclass(frozen=True)
class LadderSpec:
    rungs: tuple = (
        Rung(512, "p240"),
        Rung(1024, "p360"),
        Rung(1600, "p480"),
        Rung(2640, "p720"),
        Rung(4400, "p1080"),
    )
    chunk_duration: float = 4.0
    fps: float = 30.0
    gop_frames: int = 120

    def __post_init__(self):
        if not self.rungs:
            raise ValidationError("ladder must have at least one rung")
        rates = [r.bitrate for r in self.rungs]
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValidationError("ladder bitrates must be strictly increasing")
        if rates[0] <= 0:
            raise ValidationError("ladder bitrates must be positive")
        for r in self.rungs:
            resolution_key(r.resolution)
        if self.chunk_duration <= 0 or self.fps <= 0 or self.gop_frames < 1:
            raise ValidationError("chunk geometry must be positive")
        if abs(self.gop_frames - self.chunk_duration * self.fps) > 1e-9:
            raise ValidationError("gop_frames must equal chunk_duration * fps")

    @property
    def bitrates(self):
        return tuple(r.bitrate for r in self.rungs)

    @property
    def delta(self):
        """Inter-frame time in seconds."""
        return 1.0 / self.fps

    @property
    def midpoint(self):
        return (self.bitrates[0] + self.bitrates[-1]) / 2.0

    def resolution_of(self, bitrate):
        for r in self.rungs:
            if r.bitrate == bitrate:
                return r.resolution
        raise OutOfRange(f"{bitrate} kbps is not a ladder rung")

    def frame_bytes(self, bitrate):
        """Uniform per-frame size for a chunk encoded at ``bitrate`` kbps."""
        return bitrate * 1000.0 * self.chunk_duration / 8.0 / self.gop_frames


def _anchors(pairs, name):
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 1:
        raise ConfigError(f"{name} must be a list of [x, y] pairs")
    if np.any(np.diff(arr[:, 0]) <= 0):
        raise ConfigError(f"{name} anchors must have strictly increasing x")
    return arr


@dataclass(frozen=True, eq=False)
class QualityModel:
    """Piecewise-linear quality maps.

    ``base_psnr`` maps kbps to dB. ``recovery_psnr`` and ``reuse_psnr`` map the
    depth of a frame inside a run of consecutive concealed frames (1 = the
    first concealed frame) to its PSNR, clamped outside the anchor range.
    """

    base_psnr: np.ndarray
    sr_gain: dict
    recovery_psnr: np.ndarray
    reuse_psnr: np.ndarray
    notes: str = ""

    def __post_init__(self):
        object.__setattr__(self, "base_psnr", _anchors(self.base_psnr, "base_psnr"))
        object.__setattr__(self, "recovery_psnr", _anchors(self.recovery_psnr, "recovery_psnr"))
        object.__setattr__(self, "reuse_psnr", _anchors(self.reuse_psnr, "reuse_psnr"))
        gains = {resolution_key(k): float(v) for k, v in dict(self.sr_gain).items()}
        for res in RESOLUTIONS:
            gains.setdefault(res, 0.0)
        object.__setattr__(self, "sr_gain", gains)

        if np.any(np.diff(self.base_psnr[:, 1]) < 0):
            raise ValidationError("base_psnr must be non-decreasing in bitrate")
        for name in ("recovery_psnr", "reuse_psnr"):
            if np.any(np.diff(getattr(self, name)[:, 1]) > 0):
                raise ValidationError(f"{name} must be non-increasing in run depth")
            if getattr(self, name)[0, 0] < 1:
                raise ValidationError(f"{name} run depths start at 1")
        if any(g < 0 for g in gains.values()):
            raise ValidationError("sr_gain must be >= 0")
        if gains["p1080"] != 0:
            raise ValidationError("sr_gain at 1080p must be 0")

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {"base_psnr", "sr_gain", "recovery_psnr", "reuse_psnr", "notes"}
        if unknown:
            raise ConfigError(f"unknown quality-model keys: {sorted(unknown)}")
        try:
            return cls(
                base_psnr=data["base_psnr"],
                sr_gain=data["sr_gain"],
                recovery_psnr=data["recovery_psnr"],
                reuse_psnr=data["reuse_psnr"],
                notes=data.get("notes", ""),
            )
        except KeyError as exc:
            raise ConfigError(f"quality model is missing {exc.args[0]!r}") from None

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default(cls):
        text = resources.files("enhabr.data").joinpath("quality_default.json").read_text()
        return cls.from_dict(json.loads(text))

    def to_dict(self):
        return {
            "base_psnr": self.base_psnr.tolist(),
            "sr_gain": {k[1:]: v for k, v in self.sr_gain.items()},
            "recovery_psnr": self.recovery_psnr.tolist(),
            "reuse_psnr": self.reuse_psnr.tolist(),
            "notes": self.notes,
        }

    @property
    def max_sr_gain(self):
        return max(self.sr_gain.values())


@dataclass(frozen=True)
class EnhancementCost:
    """Per-frame latencies on the client, in seconds."""

    t_sr: float = 0.022
    t_rc: float = 0.022
    decode_time: dict = field(default_factory=lambda: {
        "p240": 0.0018, "p360": 0.0023, "p480": 0.0029, "p720": 0.0041, "p1080": 0.0062,
    })
    include_decode: bool = True

    def __post_init__(self):
        decode = {resolution_key(k): float(v) for k, v in dict(self.decode_time).items()}
        object.__setattr__(self, "decode_time", decode)
        if self.t_sr <= 0 or self.t_rc <= 0 or any(v <= 0 for v in decode.values()):
            raise ValidationError("enhancement costs must be strictly positive")

    def decode_for(self, resolution):
        if not self.include_decode:
            return 0.0
        return self.decode_time.get(resolution_key(resolution), 0.0)


def psnr_at(model, bitrate, enhancement=NONE, resolution=None):
    """Base PSNR at ``bitrate``, plus the SR gain of ``resolution`` when enhanced."""
    xs, ys = model.base_psnr[:, 0], model.base_psnr[:, 1]
    if not xs[0] <= bitrate <= xs[-1]:
        raise OutOfRange(f"{bitrate} kbps outside quality anchors [{xs[0]}, {xs[-1]}]")
    value = float(np.interp(bitrate, xs, ys))
    if enhancement == SR:
        if resolution is None:
            raise ConfigError("SR quality needs a resolution")
        value += model.sr_gain[resolution_key(resolution)]
    elif enhancement != NONE:
        raise ConfigError(f"unknown enhancement {enhancement!r}")
    return value


def recovered_psnr(model, consecutive, mode=RECOVERY):
    if consecutive < 1:
        raise OutOfRange("consecutive count starts at 1")
    if mode == RECOVERY:
        table = model.recovery_psnr
    elif mode == REUSE:
        table = model.reuse_psnr
    else:
        raise ConfigError(f"unknown concealment mode {mode!r}")
    return float(np.interp(consecutive, table[:, 0], table[:, 1]))


def concealed_psnr(model, depth, mode, bitrate):
    """Quality of the ``depth``-th consecutive concealed frame of a chunk at
    ``bitrate``; concealment never beats the chunk's own base quality."""
    return min(recovered_psnr(model, depth, mode), psnr_at(model, bitrate))


def mean_run_psnr(model, length, mode, bitrate):
    """Average of :func:`concealed_psnr` over depths ``1..length``."""
    if length < 1:
        raise OutOfRange("run length starts at 1")
    table = model.recovery_psnr if mode == RECOVERY else model.reuse_psnr
    depths = np.arange(1, int(length) + 1)
    values = np.minimum(np.interp(depths, table[:, 0], table[:, 1]), psnr_at(model, bitrate))
    return float(values.mean())


def expected_concealed_psnr(model, p_frame, mode, bitrate, max_depth):
    """Mean quality of a concealed frame when frames are lost independently
    with probability ``p_frame``: its depth in the run of losses is
    geometric, truncated at ``max_depth``."""
    if not 0.0 <= p_frame < 1.0:
        raise OutOfRange("p_frame must lie in [0, 1)")
    table = model.recovery_psnr if mode == RECOVERY else model.reuse_psnr
    depths = np.arange(1, int(max_depth) + 1)
    weights = p_frame ** (depths - 1)
    values = np.minimum(np.interp(depths, table[:, 0], table[:, 1]), psnr_at(model, bitrate))
    return float(np.dot(weights, values) / weights.sum())


def effective_bitrate(model, psnr):
    """Invert the base quality curve; quality above the top anchor clamps to it."""
    xs, ys = model.base_psnr[:, 0], model.base_psnr[:, 1]
    if psnr < ys[0]:
        raise OutOfRange(f"{psnr} dB is below the lowest quality anchor ({ys[0]} dB)")
    if psnr >= ys[-1]:
        return float(xs[-1])
    # Flat segments make the inverse ambiguous; take the lowest bitrate.
    hi = int(np.searchsorted(ys, psnr, side="left"))
    if ys[hi] == psnr:
        return float(xs[hi])
    lo = hi - 1
    frac = (psnr - ys[lo]) / (ys[hi] - ys[lo])
    return float(xs[lo] + frac * (xs[hi] - xs[lo]))
