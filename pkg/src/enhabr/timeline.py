"""Frame timing inside one chunk: play-out and arrival times, frame classes,
and the stall attributable to recovering a late frame.

Frames are 1-indexed. Frame ``i`` is due at ``t_prev + i * delta`` and has
fully arrived once the cumulative bytes of frames ``1..i`` have been
delivered at the predicted throughput, starting from ``t_start`` (which
defaults to ``t_prev``). A frame is *ready* ``decode_time`` after arrival.
"""

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from enhabr.errors import IndexOutOfRange, ValidationError, WrongClass, ZeroThroughput

NEEDS_RECOVERY = "needs_recovery"
SR_ELIGIBLE = "sr_eligible"
RECEIVED_NO_SR = "received_no_sr"
CLASS_NAMES = (NEEDS_RECOVERY, SR_ELIGIBLE, RECEIVED_NO_SR)


@dataclass(frozen=True, eq=False)
class ChunkTiming:
    t_prev: float
    delta: float
    frame_sizes: np.ndarray  # bytes per frame
    tput: float              # kbps
    n_frames: int = None
    t_start: float = None
    decode_time: float = 0.0

    def __post_init__(self):
        sizes = np.asarray(self.frame_sizes, dtype=float).reshape(-1)
        object.__setattr__(self, "frame_sizes", sizes)
        if self.n_frames is None:
            object.__setattr__(self, "n_frames", len(sizes))
        if self.t_start is None:
            object.__setattr__(self, "t_start", self.t_prev)
        if self.delta <= 0:
            raise ValidationError("inter-frame time must be positive")
        if len(sizes) != self.n_frames or self.n_frames < 1:
            raise ValidationError("frame_sizes must have one entry per frame")
        if np.any(sizes <= 0):
            raise ValidationError("frame sizes must be positive")
        if self.decode_time < 0:
            raise ValidationError("decode_time must be >= 0")

    @cached_property
    def play_times(self):
        return self.t_prev + np.arange(1, self.n_frames + 1) * self.delta

    @cached_property
    def arrival_times(self):
        if not self.tput > 0:
            raise ZeroThroughput("predicted throughput must be positive")
        if math.isinf(self.tput):
            return np.full(self.n_frames, float(self.t_start))
        return self.t_start + np.cumsum(self.frame_sizes) * 8.0 / 1000.0 / self.tput

    @cached_property
    def ready_times(self):
        return self.arrival_times + self.decode_time

    def _check(self, i):
        if not 1 <= i <= self.n_frames:
            raise IndexOutOfRange(f"frame index {i} outside 1..{self.n_frames}")


def expected_play_time(timing, i):
    timing._check(i)
    return timing.t_prev + i * timing.delta


def expected_arrival_time(timing, i):
    timing._check(i)
    return float(timing.arrival_times[i - 1])


@dataclass(frozen=True)
class FrameClass:
    index: int
    t_play: float
    t_arr: float
    cls: str


@dataclass(frozen=True, eq=False)
class Classification:
    codes: np.ndarray          # 0 needs_recovery, 1 sr_eligible, 2 received_no_sr
    play_times: np.ndarray
    arrival_times: np.ndarray
    predicted_loss: float

    @property
    def n_frames(self):
        return len(self.codes)

    @cached_property
    def late(self):
        return int(np.count_nonzero(self.codes == 0))

    @cached_property
    def sr_eligible(self):
        return int(np.count_nonzero(self.codes == 1))

    @cached_property
    def received_no_sr(self):
        return int(np.count_nonzero(self.codes == 2))

    @property
    def expected_lost(self):
        """Lost frames among those not already late (no double counting)."""
        return self.predicted_loss * (self.n_frames - self.late)

    @property
    def expected_recovered(self):
        return self.late + self.expected_lost

    @property
    def expected_sr(self):
        return self.sr_eligible * (1.0 - self.predicted_loss)

    @property
    def expected_plain(self):
        return self.received_no_sr * (1.0 - self.predicted_loss)

    @property
    def frames(self):
        return [
            FrameClass(i + 1, float(tp), float(ta), CLASS_NAMES[c])
            for i, (c, tp, ta) in enumerate(zip(self.codes, self.play_times, self.arrival_times))
        ]


def classify_frames(timing, cost, predicted_loss=0.0):
    """Split a chunk's frames into late / SR-eligible / received-without-SR.

    A frame is late when it is ready after its play time. An on-time frame is
    SR-eligible only if SR finishes strictly before play-out, so SR never
    adds a stall.
    """
    if not 0.0 <= predicted_loss <= 1.0:
        raise ValidationError("predicted_loss must lie in [0, 1]")
    play = timing.play_times
    ready = timing.ready_times
    codes = np.full(timing.n_frames, 2, dtype=np.int8)
    codes[play > ready + cost.t_sr] = 1
    codes[ready > play] = 0
    return Classification(codes, play, timing.arrival_times, float(predicted_loss))


def recovery_rebuffer_time(timing, cost, i, lost=False):
    """Stall from recovering frame ``i``: lateness capped at the recovery time.

    Only frames that go through recovery have a stall; pass ``lost=True`` for
    a frame that is recovered because it was lost rather than late.
    """
    timing._check(i)
    late_by = float(timing.ready_times[i - 1] - timing.play_times[i - 1])
    if late_by < 0 and not lost:
        raise WrongClass(f"frame {i} is early and not lost; it is not recovered")
    return max(0.0, min(late_by, cost.t_rc))


def recovery_rebuffer_times(timing, cost):
    """Vector form over all frames (zero for frames that are on time)."""
    late_by = timing.ready_times - timing.play_times
    return np.clip(late_by, 0.0, cost.t_rc)


def wait_stall(timing):
    """Stall of a player that waits for every late frame.

    Waiting shifts all later play times, so the chunk's total stall is the
    largest lateness, not the sum.
    """
    return max(0.0, float(np.max(timing.ready_times - timing.play_times)))


def recovery_tail(timing, cost):
    """Stalls when the first late frame triggers recovery of the chunk's tail.

    The client stops waiting for data at the first late frame and recovers
    it and every later frame. Each recovered frame depends on the one before
    it, so after the first (stall capped at ``t_rc``) the chain only stalls
    when recovery is slower than the frame interval.

    Returns ``(first, stalls)``: the 1-based index of the first late frame
    (``None`` when every frame is on time) and one stall per tail frame.
    """
    late_by = timing.ready_times - timing.play_times
    late = np.flatnonzero(late_by > 0)
    if late.size == 0:
        return None, np.zeros(0)
    first = int(late[0]) + 1
    stalls = np.full(timing.n_frames - first + 1, max(0.0, cost.t_rc - timing.delta))
    stalls[0] = recovery_rebuffer_time(timing, cost, first)
    return first, stalls
