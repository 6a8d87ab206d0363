"""Packet-loss models and the frame-loss probability under per-frame FEC.

A frame of ``n`` data packets protected by ``r`` parity packets survives
whenever at most ``r`` of its ``n + r`` packets are lost (the erasure code
in :mod:`enhabr.fec.codec` reconstructs from any ``n``).
"""

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from enhabr.errors import ConfigError, UnsupportedModel

BERNOULLI = "bernoulli"
GILBERT_ELLIOTT = "gilbert_elliott"

# Bursty default calibrated so a 24-packet frame needs 25/30/35% parity
# at 1/3/5% loss for a 1e-3 frame-loss target.
DEFAULT_BURST_LENGTH = 4.0
DEFAULT_LOSS_IN_BAD = 0.25
DEFAULT_FRAME_PACKETS = 24
DEFAULT_RATIO_GRID = tuple(round(0.05 * i, 2) for i in range(11))
DEFAULT_TARGET = 1e-3

_MC_BATCH = 200_000


class _NotAchievableType:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NotAchievable"

    def __bool__(self):
        return False


NotAchievable = _NotAchievableType()


def _check_fraction(name, value):
    if not (0.0 <= value <= 1.0) or math.isnan(value):
        raise ConfigError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class LossModel:
    """Bernoulli or two-state Gilbert-Elliott packet loss.

    For ``gilbert_elliott`` the loss rate is the stationary one implied by
    the transition and per-state loss probabilities; ``p_loss`` is only a
    record of the rate the model was built for.
    """

    kind: str = BERNOULLI
    p_loss: float = 0.0
    ge_p_good_to_bad: float = 0.0
    ge_p_bad_to_good: float = 1.0
    ge_loss_in_bad: float = 1.0
    ge_loss_in_good: float = 0.0

    def __post_init__(self):
        if self.kind not in (BERNOULLI, GILBERT_ELLIOTT):
            raise ConfigError(f"unknown loss model kind {self.kind!r}")
        _check_fraction("p_loss", self.p_loss)
        _check_fraction("ge_p_good_to_bad", self.ge_p_good_to_bad)
        _check_fraction("ge_p_bad_to_good", self.ge_p_bad_to_good)
        _check_fraction("ge_loss_in_bad", self.ge_loss_in_bad)
        _check_fraction("ge_loss_in_good", self.ge_loss_in_good)
        if self.kind == GILBERT_ELLIOTT and self.ge_p_good_to_bad + self.ge_p_bad_to_good == 0:
            raise ConfigError("Gilbert-Elliott chain needs a non-zero transition probability")

    @classmethod
    def bernoulli(cls, p):
        return cls(kind=BERNOULLI, p_loss=p)

    @classmethod
    def gilbert_elliott(cls, p, burst_length=DEFAULT_BURST_LENGTH,
                        loss_in_bad=DEFAULT_LOSS_IN_BAD, loss_in_good=0.0):
        """Bursty model with stationary loss ``p`` and mean bad-state sojourn ``burst_length``."""
        if burst_length < 1:
            raise ConfigError("burst_length must be >= 1 packet")
        base = cls(kind=GILBERT_ELLIOTT, ge_p_bad_to_good=1.0 / burst_length,
                   ge_loss_in_bad=loss_in_bad, ge_loss_in_good=loss_in_good)
        return base.with_rate(p)

    @property
    def bad_fraction(self):
        """Stationary probability of the bad state."""
        return self.ge_p_good_to_bad / (self.ge_p_good_to_bad + self.ge_p_bad_to_good)

    @property
    def rate(self):
        if self.kind == BERNOULLI:
            return self.p_loss
        pb = self.bad_fraction
        return pb * self.ge_loss_in_bad + (1.0 - pb) * self.ge_loss_in_good

    @property
    def mean_burst_length(self):
        if self.kind == BERNOULLI:
            return 1.0
        return math.inf if self.ge_p_bad_to_good == 0 else 1.0 / self.ge_p_bad_to_good

    def with_rate(self, p):
        """Same model family and burst structure, re-targeted to loss rate ``p``.

        Rates outside ``[loss_in_good, loss_in_bad]`` cannot be reached by
        moving the state occupancy alone; there the chain is pinned to one
        state and that state's loss probability is set to ``p``.
        """
        _check_fraction("p", p)
        if self.kind == BERNOULLI:
            return replace(self, p_loss=p)
        h_bad, h_good = self.ge_loss_in_bad, self.ge_loss_in_good
        if h_bad == h_good:
            return replace(self, p_loss=p, ge_loss_in_bad=p, ge_loss_in_good=p)
        b2g = 1.0 / DEFAULT_BURST_LENGTH if self.ge_p_bad_to_good == 0 else self.ge_p_bad_to_good
        if p >= h_bad:
            return replace(self, p_loss=p, ge_p_good_to_bad=1.0, ge_p_bad_to_good=0.0,
                           ge_loss_in_bad=p)
        if p <= h_good:
            return replace(self, p_loss=p, ge_p_good_to_bad=0.0, ge_p_bad_to_good=b2g,
                           ge_loss_in_good=p)
        pb = (p - h_good) / (h_bad - h_good)
        g2b = pb * b2g / (1.0 - pb)
        if g2b > 1.0:
            g2b, b2g = 1.0, (1.0 - pb) / pb
        return replace(self, p_loss=p, ge_p_good_to_bad=g2b, ge_p_bad_to_good=b2g)


def parity_count(n_data_packets, redundancy_ratio):
    """r = ceil(ratio * n), guarded against float noise such as 0.15 * 20."""
    if redundancy_ratio < 0:
        raise ConfigError("redundancy_ratio must be >= 0")
    return max(0, math.ceil(redundancy_ratio * n_data_packets - 1e-9))


def packetize(frame_bytes, packet_size, redundancy_ratio):
    """Split a frame into full-size data packets and add parity packets.

    Returns ``(n_data, n_parity, wire_bytes)``; parity packets are always
    full-size.
    """
    n_data = max(1, math.ceil(frame_bytes / packet_size - 1e-9))
    n_parity = parity_count(n_data, redundancy_ratio)
    return n_data, n_parity, frame_bytes + n_parity * packet_size


def binomial_tail(n, p, r):
    """P[Binomial(n, p) > r] by exact summation of the complementary head."""
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0 if n > r else 0.0
    if r >= n:
        return 0.0
    # Sum the shorter side to limit cancellation.
    if r < n / 2:
        head = math.fsum(math.comb(n, j) * p**j * (1 - p) ** (n - j) for j in range(r + 1))
        return max(0.0, 1.0 - head)
    return math.fsum(math.comb(n, j) * p**j * (1 - p) ** (n - j) for j in range(r + 1, n + 1))


@lru_cache(maxsize=4096)
def _markov_tail(n_total, r, g2b, b2g, h_bad, h_good):
    pb = g2b / (g2b + b2g)
    # dist[s, c]: probability of being in state s (0 good, 1 bad) before the
    # next packet, having lost c packets so far.
    dist = np.zeros((2, n_total + 2))
    dist[0, 0] = 1.0 - pb
    dist[1, 0] = pb
    h = (h_good, h_bad)
    stay = (1.0 - g2b, 1.0 - b2g)
    move = (g2b, b2g)
    for _ in range(n_total):
        emitted = np.zeros_like(dist)
        for s in (0, 1):
            emitted[s] += dist[s] * (1.0 - h[s])
            emitted[s, 1:] += dist[s, :-1] * h[s]
        dist = np.empty_like(emitted)
        dist[0] = emitted[0] * stay[0] + emitted[1] * move[1]
        dist[1] = emitted[1] * stay[1] + emitted[0] * move[0]
    return float(dist[:, r + 1:].sum())


def _exact(n_total, r, model):
    if model.kind == BERNOULLI:
        return binomial_tail(n_total, model.p_loss, r)
    return _markov_tail(n_total, r, model.ge_p_good_to_bad, model.ge_p_bad_to_good,
                        model.ge_loss_in_bad, model.ge_loss_in_good)


def _monte_carlo(n_total, r, model, trials, seed):
    rng = np.random.default_rng(seed)
    failures = 0
    remaining = trials
    while remaining > 0:
        b = min(_MC_BATCH, remaining)
        remaining -= b
        if model.kind == BERNOULLI:
            lost = (rng.random((b, n_total)) < model.p_loss).sum(axis=1)
        else:
            bad = rng.random(b) < model.bad_fraction
            lost = np.zeros(b, dtype=np.int64)
            for _ in range(n_total):
                h = np.where(bad, model.ge_loss_in_bad, model.ge_loss_in_good)
                lost += rng.random(b) < h
                u = rng.random(b)
                bad = np.where(bad, u >= model.ge_p_bad_to_good, u < model.ge_p_good_to_bad)
        failures += int((lost > r).sum())
    return failures / trials


def frame_loss_probability(n_data_packets, redundancy_ratio, model,
                           method="analytic", trials=1_000_000, seed=0):
    """Probability that a frame cannot be reconstructed.

    Methods:
        analytic: binomial tail, Bernoulli loss only.
        exact: forward recursion over the loss-model chain; any model.
        monte_carlo: fraction of ``trials`` seeded simulated frames that fail.
    """
    if n_data_packets < 1:
        raise ConfigError("a frame needs at least one data packet")
    r = parity_count(n_data_packets, redundancy_ratio)
    n_total = n_data_packets + r
    if model.rate == 0.0:
        return 0.0
    if method == "analytic":
        if model.kind != BERNOULLI:
            raise UnsupportedModel("the analytic binomial tail only covers Bernoulli loss")
        return binomial_tail(n_total, model.p_loss, r)
    if method == "exact":
        return _exact(n_total, r, model)
    if method == "monte_carlo":
        if trials < 1:
            raise ConfigError("trials must be >= 1")
        return _monte_carlo(n_total, r, model, trials, seed)
    raise ConfigError(f"unknown method {method!r}")


def min_redundancy_for_target(n_data_packets, model, target_frame_loss=DEFAULT_TARGET,
                              grid=DEFAULT_RATIO_GRID, method="exact",
                              trials=1_000_000, seed=0):
    """Smallest ratio in ``grid`` whose frame loss is at most the target."""
    grid = list(grid)
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ConfigError("grid must be sorted ascending")
    for ratio in grid:
        p = frame_loss_probability(n_data_packets, ratio, model, method=method,
                                   trials=trials, seed=seed)
        if p <= target_frame_loss:
            return ratio
    return NotAchievable


def sample_packet_losses(model, n_packets, rng, bad=None):
    """Draw a loss pattern for ``n_packets`` consecutive packets.

    ``bad`` carries the Gilbert-Elliott state between calls (``None`` draws
    it from the stationary distribution). Returns ``(lost, bad)``.
    """
    if model.kind == BERNOULLI:
        return rng.random(n_packets) < model.p_loss, None
    if bad is None:
        bad = bool(rng.random() < model.bad_fraction)
    states = np.empty(n_packets, dtype=bool)
    pos = 0
    while pos < n_packets:
        leave = model.ge_p_bad_to_good if bad else model.ge_p_good_to_bad
        if leave == 0:
            states[pos:] = bad
            break
        run = int(rng.geometric(leave))
        end = min(n_packets, pos + run)
        states[pos:end] = bad
        if pos + run <= n_packets:
            bad = not bad
        pos = end
    h = np.where(states, model.ge_loss_in_bad, model.ge_loss_in_good)
    return rng.random(n_packets) < h, bad
