"""Seeded synthetic traces mimicking the measured 3G/4G/5G/WiFi statistics.

Means and average loss follow the measured per-network averages; the
variability parameters are invented so that 5G fluctuates the most.
"""

from dataclasses import dataclass

import numpy as np

from enhabr.quality import LadderSpec
from enhabr.traces import NetworkTrace, TraceSample, downscale_trace


@dataclass(frozen=True)
class NetworkProfile:
    kind: str
    mean_kbps: float
    mean_loss: float
    duration: float
    cv: float            # std/mean of log-normal throughput
    correlation: float   # AR(1) coefficient per 1 s sample
    outage_rate: float   # per-second chance of entering a deep fade
    outage_len: float    # mean fade length in seconds


PROFILES = {
    "threeG": NetworkProfile("threeG", 7_500, 0.009, 322, 0.30, 0.85, 0.005, 2.0),
    "fourG": NetworkProfile("fourG", 21_600, 0.013, 317, 0.40, 0.80, 0.010, 2.0),
    "fiveG": NetworkProfile("fiveG", 36_400, 0.016, 302, 0.65, 0.70, 0.020, 3.0),
    "wifi": NetworkProfile("wifi", 82_300, 0.005, 309, 0.35, 0.80, 0.008, 2.0),
}

SUITE_KINDS = ("threeG", "fourG", "fiveG", "wifi")


def synthetic_trace(kind, seed, duration=None, interval=1.0, trace_id=None):
    """Raw (not downscaled) trace whose sample means match the profile exactly."""
    prof = PROFILES[kind]
    rng = np.random.default_rng(seed)
    duration = prof.duration if duration is None else duration
    n = int(round(duration / interval)) + 1

    sigma = np.sqrt(np.log1p(prof.cv**2))
    x = np.empty(n)
    x[0] = rng.normal(0.0, sigma)
    innov = rng.normal(0.0, sigma * np.sqrt(1 - prof.correlation**2), n)
    for i in range(1, n):
        x[i] = prof.correlation * x[i - 1] + innov[i]
    tput = np.exp(x)

    fade = np.zeros(n, dtype=bool)
    i = 0
    while i < n:
        if rng.random() < prof.outage_rate:
            length = max(1, int(rng.geometric(1.0 / prof.outage_len)))
            fade[i:i + length] = True
            i += length
        i += 1
    tput[fade] *= 0.1
    tput *= prof.mean_kbps / tput.mean()

    loss = rng.gamma(4.0, 1.0, n)
    loss[fade] *= 3.0
    loss *= prof.mean_loss / loss.mean()
    loss = np.clip(loss, 0.0, 1.0)

    samples = [TraceSample(i * interval, float(t), float(p))
               for i, (t, p) in enumerate(zip(tput, loss))]
    return NetworkTrace(trace_id or f"{kind}-{seed}", kind, samples)


def synthetic_suite(per_kind=3, seed=2024, ladder=None, downscale=True, kinds=SUITE_KINDS):
    """``per_kind`` traces of every network kind, downscaled onto the ladder by default."""
    ladder = ladder or LadderSpec()
    seeds = np.random.SeedSequence(seed).spawn(len(kinds) * per_kind)
    traces = []
    for k, kind in enumerate(kinds):
        for j in range(per_kind):
            s = int(seeds[k * per_kind + j].generate_state(1)[0])
            tr = synthetic_trace(kind, s, trace_id=f"{kind}-{j:02d}")
            traces.append(downscale_trace(tr, ladder) if downscale else tr)
    return traces


def constant_trace(throughput_kbps, loss_rate=0.0, duration=320.0, interval=1.0,
                   trace_id="constant", kind="synthetic"):
    n = int(round(duration / interval)) + 1
    samples = [TraceSample(i * interval, float(throughput_kbps), float(loss_rate)) for i in range(n)]
    return NetworkTrace(trace_id, kind, samples)
