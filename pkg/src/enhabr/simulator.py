"""Trace-driven streaming session engine and the scheme comparison matrix.

A session replays a trace chunk by chunk. The policy decides on predicted
throughput and loss; delivery uses the trace itself. Frames stream in
progressively, packets are dropped by the loss model, and the player then
shows, enhances, recovers or repeats every frame against its play-out
deadline.
"""

import csv
import io
import json
import math
import warnings
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from enhabr import abr
from enhabr import quality as q
from enhabr.errors import ConfigError, TraceExhausted, TraceExhaustedWarning, ValidationError
from enhabr.fec.loss import LossModel, packetize, sample_packet_losses
from enhabr.traces import EWMA, PredictorState, predict_next

RECOVERED = "recovered"
REUSED = "reused"
SR_FRAME = "sr"
PLAIN_FRAME = "plain"

CONSERVATION_TOL = 1e-9


@dataclass(frozen=True)
class SimConfig:
    ladder: q.LadderSpec = field(default_factory=q.LadderSpec)
    quality: q.QualityModel = field(default_factory=q.QualityModel.default)
    cost: q.EnhancementCost = field(default_factory=q.EnhancementCost)
    qoe: abr.QoEConfig = field(default_factory=abr.QoEConfig)
    # Two chunks: with unit smoothness weight a one-chunk horizon can never
    # strictly prefer switching up.
    policy: abr.AbrPolicy = field(default_factory=lambda: abr.AbrPolicy(lookahead_chunks=2))
    fec_plan: object = None
    loss_model: LossModel = field(default_factory=lambda: LossModel.gilbert_elliott(0.0))
    seed: int = 0
    enable_recovery: bool = True
    enable_sr: bool = True
    enable_fec: bool = False
    n_chunks: int = 60
    buffer_cap: float = 30.0
    packet_size: int = 1200
    predictor: str = EWMA
    robust_window: int = 5   # 0 disables the prediction-error discount
    name: str = ""

    def __post_init__(self):
        if self.n_chunks < 1:
            raise ValidationError("n_chunks must be >= 1")
        if not self.buffer_cap >= self.ladder.chunk_duration:
            raise ValidationError("buffer_cap must hold at least one chunk")
        if self.packet_size < 1:
            raise ValidationError("packet_size must be >= 1")
        if self.enable_fec and self.fec_plan is None:
            raise ConfigError("enable_fec needs a fec_plan")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")

    @property
    def models(self):
        return abr.Models(self.ladder, self.quality, self.cost, self.qoe, self.loss_model,
                          self.packet_size, self.enable_recovery, self.enable_sr,
                          self.enable_fec, self.fec_plan)


@dataclass
class SessionReport:
    trace_id: str
    network_kind: str
    scheme: str
    per_chunk: list
    per_frame: list
    session_qoe: float
    recovered_fraction: float
    stats: dict
    startup_delay: float
    decisions: list = field(default_factory=list)

    def to_dict(self):
        return {
            "trace_id": self.trace_id,
            "network_kind": self.network_kind,
            "scheme": self.scheme,
            "session_qoe": self.session_qoe,
            "recovered_fraction": self.recovered_fraction,
            "startup_delay": self.startup_delay,
            "stats": self.stats,
            "per_chunk": [asdict(o) for o in self.per_chunk],
            "per_frame": self.per_frame,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"


class _Link:
    """Cumulative capacity of a trace with piecewise-constant throughput."""

    def __init__(self, trace):
        ts = trace.timestamps - trace.timestamps[0]
        self.t = ts
        self.rate = trace.throughput  # sample i covers (t[i-1], t[i]]
        dt = np.diff(ts)
        self.kbits = np.concatenate([[0.0], np.cumsum(self.rate[1:] * dt)])
        self.loss_area = np.concatenate([[0.0], np.cumsum(trace.loss[1:] * dt)])
        self.loss = trace.loss

    def capacity_at(self, t):
        return float(np.interp(t, self.t, self.kbits))

    def finish_times(self, t0, kbits):
        """Earliest times by which ``kbits`` (ascending) more kilobits have arrived."""
        target = self.capacity_at(t0) + np.asarray(kbits, dtype=float)
        if target[-1] > self.kbits[-1]:
            return None
        j = np.searchsorted(self.kbits, target, side="left")
        j = np.maximum(j, 1)
        out = self.t[j - 1] + (target - self.kbits[j - 1]) / self.rate[j]
        return np.maximum(out, t0)

    def mean_loss(self, a, b):
        if b <= a:
            i = min(int(np.searchsorted(self.t, a, side="left")), len(self.t) - 1)
            return float(self.loss[max(i, 1)])
        area = np.interp(b, self.t, self.loss_area) - np.interp(a, self.t, self.loss_area)
        return float(min(max(area / (b - a), 0.0), 1.0))


def _check(cond, message):
    # Not a bare assert: these must hold with -O too.
    if not cond:
        raise AssertionError(message)


def run_session(trace, config):
    """Simulate one session of ``config.n_chunks`` chunks over ``trace``."""
    ladder, qm, cost, models = config.ladder, config.quality, config.cost, config.models
    policy = config.policy
    n, delta = ladder.gop_frames, ladder.delta
    link = _Link(trace)
    rng = np.random.default_rng(config.seed)

    tput_pred = PredictorState(kind=config.predictor)
    loss_pred = PredictorState(kind=config.predictor)
    tput_pred, _ = predict_next(tput_pred, trace.samples[0].throughput)
    loss_pred, _ = predict_next(loss_pred, trace.samples[0].loss_rate)

    t = 0.0                 # download clock
    clock = None            # deadline of the last frame handed to the player
    startup = 0.0
    ge_bad = None
    prev_utility = None
    rc_run = reuse_run = 0
    outcomes, frames, decisions, errors = [], [], [], []
    total_stall = total_wait = 0.0

    for c in range(config.n_chunks):
        tput_hat = max(tput_pred.prediction, 1e-6)
        if errors:
            # Discount by the worst recent relative miss, as robust MPC does.
            tput_hat /= 1.0 + max(errors[-config.robust_window:])
        loss_hat = min(max(loss_pred.prediction, 0.0), 1.0)
        if c == 0:
            # Startup time is not rebuffering, so the first rung is simply the
            # highest one the first throughput sample can carry.
            bitrate = abr.rate_based_bitrate(tput_pred.prediction, ladder)
            scores, believed = [], float(bitrate)
        else:
            buffer = clock - t
            if buffer > config.buffer_cap:
                t = clock - config.buffer_cap
                buffer = config.buffer_cap
            state = abr.ClientState(buffer, prev_utility, config.buffer_cap)
            bitrate, scores, believed = abr.decide(
                state, abr.Predictions(tput_hat, loss_hat), models, policy)
        ratio = models.fec_ratio_for(loss_hat)
        decisions.append(abr.decision_record(c, scores, bitrate, ratio))

        res = ladder.resolution_of(bitrate)
        n_data, n_par, wire = packetize(ladder.frame_bytes(bitrate), config.packet_size, ratio)
        arrivals = link.finish_times(t, np.arange(1, n + 1) * wire * 8.0 / 1000.0)
        if arrivals is None:
            if c == 0:
                raise TraceExhausted(f"trace {trace.id} cannot deliver a single chunk")
            warnings.warn(f"trace {trace.id} exhausted after {c} of {config.n_chunks} chunks",
                          TraceExhaustedWarning, stacklevel=2)
            break
        t_end = float(arrivals[-1])

        rate = link.mean_loss(t, t_end)
        per_frame_packets = n_data + n_par
        lost, ge_bad = sample_packet_losses(config.loss_model.with_rate(rate),
                                            n * per_frame_packets, rng, ge_bad)
        frame_lost = lost.reshape(n, per_frame_packets).sum(axis=1) > n_par
        ready = arrivals + cost.decode_for(res)

        if clock is None:
            startup = float(ready[-1])
            clock = startup

        base = q.psnr_at(qm, bitrate)
        sr_psnr = q.psnr_at(qm, bitrate, q.SR, res)
        chain_stall = max(0.0, cost.t_rc - delta)
        abandoned_at = None
        chunk_stall = chunk_wait = 0.0
        counts = defaultdict(int)
        psnrs = np.empty(n)
        for i in range(n):
            due = clock + delta
            late_by = float(ready[i]) - due
            stall = wait = 0.0
            if config.enable_recovery and (abandoned_at is not None or late_by > 0):
                # Late data: stop waiting for the rest of the chunk and
                # recover from here on.
                if abandoned_at is None:
                    abandoned_at = due
                    stall = min(late_by, cost.t_rc)
                else:
                    stall = chain_stall
                rc_run += 1
                reuse_run = 0
                kind, psnr = RECOVERED, q.concealed_psnr(qm, rc_run, q.RECOVERY, bitrate)
            elif config.enable_recovery and frame_lost[i]:
                rc_run += 1
                reuse_run = 0
                kind, psnr = RECOVERED, q.concealed_psnr(qm, rc_run, q.RECOVERY, bitrate)
            else:
                rc_run = 0
                wait = max(0.0, late_by)
                if frame_lost[i]:
                    reuse_run += 1
                    kind, psnr = REUSED, q.concealed_psnr(qm, reuse_run, q.REUSE, bitrate)
                else:
                    reuse_run = 0
                    if config.enable_sr and due + wait > ready[i] + cost.t_sr:
                        kind, psnr = SR_FRAME, sr_psnr
                    else:
                        kind, psnr = PLAIN_FRAME, base
            clock = due + stall + wait
            chunk_stall += stall
            chunk_wait += wait
            counts[kind] += 1
            psnrs[i] = psnr
            frames.append({"chunk": c, "index": i + 1, "class": kind,
                           "stall": stall, "wait": wait, "psnr": psnr})
        if abandoned_at is not None:
            t_end = max(abandoned_at, t)

        _check(sum(counts.values()) == n, "frame classes do not cover the chunk")
        total_stall += chunk_stall
        total_wait += chunk_wait
        mean_psnr = float(psnrs.mean())
        outcome = abr.ChunkOutcome(
            selected_bitrate=bitrate,
            effective_bitrate=q.effective_bitrate(qm, mean_psnr),
            rebuffer=chunk_stall + chunk_wait,
            recovered_frames=counts[RECOVERED],
            sr_frames=counts[SR_FRAME],
            reused_frames=counts[REUSED],
            fec_ratio=ratio,
            mean_psnr=mean_psnr,
        )
        outcomes.append(outcome)
        # The policy's smoothness term compares against its own belief about
        # the previous chunk, not against gains it does not model.
        prev_utility = believed

        delivered = link.capacity_at(t_end) - link.capacity_at(t)
        measured = delivered / max(t_end - t, 1e-9)
        if config.robust_window and measured > 0:
            errors.append(abs(tput_pred.prediction - measured) / measured)
        tput_pred, _ = predict_next(tput_pred, measured)
        loss_pred, _ = predict_next(loss_pred, rate)
        t = t_end

    n_done = len(outcomes)
    total_rebuffer = math.fsum(o.rebuffer for o in outcomes)
    _check(abs(total_rebuffer - (total_stall + total_wait)) <= CONSERVATION_TOL,
           "rebuffer does not equal per-frame stalls plus waits")
    played = clock - startup
    _check(abs(played - (n_done * ladder.chunk_duration + total_rebuffer))
           <= CONSERVATION_TOL,
           f"playout clock {played!r} != durations + rebuffer")

    qoe = abr.session_qoe(outcomes, config.qoe)
    n_frames = n_done * n
    recovered = sum(o.recovered_frames for o in outcomes)
    stats = {
        "chunks": n_done,
        "mean_bitrate": math.fsum(o.selected_bitrate for o in outcomes) / n_done,
        "mean_effective_bitrate": math.fsum(o.effective_bitrate for o in outcomes) / n_done,
        "total_rebuffer": total_rebuffer,
        "recovery_stall": total_stall,
        "wait_stall": total_wait,
        "mean_psnr": math.fsum(f["psnr"] for f in frames) / n_frames,
        "sr_frames": sum(o.sr_frames for o in outcomes),
        "reused_frames": sum(o.reused_frames for o in outcomes),
        "recovered_frames": recovered,
        "mean_fec_ratio": math.fsum(o.fec_ratio for o in outcomes) / n_done,
    }
    return SessionReport(trace.id, trace.network_kind, config.name or policy.kind, outcomes,
                         frames, qoe, recovered / n_frames, stats, startup, decisions)


# name -> (policy kind, recovery, sr, fec)
SCHEMES = {
    "plain": (abr.PLAIN, False, False, False),
    "rc_alone": (abr.PLAIN, True, False, False),
    "rc_aware": (abr.RECOVERY_AWARE_ONLY, True, False, False),
    "sr_alone": (abr.PLAIN, False, True, False),
    "sr_aware": (abr.SR_AWARE_ONLY, False, True, False),
    "enh_alone": (abr.PLAIN, True, True, False),
    "enh_aware": (abr.ENHANCEMENT_AWARE, True, True, False),
    "plain_fec": (abr.PLAIN, False, False, True),
    "rc_aware_fec": (abr.RECOVERY_AWARE_ONLY, True, False, True),
    "enh_aware_fec": (abr.ENHANCEMENT_AWARE, True, True, True),
    "buffer_based": (abr.BUFFER_BASED, False, False, False),
    "rate_based": (abr.RATE_BASED, False, False, False),
}


def scheme_config(name, base=None, fec_plan=None):
    """``base`` with the policy and mechanism switches of a named scheme."""
    if name not in SCHEMES:
        raise ConfigError(f"unknown scheme {name!r}; known: {sorted(SCHEMES)}")
    base = base or SimConfig()
    kind, rc, sr, fec = SCHEMES[name]
    plan = fec_plan if fec_plan is not None else base.fec_plan
    if fec and plan is None:
        raise ConfigError(f"scheme {name!r} needs a FEC plan")
    return replace(base, policy=replace(base.policy, kind=kind), enable_recovery=rc,
                   enable_sr=sr, enable_fec=fec, fec_plan=plan if fec else None, name=name)


MATRIX_FIELDS = ("network", "scheme", "trace_id", "qoe", "mean_bitrate", "rebuffer_s",
                 "recovered_frac")


@dataclass
class MatrixResult:
    rows: list          # one dict per (trace, scheme), in input order
    reports: list

    def aggregate(self, baseline=None):
        """Mean per (network, scheme); improvement is relative to ``baseline``."""
        groups = defaultdict(list)
        for r in self.rows:
            groups[(r["network"], r["scheme"])].append(r)
        schemes = list(dict.fromkeys(r["scheme"] for r in self.rows))
        baseline = baseline or schemes[0]
        out = []
        for (net, scheme), rs in sorted(groups.items()):
            row = {"network": net, "scheme": scheme, "n_traces": len(rs)}
            for key in ("qoe", "mean_bitrate", "rebuffer_s", "recovered_frac"):
                row[key] = math.fsum(r[key] for r in rs) / len(rs)
            out.append(row)
        base = {r["network"]: r["qoe"] for r in out if r["scheme"] == baseline}
        for row in out:
            b = base.get(row["network"])
            row[f"improvement_vs_{baseline}"] = (
                (row["qoe"] - b) / abs(b) if b not in (None, 0.0) else float("nan"))
        return out

    def scheme_means(self):
        groups = defaultdict(list)
        for r in self.rows:
            groups[r["scheme"]].append(r["qoe"])
        return {k: math.fsum(v) / len(v) for k, v in groups.items()}

    def to_csv(self):
        return _csv(MATRIX_FIELDS, self.rows)

    def aggregate_csv(self, baseline=None):
        rows = self.aggregate(baseline)
        return _csv(list(rows[0]), rows)


def _csv(fields, rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def _run_cell(args):
    trace, config = args
    return run_session(trace, config)


def trace_seeds(master, n):
    """Per-trace seeds; every scheme reuses them so comparisons are paired."""
    return [int(s.generate_state(1, dtype=np.uint64)[0])
            for s in np.random.SeedSequence(master).spawn(n)]


def run_matrix(traces, schemes, seed=0, jobs=1):
    """Run every scheme on every trace.

    ``schemes`` is a list of ``(name, SimConfig)`` pairs. Results come back
    in (trace, scheme) input order whatever ``jobs`` is.
    """
    traces = list(traces)
    schemes = list(schemes)
    if not traces:
        raise ValidationError("run_matrix needs at least one trace")
    if not schemes:
        raise ValidationError("run_matrix needs at least one scheme")
    seeds = trace_seeds(seed, len(traces))
    cells = [(tr, replace(cfg, seed=s, name=name))
             for tr, s in zip(traces, seeds) for name, cfg in schemes]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_cell, cells))
    else:
        reports = [_run_cell(c) for c in cells]
    rows = [{
        "network": rep.network_kind,
        "scheme": rep.scheme,
        "trace_id": rep.trace_id,
        "qoe": rep.session_qoe,
        "mean_bitrate": rep.stats["mean_bitrate"],
        "rebuffer_s": rep.stats["total_rebuffer"],
        "recovered_frac": rep.recovered_fraction,
    } for rep in reports]
    return MatrixResult(rows, reports)
