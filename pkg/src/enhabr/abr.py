"""QoE accounting and per-chunk bitrate selection.

The model-based policies score every ladder rung with a predicted chunk
outcome and pick the best one. What a policy "knows" about client-side
recovery and super-resolution only changes how it predicts an outcome;
the player applies whatever mechanisms are switched on regardless.
"""

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from enhabr import quality as q
from enhabr.errors import ConfigError, EmptySession, ValidationError
from enhabr.fec.loss import LossModel, frame_loss_probability, packetize
from enhabr.fecplan import lookup
from enhabr.timeline import ChunkTiming, classify_frames, recovery_tail, wait_stall

ENHANCEMENT_AWARE = "enhancement_aware"
RECOVERY_AWARE_ONLY = "recovery_aware_only"
SR_AWARE_ONLY = "sr_aware_only"
PLAIN = "plain_qoe_argmax"
BUFFER_BASED = "buffer_based"
RATE_BASED = "rate_based"
POLICY_KINDS = (ENHANCEMENT_AWARE, RECOVERY_AWARE_ONLY, SR_AWARE_ONLY, PLAIN,
                BUFFER_BASED, RATE_BASED)
MODEL_BASED = (ENHANCEMENT_AWARE, RECOVERY_AWARE_ONLY, SR_AWARE_ONLY, PLAIN)


@dataclass(frozen=True)
class QoEConfig:
    mu: float = 4400.0
    smoothness_weight: float = 1.0
    use_effective_bitrate: bool = True

    def __post_init__(self):
        if not self.mu > 0:
            raise ValidationError("mu must be > 0")
        if self.smoothness_weight < 0:
            raise ValidationError("smoothness_weight must be >= 0")


@dataclass(frozen=True)
class ChunkOutcome:
    selected_bitrate: float
    effective_bitrate: float
    rebuffer: float
    recovered_frames: float = 0
    sr_frames: float = 0
    reused_frames: float = 0
    fec_ratio: float = 0.0
    mean_psnr: float = float("nan")

    def __post_init__(self):
        if self.rebuffer < 0:
            raise ValidationError("rebuffer must be >= 0")

    def utility(self, config):
        return self.effective_bitrate if config.use_effective_bitrate else self.selected_bitrate


@dataclass(frozen=True)
class AbrPolicy:
    kind: str = ENHANCEMENT_AWARE
    lookahead_chunks: int = 1
    reservoir: float = 5.0   # buffer-based only
    cushion: float = 10.0    # buffer-based only

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        if self.lookahead_chunks < 1:
            raise ValidationError("lookahead_chunks must be >= 1")
        if self.reservoir < 0 or self.cushion <= 0:
            raise ValidationError("buffer-based thresholds must be positive")

    @property
    def aware_recovery(self):
        return self.kind in (ENHANCEMENT_AWARE, RECOVERY_AWARE_ONLY)

    @property
    def aware_sr(self):
        return self.kind in (ENHANCEMENT_AWARE, SR_AWARE_ONLY)


@dataclass(frozen=True)
class ClientState:
    buffer_level: float           # seconds of video ahead of the playhead
    prev_utility: float = None    # utility of the previous chunk, None at start
    buffer_cap: float = math.inf


@dataclass(frozen=True)
class Predictions:
    tput: float   # kbps
    loss: float   # packet loss fraction

    def __post_init__(self):
        if not self.tput > 0:
            raise ValidationError("predicted throughput must be positive")
        if not 0.0 <= self.loss <= 1.0:
            raise ValidationError("predicted loss must lie in [0, 1]")


@dataclass(frozen=True)
class Models:
    ladder: q.LadderSpec = field(default_factory=q.LadderSpec)
    quality: q.QualityModel = field(default_factory=q.QualityModel.default)
    cost: q.EnhancementCost = field(default_factory=q.EnhancementCost)
    qoe: QoEConfig = field(default_factory=QoEConfig)
    loss_model: LossModel = field(default_factory=lambda: LossModel.gilbert_elliott(0.0))
    packet_size: int = 1200
    enable_recovery: bool = True
    enable_sr: bool = True
    enable_fec: bool = False
    fec_plan: object = None

    def fec_ratio_for(self, loss):
        if not self.enable_fec or self.fec_plan is None:
            return 0.0
        return lookup(self.fec_plan, loss)


@dataclass(frozen=True)
class Estimate:
    outcome: ChunkOutcome
    qoe: float            # utility - rebuffer penalty - smoothness penalty
    download_time: float


def session_qoe(outcomes, config=QoEConfig()):
    """Mean per-chunk QoE in kbps: utility minus stall and switching penalties."""
    outcomes = list(outcomes)
    if not outcomes:
        raise EmptySession("session has no chunks")
    u = np.array([o.utility(config) for o in outcomes], dtype=float)
    t = np.array([o.rebuffer for o in outcomes], dtype=float)
    switching = float(np.abs(np.diff(u)).sum()) if len(u) > 1 else 0.0
    total = math.fsum(u) - config.mu * math.fsum(t) - config.smoothness_weight * switching
    return total / len(outcomes)


@lru_cache(maxsize=8192)
def _frame_loss(n_data, ratio, model):
    return frame_loss_probability(n_data, ratio, model, method="exact")


def estimate_chunk_qoe(bitrate, state, predictions, models, policy):
    """Predicted outcome of fetching the next chunk at ``bitrate``."""
    ladder, qm, cost = models.ladder, models.quality, models.cost
    res = ladder.resolution_of(bitrate)
    n = ladder.gop_frames
    ratio = models.fec_ratio_for(predictions.loss)
    n_data, _, wire = packetize(ladder.frame_bytes(bitrate), models.packet_size, ratio)
    p_frame = _frame_loss(n_data, ratio, models.loss_model.with_rate(predictions.loss))

    timing = ChunkTiming(t_prev=state.buffer_level, delta=ladder.delta,
                         frame_sizes=np.full(n, wire), tput=predictions.tput,
                         t_start=0.0, decode_time=cost.decode_for(res))
    cls = classify_frames(timing, cost, p_frame)
    aware_rc = policy.aware_recovery and models.enable_recovery
    aware_sr = policy.aware_sr and models.enable_sr

    base = q.psnr_at(qm, bitrate)
    codes = cls.codes
    if aware_rc:
        # Late data is abandoned: the tail from the first late frame is
        # recovered and the download ends at that frame's deadline.
        first, stalls = recovery_tail(timing, cost)
        head = n if first is None else first - 1
        tail = n - head
        mode = q.RECOVERY
        rebuffer = float(stalls.sum())
        download = float(timing.arrival_times[-1] if first is None
                         else timing.play_times[first - 1])
        tail_psnr = q.mean_run_psnr(qm, tail, mode, bitrate) if tail else base
    else:
        # The player is assumed to wait for late frames and repeat the last
        # good frame in place of lost ones.
        head, tail = n, 0
        mode = q.REUSE
        rebuffer = wait_stall(timing)
        download = float(timing.arrival_times[-1])
        tail_psnr = base
    lost = p_frame * head
    lost_psnr = q.expected_concealed_psnr(qm, min(p_frame, 1 - 1e-12), mode, bitrate, n)
    sr_frames = (1.0 - p_frame) * int(np.count_nonzero(codes[:head] == 1)) if aware_sr else 0.0
    sr_gain = q.psnr_at(qm, bitrate, q.SR, res) - base
    # SR enters as a non-negative add-on so awareness can never lower quality.
    mean_psnr = (tail * tail_psnr + lost * lost_psnr + (head - lost) * base
                 + sr_frames * sr_gain) / n
    effective = q.effective_bitrate(qm, mean_psnr)
    if aware_rc:
        recovered, reused = tail + lost, 0.0
    else:
        recovered, reused = 0.0, lost

    outcome = ChunkOutcome(bitrate, effective, rebuffer, recovered, sr_frames, reused,
                           ratio, mean_psnr)
    u = outcome.utility(models.qoe)
    switch = 0.0 if state.prev_utility is None else abs(u - state.prev_utility)
    score = u - models.qoe.mu * rebuffer - models.qoe.smoothness_weight * switch
    return Estimate(outcome, score, download)


def _next_state(state, est, ladder, config):
    buffer = state.buffer_level + ladder.chunk_duration + est.outcome.rebuffer - est.download_time
    buffer = min(max(buffer, 0.0), state.buffer_cap)
    return replace(state, buffer_level=buffer, prev_utility=est.outcome.utility(config))


def _plan_value(state, predictions, models, policy, depth):
    """Best summed QoE over ``depth`` more chunks from ``state``."""
    best = -math.inf
    for b in models.ladder.bitrates:
        est = estimate_chunk_qoe(b, state, predictions, models, policy)
        value = est.qoe
        if depth > 1:
            nxt = _next_state(state, est, models.ladder, models.qoe)
            value += _plan_value(nxt, predictions, models, policy, depth - 1)
        best = max(best, value)
    return best


@dataclass(frozen=True)
class Candidate:
    bitrate: float
    score: float        # includes lookahead
    estimate: Estimate  # first-chunk prediction


def evaluate_candidates(state, predictions, models, policy):
    """Score every rung, in ladder order."""
    out = []
    for b in models.ladder.bitrates:
        est = estimate_chunk_qoe(b, state, predictions, models, policy)
        value = est.qoe
        if policy.lookahead_chunks > 1:
            nxt = _next_state(state, est, models.ladder, models.qoe)
            value += _plan_value(nxt, predictions, models, policy, policy.lookahead_chunks - 1)
        out.append(Candidate(b, value, est))
    return out


def _argmax_low(candidates):
    best = candidates[0]
    for c in candidates[1:]:
        if c.score > best.score:  # strict: ties keep the lower rung
            best = c
    return best


def buffer_based_bitrate(buffer_level, ladder, reservoir=5.0, cushion=10.0):
    rates = ladder.bitrates
    if buffer_level <= reservoir:
        return rates[0]
    if buffer_level >= reservoir + cushion:
        return rates[-1]
    target = rates[0] + (rates[-1] - rates[0]) * (buffer_level - reservoir) / cushion
    return max(r for r in rates if r <= target)


def rate_based_bitrate(tput, ladder):
    fitting = [r for r in ladder.bitrates if r <= tput]
    return fitting[-1] if fitting else ladder.bitrates[0]


def decide(state, predictions, models, policy):
    """``(bitrate, candidates, predicted_utility)``.

    Heuristic baselines return no candidates; their predicted utility is the
    bitrate itself.
    """
    if policy.kind == BUFFER_BASED:
        b = buffer_based_bitrate(state.buffer_level, models.ladder, policy.reservoir,
                                 policy.cushion)
        return b, [], float(b)
    if policy.kind == RATE_BASED:
        b = rate_based_bitrate(predictions.tput, models.ladder)
        return b, [], float(b)
    candidates = evaluate_candidates(state, predictions, models, policy)
    best = _argmax_low(candidates)
    return best.bitrate, candidates, best.estimate.outcome.utility(models.qoe)


def select_bitrate(state, predictions, models, policy):
    return decide(state, predictions, models, policy)[0]


def decision_record(chunk, candidates, chosen, fec_ratio=0.0):
    """One JSON-lines log entry."""
    return json.dumps({
        "chunk": chunk,
        "candidates": [{"bitrate": c.bitrate, "qoe": round(c.score, 6)} for c in candidates],
        "chosen": chosen,
        "fec_ratio": fec_ratio,
    }, sort_keys=True)
