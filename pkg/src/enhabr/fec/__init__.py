"""Erasure coding and frame-loss modelling under packet loss."""

from enhabr.fec.codec import FecConfig, Shard, decode, encode
from enhabr.fec.loss import (
    BERNOULLI,
    DEFAULT_BURST_LENGTH,
    DEFAULT_FRAME_PACKETS,
    DEFAULT_LOSS_IN_BAD,
    DEFAULT_RATIO_GRID,
    DEFAULT_TARGET,
    GILBERT_ELLIOTT,
    LossModel,
    NotAchievable,
    binomial_tail,
    frame_loss_probability,
    min_redundancy_for_target,
    packetize,
    parity_count,
    sample_packet_losses,
)

__all__ = [
    "BERNOULLI",
    "DEFAULT_BURST_LENGTH",
    "DEFAULT_FRAME_PACKETS",
    "DEFAULT_LOSS_IN_BAD",
    "DEFAULT_RATIO_GRID",
    "DEFAULT_TARGET",
    "GILBERT_ELLIOTT",
    "FecConfig",
    "LossModel",
    "NotAchievable",
    "Shard",
    "binomial_tail",
    "decode",
    "encode",
    "frame_loss_probability",
    "min_redundancy_for_target",
    "packetize",
    "parity_count",
    "sample_packet_losses",
]
