"""Systematic maximum-distance-separable erasure code over byte shards.

The generator is a Vandermonde matrix on distinct field points, normalised
so its top k rows are the identity. Any k rows of a Vandermonde matrix on
distinct points are invertible, and right-multiplying by an invertible
matrix preserves that, so any k of the k + r shards reconstruct the data.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from enhabr.errors import ConfigError, DecodeError, ValidationError
from enhabr.fec import gf256

MAX_SHARDS = 255


@dataclass(frozen=True)
class FecConfig:
    data_shards: int
    parity_shards: int
    shard_size: int

    def __post_init__(self):
        if self.data_shards < 1:
            raise ConfigError("data_shards must be >= 1")
        if self.parity_shards < 0:
            raise ConfigError("parity_shards must be >= 0")
        if self.shard_size < 1:
            raise ConfigError("shard_size must be >= 1")
        if self.data_shards + self.parity_shards > MAX_SHARDS:
            raise ConfigError(
                f"k + r = {self.data_shards + self.parity_shards} exceeds {MAX_SHARDS}"
            )

    @property
    def total_shards(self):
        return self.data_shards + self.parity_shards

    @property
    def redundancy_ratio(self):
        return self.parity_shards / self.data_shards


class Shard(NamedTuple):
    index: int
    data: bytes


@lru_cache(maxsize=64)
def generator_matrix(k, r):
    n = k + r
    vander = np.array(
        [[gf256.power(x, j) for j in range(k)] for x in range(n)], dtype=np.uint8
    )
    top_inv = gf256.mat_inv(vander[:k])
    gen = np.zeros((n, k), dtype=np.uint8)
    for i in range(n):
        for j in range(k):
            acc = 0
            for t in range(k):
                acc ^= gf256.mul(int(vander[i, t]), int(top_inv[t, j]))
            gen[i, j] = acc
    gen.setflags(write=False)
    return gen


def _split(config, data):
    capacity = config.data_shards * config.shard_size
    if len(data) > capacity:
        raise ValidationError(
            f"payload of {len(data)} bytes exceeds k * shard_size = {capacity}"
        )
    padded = bytes(data) + bytes(capacity - len(data))
    return np.frombuffer(padded, dtype=np.uint8).reshape(
        config.data_shards, config.shard_size
    )


def encode(config, data):
    """Split ``data`` into k zero-padded data shards and append r parity shards."""
    rows = _split(config, data)
    shards = [Shard(i, rows[i].tobytes()) for i in range(config.data_shards)]
    if config.parity_shards:
        gen = generator_matrix(config.data_shards, config.parity_shards)
        parity = gf256.mat_vec_rows(gen[config.data_shards:], rows)
        shards.extend(
            Shard(config.data_shards + i, parity[i].tobytes())
            for i in range(config.parity_shards)
        )
    return shards


def _normalise(config, shards):
    if len(shards) != config.total_shards:
        raise ValidationError(
            f"expected {config.total_shards} shard slots, got {len(shards)}"
        )
    present = {}
    for pos, shard in enumerate(shards):
        if shard is None:
            continue
        if not isinstance(shard, Shard):
            shard = Shard(pos, bytes(shard))
        if not 0 <= shard.index < config.total_shards:
            raise ValidationError(f"shard index {shard.index} out of range")
        if shard.index in present:
            raise ValidationError(f"duplicate shard index {shard.index}")
        if len(shard.data) != config.shard_size:
            raise ValidationError(
                f"shard {shard.index} has {len(shard.data)} bytes, "
                f"expected {config.shard_size}"
            )
        present[shard.index] = shard.data
    return present


def decode(config, shards):
    """Reconstruct the padded payload from any k surviving shards.

    ``shards`` has one slot per shard; missing shards are ``None``. Slots may
    hold :class:`Shard` tuples (index carried explicitly) or raw bytes (index
    taken from the slot position).
    """
    k = config.data_shards
    present = _normalise(config, shards)
    if len(present) < k:
        raise DecodeError(f"only {len(present)} of the {k} required shards present")

    if all(i in present for i in range(k)):
        return b"".join(present[i] for i in range(k))

    use = sorted(present)[:k]
    gen = generator_matrix(k, config.parity_shards)
    sub_inv = gf256.mat_inv(gen[use])
    rows = np.stack([np.frombuffer(present[i], dtype=np.uint8) for i in use])
    return gf256.mat_vec_rows(sub_inv, rows).tobytes()
