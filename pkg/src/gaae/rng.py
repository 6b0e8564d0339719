"""Deterministic random-number streams.

Every consumer of randomness (data sampling, weight init, latent noise,
PGHI random phase, ...) pulls from its own named substream derived from the
single run seed. Adding a new consumer therefore never perturbs the draws
seen by existing ones, and each stream's state can be serialized into a
checkpoint and restored bit-exactly.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _jsonable(obj):
    """Philox state dicts contain uint64 ndarrays; flatten them for JSON."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.tolist(), "dtype": str(obj.dtype)}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _unjsonable(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.asarray(obj["__ndarray__"], dtype=obj["dtype"])
        return {k: _unjsonable(v) for k, v in obj.items()}
    return obj


def _stream_key(seed: int, name: str) -> list[int]:
    # Stable across processes: do NOT use hash(), it is salted per run.
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return [seed & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest[:8], "little")]


def stream(seed: int, name: str) -> np.random.Generator:
    """A fresh generator for substream `name` of run seed `seed`."""
    ss = np.random.SeedSequence(_stream_key(seed, name))
    return np.random.Generator(np.random.Philox(ss))


class RngHub:
    """Lazily-created named substreams with checkpointable state."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def get(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = stream(self.seed, name)
        return self._streams[name]

    def state_dict(self) -> dict:
        return {
            "seed": self.seed,
            "streams": {
                name: _jsonable(g.bit_generator.state)
                for name, g in self._streams.items()
            },
        }

    def load_state_dict(self, state: dict) -> None:
        self.seed = int(state["seed"])
        self._streams = {}
        for name, bg_state in state["streams"].items():
            g = stream(self.seed, name)
            g.bit_generator.state = _unjsonable(bg_state)
            self._streams[name] = g
