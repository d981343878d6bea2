"""Named, independent random streams derived from one root seed."""

from __future__ import annotations

import zlib
from typing import Dict, Mapping

import numpy as np


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


class RngStreams:
    """Lazily created ``numpy.random.Generator`` per stream name.

    Each stream is seeded from ``SeedSequence(root_seed, spawn_key=(crc32(name),))``,
    so creating a new stream (e.g. one more environment) leaves the others untouched.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: Dict[str, np.random.Generator] = {}

    def get(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            sequence = np.random.SeedSequence(self.seed, spawn_key=(stream_key(name),))
            self._streams[name] = np.random.Generator(np.random.PCG64(sequence))
        return self._streams[name]

    def env(self, index: int) -> np.random.Generator:
        return self.get(f"env.{index}")

    def state_dict(self) -> Dict[str, dict]:
        """JSON-safe generator states; the 128-bit PCG64 words are stored as hex strings."""
        result = {}
        for name, gen in sorted(self._streams.items()):
            state = gen.bit_generator.state
            result[name] = {
                "state": format(state["state"]["state"], "x"),
                "inc": format(state["state"]["inc"], "x"),
                "has_uint32": int(state["has_uint32"]),
                "uinteger": int(state["uinteger"]),
            }
        return result

    def load_state_dict(self, states: Mapping[str, dict]) -> None:
        for name, saved in states.items():
            self.get(name).bit_generator.state = {
                "bit_generator": "PCG64",
                "state": {"state": int(saved["state"], 16), "inc": int(saved["inc"], 16)},
                "has_uint32": saved["has_uint32"],
                "uinteger": saved["uinteger"],
            }
