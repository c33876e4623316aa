"""Named seed derivation.

Every random draw in the package comes from a generator derived from one
master seed plus a path of names, so any sub-result can be reproduced in
isolation without replaying the whole pipeline.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _name_key(names: tuple) -> list[int]:
    digest = hashlib.sha256("\x1f".join(str(n) for n in names).encode()).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def derive_seed(master: int, *names) -> int:
    """Return a 63-bit seed determined by ``master`` and ``names``."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=_name_key(names))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def derive_rng(master: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *names))
