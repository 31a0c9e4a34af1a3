"""Keyed random streams: one independent generator per (master seed, task id)."""
from __future__ import annotations

import hashlib

import numpy as np


def _key_words(task_id: str) -> list:
    digest = hashlib.sha256(str(task_id).encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 32, 4)]


def rng_stream(master_seed: int, task_id: str) -> np.random.Generator:
    """Philox generator keyed on the seed and a hash of ``task_id``.

    The stream depends only on its key, so results do not change with the
    order or process in which grid cells run.
    """
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFF, *_key_words(task_id)])
    return np.random.Generator(np.random.Philox(ss))


def child_streams(master_seed: int, task_id: str, names) -> dict:
    return {name: rng_stream(master_seed, f"{task_id}/{name}") for name in names}
