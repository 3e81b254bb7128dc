"""Small shared helpers: seeded RNG streams, atomic writes, hashing."""

import hashlib
import os

import numpy as np


def make_rng(seed, *key):
    """Counter-based (Philox) generator for a (seed, purpose...) stream.

    Distinct keys give statistically independent streams, so consuming one
    stream never shifts another — the backbone of the reproducibility
    guarantees (identical seeds => bit-identical runs).
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(_key_int, key)])
    return np.random.Generator(np.random.Philox(ss))


def _key_int(k):
    if isinstance(k, int):
        return k & 0xFFFFFFFFFFFFFFFF
    return int.from_bytes(hashlib.sha256(str(k).encode()).digest()[:8], "little")


def atomic_write_bytes(path, data):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def sha256_text(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
