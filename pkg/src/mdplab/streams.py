"""Reproducible random streams.

A stream is identified by (master_seed, replica, purpose).  The triple is fed
to a SeedSequence whose output keys a Philox counter-based generator, so every
replica's draws are independent of how replicas are scheduled across workers.
The purpose tag is hashed with CRC-32; this mapping is part of the stability
contract and must not change between versions.
"""

from __future__ import annotations

import zlib

import numpy as np

from .errors import InputError


def purpose_code(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(master_seed: int, replica: int = 0, purpose: str = "noise") -> np.random.Generator:
    if master_seed < 0 or replica < 0:
        raise InputError("seeds and replica indices must be non-negative")
    seq = np.random.SeedSequence([int(master_seed), int(replica), purpose_code(purpose)])
    return np.random.Generator(np.random.Philox(seq))
