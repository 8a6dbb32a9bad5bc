"""Keyed MD5 constructions for fingerprints and the five selection channels.

Byte layouts are fixed so that insertion and extraction (possibly run by
different programs) agree on every selected cell:

* fingerprint of SP ``n``:  ``MD5(key | decimal(n))``, 128 bits, MSB of byte 0 first
* channel ``c`` selector:   first 8 bytes (big-endian) of
  ``MD5(decimal(c) | key | part_1 | ... | part_k)``
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

FINGERPRINT_BITS = 128
CHANNELS = (1, 2, 3, 4, 5)
_SEP = b"|"


def as_bytes(value) -> bytes:
    if isinstance(value, bytes):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value)).encode("ascii")
    return str(value).encode("utf-8")


@dataclass(frozen=True, eq=False)
class Fingerprint:
    bits: np.ndarray
    sp_id: int = 0

    def __post_init__(self):
        bits = np.array(self.bits, dtype=np.uint8, copy=True)
        if bits.shape != (FINGERPRINT_BITS,) or bits.max(initial=0) > 1:
            raise ValueError(f"fingerprint must be {FINGERPRINT_BITS} bits")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    def __len__(self):
        return FINGERPRINT_BITS

    def __eq__(self, other):
        if not isinstance(other, Fingerprint):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    @property
    def hex(self) -> str:
        return np.packbits(self.bits).tobytes().hex()

    @classmethod
    def from_hex(cls, text: str, sp_id: int = 0) -> "Fingerprint":
        raw = bytes.fromhex(text)
        if len(raw) != FINGERPRINT_BITS // 8:
            raise ValueError("fingerprint hex must be 32 characters")
        return cls(np.unpackbits(np.frombuffer(raw, dtype=np.uint8)), sp_id)


def gen_fingerprint(key, sp_id: int) -> Fingerprint:
    if sp_id < 0:
        raise ValueError("sp_id must be non-negative")
    key = as_bytes(key)
    if not key:
        raise ValueError("secret key must be non-empty")
    digest = hashlib.md5(key + _SEP + as_bytes(sp_id)).digest()
    return Fingerprint(np.unpackbits(np.frombuffer(digest, dtype=np.uint8)), sp_id)


def u_select(channel: int, key, *parts) -> int:
    """Pseudorandom unsigned 64-bit value for ``channel`` keyed by ``key``."""
    if channel not in CHANNELS:
        raise ValueError(f"channel must be one of {CHANNELS}")
    if not parts:
        raise ValueError("at least one part is required")
    msg = _SEP.join([as_bytes(channel), as_bytes(key), *map(as_bytes, parts)])
    return int.from_bytes(hashlib.md5(msg).digest()[:8], "big")
