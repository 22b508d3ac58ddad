"""Abstract key schedule: a keyed digest stands in for the real algorithms."""

from __future__ import annotations

import hashlib
from typing import Mapping

# output -> ordered inputs; mirrors the bundled model's derivation rules
DERIVATIONS: dict[str, tuple[str, ...]] = {
    "K_ASME": ("K", "RAND", "SN_id"),
    "K_NASenc": ("K_ASME", "NAS_EEA"),
    "K_NASint": ("K_ASME", "NAS_EIA"),
    "K_eNB": ("K_ASME", "NAS_UL_COUNT"),
    "K_RRCenc": ("K_eNB", "AS_EEA"),
    "K_RRCint": ("K_eNB", "AS_EIA"),
    "K_UPenc": ("K_eNB", "AS_EEA"),
}

NAS_KEYS = ("K_NASenc", "K_NASint")
AS_KEYS = ("K_RRCenc", "K_RRCint", "K_UPenc")
SESSION_KEYS = ("K_ASME",) + NAS_KEYS + ("K_eNB",) + AS_KEYS


def _encode_int(v: int) -> bytes:
    raw = v.to_bytes(max(1, (v.bit_length() + 7) // 8), "big")
    return len(raw).to_bytes(4, "big") + raw


def kdf(tag: str, *inputs: int, bits: int = 128) -> int:
    """Digest over the tag and length-prefixed inputs, truncated to ``bits``."""
    h = hashlib.blake2b(digest_size=max(1, bits // 8))
    t = tag.encode()
    h.update(len(t).to_bytes(4, "big") + t)
    for v in inputs:
        h.update(_encode_int(int(v)))
    return int.from_bytes(h.digest(), "big")


def mac(key: int, tag: str, *fields: int) -> int:
    """64-bit message authentication code."""
    return kdf("MAC:" + tag, key, *fields, bits=64)


def derive(name: str, values: Mapping[str, int]) -> int:
    """Derive key ``name`` from named input values."""
    return kdf(name, *(values[i] for i in DERIVATIONS[name]))


def can_derive(name: str, values: Mapping[str, int]) -> bool:
    return all(i in values for i in DERIVATIONS[name])


def subscriber_key(imsi: int, operator_secret: int) -> int:
    return kdf("K", imsi, operator_secret)


def autn(k: int, rand: int) -> int:
    return kdf("AUTN", k, rand)


def res(k: int, rand: int) -> int:
    return kdf("RES", k, rand, bits=64)
