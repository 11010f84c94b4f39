"""Deterministic seed derivation for independent random streams."""

import hashlib

_SEP = b"\x1f"


def derive_seed(*parts) -> int:
    """Derive a 63-bit seed from a tuple of ints and strings.

    The rule is a fixed SHA-256 hash over the stringified parts, so derived
    streams are stable across runs and platforms and do not depend on call
    order or on Python's per-process hash randomization.
    """
    raw = _SEP.join(str(p).encode("utf-8") for p in parts)
    digest = hashlib.sha256(raw).digest()
    return int.from_bytes(digest[:8], "little") >> 1
