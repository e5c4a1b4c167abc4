import hashlib

import numpy as np

_MASK_63 = (1 << 63) - 1


def derive_seed(master: int, *labels: object) -> int:
    """Stable 63-bit child seed for ``labels`` under ``master``."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master)).encode("utf-8"))
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest(), "little") & _MASK_63


def rng_for(master: int, *labels: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *labels))
