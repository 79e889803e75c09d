"""Named sub-seeds derived from one master seed."""

import hashlib


def derive_seed(master, purpose):
    """64-bit seed from sha256 of ``"<master>:<purpose>"``."""
    digest = hashlib.sha256(f"{int(master)}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1
