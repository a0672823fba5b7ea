"""Binary archive of per-utterance integer phoneme durations.

Layout (little-endian)::

    magic  b"SYNDUR1\\0"
    uint32 utterance count
    32 bytes  sha256 of the phoneme vocabulary
    per utterance:
        uint16 id length, id bytes (utf-8)
        uint32 N, N x int32 durations
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SYNDUR1\0"


class ArchiveError(ValueError):
    pass


def vocab_hash(phonemes) -> bytes:
    return hashlib.sha256("\n".join(phonemes).encode()).digest()


def save_durations(path, durations: dict[str, np.ndarray], phonemes) -> None:
    out = [MAGIC, struct.pack("<I", len(durations)), vocab_hash(phonemes)]
    for utt_id in sorted(durations):
        d = np.asarray(durations[utt_id])
        if d.ndim != 1 or np.any(d < 0):
            raise ArchiveError(f"{utt_id}: durations must be a 1-D non-negative vector")
        key = utt_id.encode()
        out += [struct.pack("<H", len(key)), key, struct.pack("<I", len(d)),
                d.astype("<i4").tobytes()]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(out))


def load_durations(path, phonemes=None) -> dict[str, np.ndarray]:
    """Read an archive; if ``phonemes`` is given its hash must match the header."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC or len(data) < 44:
        raise ArchiveError(f"{path}: not a duration archive")
    (count,) = struct.unpack_from("<I", data, 8)
    digest = data[12:44]
    if phonemes is not None and digest != vocab_hash(phonemes):
        raise ArchiveError(f"{path}: phoneme vocabulary differs from the one used for alignment")
    pos, out = 44, {}
    try:
        for _ in range(count):
            (n_key,) = struct.unpack_from("<H", data, pos)
            key = data[pos + 2:pos + 2 + n_key].decode()
            pos += 2 + n_key
            (n,) = struct.unpack_from("<I", data, pos)
            out[key] = np.frombuffer(data, "<i4", n, pos + 4).astype(np.int64)
            pos += 4 + 4 * n
    except (struct.error, ValueError, UnicodeDecodeError):
        raise ArchiveError(f"{path}: truncated or corrupt after {len(out)} utterances") from None
    if pos != len(data):
        raise ArchiveError(f"{path}: trailing bytes after {count} utterances")
    return out
