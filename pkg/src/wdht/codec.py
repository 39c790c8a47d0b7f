"""Binarisation and bit packing of hash codes.

Bit ``i`` of a code lives in ``word[i // 64]`` at position ``i % 64``
(LSB first).  Padding bits past ``bits`` are always zero.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError

CODES_MAGIC = b"WDHC"
CODES_VERSION = 1


def n_words(bits):
    return (bits + 63) // 64


@dataclass(frozen=True)
class CodeMatrix:
    words: np.ndarray  # uint64 [count, n_words(bits)]
    bits: int

    def __post_init__(self):
        if self.words.dtype != np.uint64 or self.words.ndim != 2:
            raise TypeError("words must be a 2-d uint64 array")
        if self.words.shape[1] != n_words(self.bits):
            raise DataError(f"{self.words.shape[1]} words per row cannot hold {self.bits} bits")

    @property
    def count(self):
        return self.words.shape[0]

    def __len__(self):
        return self.count

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return HashCode(self.words[idx].copy(), self.bits)
        return CodeMatrix(np.ascontiguousarray(self.words[idx]), self.bits)

    def to_bits(self):
        return unpack_matrix(self.words, self.bits)

    def __eq__(self, other):
        return (
            isinstance(other, CodeMatrix)
            and self.bits == other.bits
            and np.array_equal(self.words, other.words)
        )


@dataclass(frozen=True)
class HashCode:
    words: np.ndarray  # uint64 [n_words(bits)]
    bits: int

    def to_bits(self):
        return unpack(self)

    def __eq__(self, other):
        return (
            isinstance(other, HashCode)
            and self.bits == other.bits
            and np.array_equal(self.words, other.words)
        )


def pack_matrix(bitmat):
    """Pack a [count, bits] 0/1 array into LSB-first uint64 words."""
    bitmat = np.asarray(bitmat)
    if bitmat.ndim != 2:
        raise DataError("expected a 2-d bit array")
    if bitmat.size and not np.all((bitmat == 0) | (bitmat == 1)):
        raise DataError("bit array must contain only 0 and 1")
    count, bits = bitmat.shape
    nw = n_words(bits)
    padded = np.zeros((count, nw * 64), dtype=np.uint8)
    padded[:, :bits] = bitmat
    as_bytes = np.packbits(padded.reshape(count, nw * 8, 8), axis=-1, bitorder="little")
    words = as_bytes.reshape(count, nw * 8).view("<u8").astype(np.uint64)
    return words.reshape(count, nw)


def unpack_matrix(words, bits):
    words = np.ascontiguousarray(words, dtype="<u8")
    count = words.shape[0]
    as_bytes = words.view(np.uint8).reshape(count, -1)
    out = np.unpackbits(as_bytes, axis=1, bitorder="little")
    return out[:, :bits]


def pack(bitvec):
    bitvec = np.asarray(bitvec).ravel()
    return HashCode(pack_matrix(bitvec[None, :])[0], bitvec.size)


def unpack(code, bits=None):
    if bits is not None and bits != code.bits:
        raise DataError(f"length mismatch: code has {code.bits} bits, asked for {bits}")
    return unpack_matrix(code.words[None, :], code.bits)[0]


def binarize_matrix(h1):
    """Threshold sigmoid outputs at 0.5; a value of exactly 0.5 becomes 1."""
    h1 = np.asarray(h1, dtype=np.float64)
    if h1.ndim == 1:
        h1 = h1[None, :]
    if not np.all(np.isfinite(h1)):
        raise DataError("non-finite activation cannot be binarised")
    return CodeMatrix(pack_matrix((h1 >= 0.5).astype(np.uint8)), h1.shape[1])


def binarize(h1):
    return binarize_matrix(np.asarray(h1, dtype=np.float64).ravel())[0]


def save_codes(path, codes):
    with open(path, "wb") as fh:
        fh.write(CODES_MAGIC)
        fh.write(struct.pack("<IQI", CODES_VERSION, codes.count, codes.bits))
        fh.write(np.ascontiguousarray(codes.words, dtype="<u8").tobytes())


def load_codes(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    header = 4 + struct.calcsize("<IQI")
    if len(blob) < header:
        raise DataError(f"{path}: truncated header ({len(blob)} bytes)")
    if blob[:4] != CODES_MAGIC:
        raise DataError(f"{path}: bad magic {blob[:4]!r}, expected {CODES_MAGIC!r}")
    version, count, bits = struct.unpack_from("<IQI", blob, 4)
    if version != CODES_VERSION:
        raise DataError(f"{path}: unsupported codes version {version}")
    if bits == 0:
        raise DataError(f"{path}: zero-bit codes")
    nw = n_words(bits)
    expected = header + count * nw * 8
    if len(blob) != expected:
        raise DataError(
            f"{path}: payload size mismatch at byte offset {len(blob)}, expected {expected} bytes"
        )
    words = np.frombuffer(blob, dtype="<u8", offset=header).astype(np.uint64).reshape(count, nw)
    pad = nw * 64 - bits
    if pad and count and np.any(words[:, -1] >> np.uint64(64 - pad)):
        raise DataError(f"{path}: non-zero padding bits")
    return CodeMatrix(words, bits)
