"""Circular substructure fingerprints over parsed molecules.

The bit identity is fully pinned so fingerprints are reproducible across
platforms and releases:

Hashing. Integer tuples are hashed with a fixed 64-bit scheme. Starting
from the seed 0xCBF29CE484222325, each value v folds in as
``h = mix64(h ^ (v mod 2**64))`` (negative values wrap, i.e. two's
complement). ``mix64`` is the splitmix64 finalizer::

    x ^= x >> 30; x *= 0xBF58476D1CE4E5B9; x &= 2**64-1
    x ^= x >> 27; x *= 0x94D049BB133111EB; x &= 2**64-1
    x ^= x >> 31

Atom environments. The round-0 code of an atom hashes the tuple
(atomic number, heavy-atom degree, explicit H count, formal charge,
aromatic flag as 0/1, isotope or 0). Round r >= 1 hashes
(previous code, t1, c1, t2, c2, ...) where the (bond tag, neighbor's
previous code) pairs are sorted lexicographically and the bond tag is the
bond order value (1 single, 2 double, 3 triple, 4 aromatic).

Deduplication. Each center tracks the set of bonds its environment
covers: ball_0 is empty, and ball_r = incident bonds | own ball_{r-1} |
union of neighbors' ball_{r-1}. A round-r code is emitted only when r is 0
or ball_r differs from ball_{r-1}; a grown-stale environment (an isolated
atom, or a whole small molecule swallowed early) stops emitting.

Bit layout. A code sets bit ``code mod nbits``. Bit i lives in 64-bit
word i // 64 at in-word position i % 64; serialized bytes are the words
in little-endian order.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .smiles import Molecule

__all__ = [
    "Fingerprint",
    "FingerprintLengthError",
    "hash_ints",
    "morgan_fingerprint",
    "tanimoto",
    "tanimoto_baseline_score",
]

_MASK64 = (1 << 64) - 1
_HASH_SEED = 0xCBF29CE484222325


class FingerprintLengthError(ValueError):
    """Raised when an operation mixes fingerprints of different nbits."""


def _mix64(x: int) -> int:
    x &= _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


def hash_ints(values: Iterable[int]) -> int:
    """Fold an integer sequence into a 64-bit code (see module docstring)."""
    h = _HASH_SEED
    for v in values:
        h = _mix64(h ^ (v & _MASK64))
    return h


class Fingerprint:
    """Fixed-width bit vector backed by little-endian 64-bit words."""

    __slots__ = ("nbits", "words")

    def __init__(self, words: np.ndarray, nbits: int):
        _check_nbits(nbits)
        words = np.ascontiguousarray(words, dtype=np.uint64)
        if words.shape != (nbits // 64,):
            raise ValueError(f"expected {nbits // 64} words, got {words.shape}")
        self.words = words
        self.nbits = nbits

    @classmethod
    def zeros(cls, nbits: int) -> "Fingerprint":
        _check_nbits(nbits)
        return cls(np.zeros(nbits // 64, dtype=np.uint64), nbits)

    @classmethod
    def from_indices(cls, indices: Iterable[int], nbits: int) -> "Fingerprint":
        _check_nbits(nbits)
        words = np.zeros(nbits // 64, dtype=np.uint64)
        for i in indices:
            if not 0 <= i < nbits:
                raise ValueError(f"bit index {i} out of range for nbits={nbits}")
            words[i // 64] |= np.uint64(1) << np.uint64(i % 64)
        return cls(words, nbits)

    @classmethod
    def from_bytes(cls, data: bytes, nbits: int) -> "Fingerprint":
        _check_nbits(nbits)
        if len(data) != nbits // 8:
            raise ValueError(f"expected {nbits // 8} bytes, got {len(data)}")
        return cls(np.frombuffer(data, dtype="<u8").copy(), nbits)

    def to_bytes(self) -> bytes:
        return self.words.astype("<u8", copy=False).tobytes()

    def to_float(self, dtype=np.float32) -> np.ndarray:
        """Dense 0/1 vector of length nbits, bit i at position i."""
        bits = np.unpackbits(self.words.view(np.uint8), bitorder="little")
        return bits.astype(dtype)

    def indices(self) -> np.ndarray:
        """Sorted indices of set bits."""
        return np.nonzero(np.unpackbits(self.words.view(np.uint8), bitorder="little"))[0]

    def popcount(self) -> int:
        return int(np.bitwise_count(self.words).sum())

    def __or__(self, other: "Fingerprint") -> "Fingerprint":
        _check_same(self, other)
        return Fingerprint(self.words | other.words, self.nbits)

    def __and__(self, other: "Fingerprint") -> "Fingerprint":
        _check_same(self, other)
        return Fingerprint(self.words & other.words, self.nbits)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Fingerprint):
            return NotImplemented
        return self.nbits == other.nbits and bool(np.all(self.words == other.words))

    def __repr__(self) -> str:
        return f"Fingerprint(nbits={self.nbits}, popcount={self.popcount()})"


def _check_nbits(nbits: int) -> None:
    if nbits < 64 or nbits & (nbits - 1):
        raise ValueError(f"nbits must be a power of two >= 64, got {nbits}")


def _check_same(a: Fingerprint, b: Fingerprint) -> None:
    if a.nbits != b.nbits:
        raise FingerprintLengthError(f"nbits mismatch: {a.nbits} vs {b.nbits}")


def morgan_fingerprint(mol: Molecule, radius: int = 3, nbits: int = 2048) -> Fingerprint:
    """Hash circular atom environments of radius 0..radius into a bit vector.

    Invariant to atom ordering (neighbor contributions are sorted) and to
    fragment layout (disconnected components never interact, so the
    fingerprint of a dot-disconnected SMILES is the union of the parts).
    """
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    _check_nbits(nbits)

    n = len(mol.atoms)
    codes = [
        hash_ints(
            (
                a.element,
                len(mol.adjacency[i]),
                a.explicit_h,
                a.formal_charge,
                1 if a.aromatic else 0,
                a.isotope,
            )
        )
        for i, a in enumerate(mol.atoms)
    ]
    emitted = set(codes)

    balls: list[frozenset[int]] = [frozenset()] * n
    incident = [frozenset(bi for _, bi in mol.adjacency[i]) for i in range(n)]

    for _ in range(radius):
        new_codes = []
        new_balls = []
        for i in range(n):
            pairs = sorted(
                (mol.bonds[bi].order.value, codes[j]) for j, bi in mol.adjacency[i]
            )
            flat = [codes[i]]
            for tag, code in pairs:
                flat.append(tag)
                flat.append(code)
            new_codes.append(hash_ints(flat))
            ball = incident[i] | balls[i]
            for j, _ in mol.adjacency[i]:
                ball |= balls[j]
            new_balls.append(ball)
        for i in range(n):
            if new_balls[i] != balls[i]:
                emitted.add(new_codes[i])
        codes = new_codes
        balls = new_balls

    return Fingerprint.from_indices({c % nbits for c in emitted}, nbits)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """Jaccard similarity of set bits; two empty fingerprints give 0.0."""
    _check_same(a, b)
    inter = (a & b).popcount()
    union = (a | b).popcount()
    if union == 0:
        return 0.0
    return inter / union


def tanimoto_baseline_score(contexts: Iterable[Fingerprint], query: Fingerprint) -> float:
    """Best context similarity, the no-learning screening baseline."""
    best = None
    for fp in contexts:
        s = tanimoto(fp, query)
        if best is None or s > best:
            best = s
    if best is None:
        raise ValueError("empty context list")
    return best
