"""Fingerprint oracles: an independent re-derivation of the whole pipeline.

The reference implementation below recomputes codes with plain Python
ints and set logic, sharing no code with the package beyond the parsed
Molecule. Divergence in hashing, neighbor sorting, deduplication, or
folding shows up as a bit mismatch.
"""

import numpy as np
import pytest

from fscap.fingerprint import (
    Fingerprint,
    FingerprintLengthError,
    hash_ints,
    morgan_fingerprint,
    tanimoto,
    tanimoto_baseline_score,
)
from fscap.smiles import parse_smiles

# ---------------------------------------------------------------------------
# reference pipeline (independent route)

MASK = (1 << 64) - 1


def ref_mix64(z: int) -> int:
    z &= MASK
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & MASK
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & MASK
    return z ^ (z >> 31)


def ref_hash(values) -> int:
    h = 0xCBF29CE484222325
    for v in values:
        h = ref_mix64(h ^ (v & MASK))
    return h


def ref_bits(mol, radius: int, nbits: int) -> set:
    n = len(mol.atoms)
    heavy_degree = [
        sum(1 for j, _ in mol.adjacency[i] if mol.atoms[j].element != 1)
        for i in range(n)
    ]
    codes = [
        ref_hash(
            [
                a.element,
                heavy_degree[i],
                a.explicit_h,
                a.formal_charge,
                1 if a.aromatic else 0,
                a.isotope,
            ]
        )
        for i, a in enumerate(mol.atoms)
    ]
    incident = [frozenset(bi for _, bi in mol.adjacency[i]) for i in range(n)]
    balls = [frozenset() for _ in range(n)]
    emitted = []
    seen_balls = [set() for _ in range(n)]
    for i in range(n):
        emitted.append(codes[i])
        seen_balls[i].add(balls[i])
    for _ in range(radius):
        new_codes = []
        new_balls = []
        for i in range(n):
            pairs = sorted(
                (int(mol.bonds[bi].order), codes[j]) for j, bi in mol.adjacency[i]
            )
            flat = [codes[i]]
            for tag, c in pairs:
                flat.extend((tag, c))
            new_codes.append(ref_hash(flat))
            ball = set(incident[i]) | set(balls[i])
            for j, _ in mol.adjacency[i]:
                ball |= balls[j]
            new_balls.append(frozenset(ball))
        codes, balls = new_codes, new_balls
        for i in range(n):
            if balls[i] not in seen_balls[i]:
                seen_balls[i].add(balls[i])
                emitted.append(codes[i])
    return {c % nbits for c in emitted}


def package_bits(smiles: str, radius: int = 3, nbits: int = 2048) -> set:
    fp = morgan_fingerprint(parse_smiles(smiles), radius=radius, nbits=nbits)
    return set(fp.indices())


REFERENCE_MOLECULES = [
    "C",
    "CC",
    "CCO",
    "CC(C)C",
    "c1ccccc1",
    "Cc1ccccc1",
    "CC(=O)O",
    "C1CCCCC1",
    "c1ccc2ccccc2c1",
    "OP(=O)(O)O",
    "[NH4+].[Cl-]",
    "FC(F)(F)c1ccc(N)cc1",
]


@pytest.mark.parametrize("smiles", REFERENCE_MOLECULES)
@pytest.mark.parametrize("radius", [0, 1, 2, 3])
def test_matches_reference_pipeline(smiles, radius):
    mol = parse_smiles(smiles)
    assert package_bits(smiles, radius, 512) == ref_bits(mol, radius, 512)


# ---------------------------------------------------------------------------
# pinned hash values: the mixing function is normative

def test_hash_golden_values():
    assert hash_ints([]) == 0xCBF29CE484222325
    assert hash_ints([1]) == 0x7F555C6A530FDF81
    assert hash_ints([6, 2, 1, 0, 0, 0]) == 0x7E8C6745F0256796
    assert hash_ints([2**63]) == 0xF1F7F0B3D82899EF
    # negative inputs fold through the 64-bit mask
    assert hash_ints([-1]) == hash_ints([MASK])


def test_hash_order_sensitivity():
    assert hash_ints([1, 2]) != hash_ints([2, 1])


# ---------------------------------------------------------------------------
# spec-level behavior

def test_methane_sets_exactly_one_bit():
    fp = morgan_fingerprint(parse_smiles("C"), radius=3, nbits=2048)
    assert fp.popcount() == 1


def test_isolated_atoms_one_bit_each():
    for s in ("O", "N", "[Na+]"):
        fp = morgan_fingerprint(parse_smiles(s), radius=2, nbits=2048)
        assert fp.popcount() == 1, s


def test_atom_order_invariance_simple():
    assert package_bits("CCO") == package_bits("OCC")
    assert package_bits("CC(C)C") == package_bits("C(C)(C)C")
    assert package_bits("c1ccccc1O") == package_bits("Oc1ccccc1")


def test_dot_union_is_bitwise_or():
    a = morgan_fingerprint(parse_smiles("C"), 3, 2048)
    b = morgan_fingerprint(parse_smiles("O"), 3, 2048)
    ab = morgan_fingerprint(parse_smiles("C.O"), 3, 2048)
    assert set(ab.indices()) == set(a.indices()) | set(b.indices())
    assert ab == (a | b)


def test_dot_union_larger():
    union = package_bits("CCO.c1ccccc1")
    assert union == package_bits("CCO") | package_bits("c1ccccc1")


def test_random_relabelings_are_invariant():
    # regenerate the same random tree under many atom orderings
    rng = np.random.default_rng(20240817)
    for _ in range(25):
        n = int(rng.integers(4, 12))
        parents = [int(rng.integers(0, i)) for i in range(1, n)]
        children = {i: [] for i in range(n)}
        for child, parent in enumerate(parents, start=1):
            children[parent].append(child)
        elements = [("C", "N", "O")[int(rng.integers(3))] for _ in range(n)]

        def render(root, order_seed):
            order_rng = np.random.default_rng(order_seed)

            def emit(i):
                out = elements[i]
                kids = list(children[i])
                order_rng.shuffle(kids)
                for k in kids[:-1]:
                    out += "(" + emit(k) + ")"
                if kids:
                    out += emit(kids[-1])
                return out

            return emit(root)

        base = package_bits(render(0, 0), radius=3, nbits=1024)
        for seed in range(1, 5):
            assert package_bits(render(0, seed), radius=3, nbits=1024) == base


def test_radius_zero_counts_distinct_atom_types():
    # butane: CH3 and CH2 carbons are the only round-0 environments
    fp = morgan_fingerprint(parse_smiles("CCCC"), radius=0, nbits=2048)
    assert fp.popcount() == 2


def test_deeper_radius_only_adds_bits():
    mol = parse_smiles("CC(=O)Oc1ccccc1C(=O)O")
    prev = set()
    for r in range(4):
        cur = set(morgan_fingerprint(mol, radius=r, nbits=4096).indices())
        assert prev <= cur
        prev = cur


def test_ring_dedup_stops_growing():
    # benzene: by radius 3 every atom's bond ball is the whole ring, so
    # radius 4 adds nothing new
    r3 = package_bits("c1ccccc1", radius=3, nbits=2048)
    r4 = package_bits("c1ccccc1", radius=4, nbits=2048)
    assert r3 == r4


# ---------------------------------------------------------------------------
# container behavior

def test_byte_layout_little_endian():
    fp = Fingerprint.from_indices([0, 8, 64, 127], nbits=128)
    raw = fp.to_bytes()
    assert len(raw) == 16
    assert raw[0] == 0b00000001  # bit 0
    assert raw[1] == 0b00000001  # bit 8
    assert raw[8] == 0b00000001  # bit 64
    assert raw[15] == 0b10000000  # bit 127


def test_bytes_roundtrip():
    rng = np.random.default_rng(7)
    for _ in range(20):
        idx = rng.choice(256, size=int(rng.integers(0, 40)), replace=False)
        fp = Fingerprint.from_indices([int(i) for i in idx], nbits=256)
        back = Fingerprint.from_bytes(fp.to_bytes(), nbits=256)
        assert back == fp
        assert sorted(back.indices()) == sorted(int(i) for i in idx)


def test_to_float_matches_indices():
    fp = Fingerprint.from_indices([3, 64, 200], nbits=256)
    v = fp.to_float(np.float32)
    assert v.shape == (256,)
    assert v.dtype == np.float32
    assert set(np.flatnonzero(v)) == {3, 64, 200}
    assert v.max() == 1.0


def test_nbits_validation():
    with pytest.raises(ValueError):
        Fingerprint.zeros(100)  # not a power of two
    with pytest.raises(ValueError):
        Fingerprint.zeros(32)  # below the minimum width
    with pytest.raises(ValueError):
        Fingerprint.from_indices([64], nbits=64)  # index out of range


# ---------------------------------------------------------------------------
# tanimoto

def test_tanimoto_identity():
    fp = package_set([1, 2, 3])
    assert tanimoto(fp, fp) == 1.0


def package_set(indices, nbits=128):
    return Fingerprint.from_indices(indices, nbits=nbits)


def test_tanimoto_disjoint():
    assert tanimoto(package_set([1, 2]), package_set([3, 4])) == 0.0


def test_tanimoto_half():
    assert tanimoto(package_set([1, 2, 3]), package_set([2, 3, 4])) == 0.5


def test_tanimoto_both_empty_is_zero():
    assert tanimoto(package_set([]), package_set([])) == 0.0


def test_tanimoto_symmetric_and_bounded():
    rng = np.random.default_rng(11)
    for _ in range(50):
        a = package_set([int(i) for i in rng.choice(128, rng.integers(0, 20), replace=False)])
        b = package_set([int(i) for i in rng.choice(128, rng.integers(0, 20), replace=False)])
        t = tanimoto(a, b)
        assert t == tanimoto(b, a)
        assert 0.0 <= t <= 1.0
        if t == 1.0:
            assert a == b and a.popcount() > 0


def test_tanimoto_length_mismatch():
    with pytest.raises(FingerprintLengthError):
        tanimoto(Fingerprint.zeros(128), Fingerprint.zeros(256))


def test_baseline_score_is_max():
    q = package_set([1, 2, 3, 4])
    near = package_set([1, 2, 3, 4])     # 1.0
    half = package_set([3, 4, 5, 6])     # 2/6
    far = package_set([9, 10])           # 0
    assert tanimoto_baseline_score([far, half, near], q) == 1.0
    assert tanimoto_baseline_score([far, half], q) == tanimoto(half, q)
    assert tanimoto_baseline_score([far], q) == 0.0


def test_baseline_score_empty_contexts_rejected():
    with pytest.raises(ValueError):
        tanimoto_baseline_score([], package_set([1]))
