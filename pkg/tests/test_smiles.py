"""Parser corpus: valid structures, implicit hydrogens, and error positions."""

import pytest

from fscap.smiles import Atom, BondOrder, SmilesParseError, parse_smiles


def counts(mol):
    return mol.heavy_atom_count(), len(mol.bonds)


# ---------------------------------------------------------------------------
# valid corpus: (smiles, heavy atoms, bonds, total implicit H)

VALID = [
    ("C", 1, 0, 4),
    ("O", 1, 0, 2),
    ("[H+]", 0, 0, 0),
    ("CC", 2, 1, 6),
    ("C=C", 2, 1, 4),
    ("C#N", 2, 1, 1),
    ("CCO", 3, 2, 6),
    ("C(C)(C)(C)C", 5, 4, 12),
    ("CC(=O)O", 4, 3, 4),            # acetic acid
    ("C1CC1", 3, 3, 6),              # cyclopropane
    ("C1CCCCC1", 6, 6, 12),          # cyclohexane
    ("c1ccccc1", 6, 6, 6),           # benzene
    ("c1ccc2ccccc2c1", 10, 11, 8),   # naphthalene, fused ring closure
    ("c1ccncc1", 6, 6, 5),           # pyridine: aromatic N, no H
    ("c1cc[nH]c1", 5, 5, 5),         # pyrrole: 4 CH + bracket NH
    ("c1ccsc1", 5, 5, 4),            # thiophene: aromatic S, 0 implicit H
    ("c1ccoc1", 5, 5, 4),            # furan
    ("Cc1ccccc1", 7, 7, 8),          # toluene
    ("[Na+].[Cl-]", 2, 0, 0),        # disconnected ion pair
    ("CC(C)C", 4, 3, 10),
    ("O=C=O", 3, 2, 0),              # CO2
    ("N#N", 2, 1, 0),
    ("[13CH4]", 1, 0, 4),            # isotope + explicit H count
    ("[C@H](N)(C)O", 4, 3, 7),       # chirality marker ignored
    ("F/C=C/F", 4, 3, 2),            # stereo bonds read as single
    ("C%10CC%10", 3, 3, 6),          # two-digit ring closure
    ("[O-]C(=O)C", 4, 3, 3),         # acetate anion
    ("[NH4+]", 1, 0, 4),
    ("[nH]1cccc1", 5, 5, 5),         # pyrrole written head-first
    ("CN1C=CC=C1", 6, 6, 7),         # N-methyl pyrrole, kekulized ring
    ("ClC(Cl)(Cl)Cl", 5, 4, 0),      # two-letter halogen
    ("BrCCBr", 4, 3, 4),
    ("IC#CI", 4, 3, 0),
    ("S(=O)(=O)(O)O", 5, 4, 2),      # hypervalent sulfur (valence 6)
    ("OP(=O)(O)O", 5, 4, 3),         # phosphoric acid (valence 5)
    ("CB(C)C", 4, 3, 9),             # boron, valence 3
    ("C[Se]C", 3, 2, 6 + 0),         # bracket selenium
    ("c1cc[se]c1", 5, 5, 4),         # aromatic selenium ring
    ("C1=CC=CC=C1", 6, 6, 6),        # kekulized benzene
    ("N1C=CC=C1", 5, 5, 5),          # kekulized pyrrole-like ring
    ("CCCCCCCCCCCCCCCCCCCC", 20, 19, 42),  # eicosane chain
    ("C(F)(F)F", 4, 3, 1),
    ("[2H]O[2H]", 1, 2, 0),          # heavy water: D is not a heavy atom
    ("C[N+](C)(C)C", 5, 4, 12),      # quaternary ammonium
    ("[Fe+2]", 1, 0, 0),             # bare metal, charge digits
    ("C1CC=1C", 4, 4, 6),            # ring bond order given at closing side only
]


@pytest.mark.parametrize("smiles,heavy,bonds,h_total", VALID)
def test_valid_structures(smiles, heavy, bonds, h_total):
    mol = parse_smiles(smiles)
    assert mol.heavy_atom_count() == heavy, smiles
    assert len(mol.bonds) == bonds, smiles
    implicit = sum(a.explicit_h for a in mol.atoms)
    assert implicit == h_total, smiles


def test_aromatic_flags_and_orders():
    mol = parse_smiles("c1ccccc1")
    assert all(a.aromatic for a in mol.atoms)
    assert all(b.order == BondOrder.AROMATIC for b in mol.bonds)
    mol = parse_smiles("C1=CC=CC=C1")
    assert not any(a.aromatic for a in mol.atoms)
    orders = sorted(b.order for b in mol.bonds)
    assert orders.count(BondOrder.DOUBLE) == 3
    assert orders.count(BondOrder.SINGLE) == 3


def test_ring_closure_joins_right_atoms():
    mol = parse_smiles("C1CC1")
    pairs = {frozenset((b.a, b.b)) for b in mol.bonds}
    assert pairs == {frozenset((0, 1)), frozenset((1, 2)), frozenset((0, 2))}


def test_ring_bond_order_may_sit_on_either_side():
    for s in ("C=1CCCCC=1", "C=1CCCCC1", "C1CCCCC=1"):
        mol = parse_smiles(s)
        ring = [b for b in mol.bonds if frozenset((b.a, b.b)) == frozenset((0, 5))]
        assert len(ring) == 1 and ring[0].order == BondOrder.DOUBLE, s


def test_charges():
    mol = parse_smiles("[O-]")
    assert mol.atoms[0].formal_charge == -1
    mol = parse_smiles("[Fe+3]")
    assert mol.atoms[0].formal_charge == 3
    mol = parse_smiles("[O--]")
    assert mol.atoms[0].formal_charge == -2


def test_isotope_recorded():
    mol = parse_smiles("[13CH4]")
    assert mol.atoms[0].isotope == 13
    mol = parse_smiles("C")
    assert mol.atoms[0].isotope == 0


def test_dot_creates_no_bond():
    mol = parse_smiles("CC.CC")
    assert mol.heavy_atom_count() == 4
    assert len(mol.bonds) == 2
    pairs = {frozenset((b.a, b.b)) for b in mol.bonds}
    assert frozenset((1, 2)) not in pairs


def test_nitrogen_uses_higher_valence_when_needed():
    # N with four bond units gets valence 5 -> 1 implicit H
    mol = parse_smiles("N(=O)=O")
    assert mol.atoms[0].explicit_h == 1
    # plain amine stays at valence 3
    mol = parse_smiles("NC")
    assert mol.atoms[0].explicit_h == 2


def test_aromatic_carbon_hydrogens():
    mol = parse_smiles("c1ccccc1")
    assert [a.explicit_h for a in mol.atoms] == [1] * 6
    mol = parse_smiles("Cc1ccccc1")
    ring_h = [a.explicit_h for a in mol.atoms if a.aromatic]
    assert sorted(ring_h) == [0, 1, 1, 1, 1, 1]


def test_bracket_atom_h_is_explicit_not_computed():
    mol = parse_smiles("[CH2]")
    assert mol.atoms[0].explicit_h == 2
    mol = parse_smiles("[C]")
    assert mol.atoms[0].explicit_h == 0


# ---------------------------------------------------------------------------
# error corpus: (smiles, position of the error, fragment of the message)

ERRORS = [
    ("", 0, "empty"),
    ("   ", 0, "unexpected character"),
    ("X", 0, "unknown atom symbol"),
    ("CX", 1, "unknown atom symbol"),
    ("CCxC", 2, "unknown atom symbol"),
    ("*", 0, "wildcard"),
    ("C*", 1, "wildcard"),
    ("(C)", 0, "branch"),
    ("C(", 1, "unmatched '('"),
    ("C)", 1, "unmatched ')'"),
    ("C(C", 1, "unmatched '('"),
    ("C()C", 2, "empty branch"),
    ("C((C))", 2, "branch cannot start with a branch"),
    ("C1CC", 1, "never closed"),
    ("C1CC2", 1, "never closed"),  # first open ring reported
    ("1CC", 0, "ring"),
    ("C11", 2, "duplicated ring-closure digit"),
    ("C12CC12", 6, "duplicate bond"),
    ("C=1CC#1", 6, "conflict"),
    ("C%1C", 1, "two digits"),
    ("[C", 0, "unmatched '['"),
    ("C[", 1, "unmatched '['"),
    ("[]", 0, "bracket atom"),
    ("[Zz]", 0, "unknown atom symbol"),
    ("[C+10]", 0, "charge"),
    ("=C", 0, "bond"),
    ("C=", 1, "no following atom"),
    ("C=)", 2, "unmatched ')'"),
    ("C=.C", 2, "no following atom"),
    ("C#=C", 2, "bond symbol"),
    ("C..C", 2, "no preceding atom"),
    (".C", 0, "no preceding atom"),
    ("C.", 1, "no following atom"),
    ("C%C", 1, "two digits"),
]


@pytest.mark.parametrize("smiles,pos,fragment", ERRORS)
def test_errors_carry_position(smiles, pos, fragment):
    with pytest.raises(SmilesParseError) as exc:
        parse_smiles(smiles)
    assert exc.value.position == pos, f"{smiles!r}: {exc.value}"
    assert fragment in str(exc.value).lower(), f"{smiles!r}: {exc.value}"


def test_error_is_valueerror_subclass():
    assert issubclass(SmilesParseError, ValueError)


def test_branch_restores_attachment_point():
    mol = parse_smiles("CC(C)C")
    pairs = {frozenset((b.a, b.b)) for b in mol.bonds}
    assert pairs == {frozenset((0, 1)), frozenset((1, 2)), frozenset((1, 3))}


def test_atom_symbol_roundtrip():
    mol = parse_smiles("c1ccccc1")
    assert mol.atoms[0].symbol == "C"
    mol = parse_smiles("[Se]")
    assert mol.atoms[0].symbol == "Se"
    assert Atom(element=17, aromatic=False, formal_charge=0,
                explicit_h=0, isotope=0).symbol == "Cl"
