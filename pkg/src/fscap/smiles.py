"""SMILES parsing for the organic subset, without aromaticity perception.

The parser covers linear notation with branches, ring closures (single digit
and %NN), bracket atoms (isotope, symbol, H count, charge), the organic
subset B C N O P S F Cl Br I plus their aromatic lowercase forms, explicit
bond symbols - = # :, and dot-disconnected fragments. Stereo markers
(/ \\ @ @@) are accepted and ignored. Wildcard atoms (*) are rejected.

Lowercase atoms are stored as aromatic verbatim; there is no kekulization
and no aromaticity perception. Hydrogens are never graph nodes: bracket
atoms carry their bracket H count, organic-subset atoms get an implicit
count from standard valences (see implicit_hydrogens).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import IntEnum

__all__ = [
    "Atom",
    "Bond",
    "BondOrder",
    "Molecule",
    "SmilesParseError",
    "parse_smiles",
]

_ELEMENTS = (
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co "
    "Ni Cu Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb "
    "Te I Xe Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re "
    "Os Ir Pt Au Hg Tl Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es "
    "Fm Md No Lr Rf Db Sg Bh Hs Mt Ds Rg Cn Nh Fl Mc Lv Ts Og"
).split()

ATOMIC_NUMBER = {sym: z for z, sym in enumerate(_ELEMENTS, start=1)}
SYMBOL_FOR = {z: sym for sym, z in ATOMIC_NUMBER.items()}

# Unbracketed organic subset. Two-letter symbols must be checked first.
_ORGANIC_TWO = ("Cl", "Br")
_ORGANIC_ONE = set("BCNOPSFI")
_AROMATIC_ORGANIC = set("bcnops")
_AROMATIC_BRACKET = {"b", "c", "n", "o", "p", "s", "se", "as"}

# Standard valences used for implicit hydrogen counts, smallest first.
_VALENCES = {
    "B": (3,),
    "C": (4,),
    "N": (3, 5),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}

_BRACKET_RE = re.compile(
    r"^(?P<isotope>\d+)?"
    r"(?P<symbol>[A-Z][a-z]?|[a-z]{1,2})"
    r"(?P<chiral>@{1,2})?"
    r"(?P<hcount>H\d*)?"
    r"(?P<charge>[+-]\d+|\++|-+)?$"
)


class SmilesParseError(ValueError):
    """Raised for malformed SMILES. Carries a 0-based character offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (position {position})")
        self.message = message
        self.position = position


class BondOrder(IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    def valence_units(self) -> float:
        """Contribution to the valence sum (aromatic counts 1.5)."""
        return 1.5 if self is BondOrder.AROMATIC else float(self.value)


@dataclass
class Atom:
    """One heavy atom. ``explicit_h`` holds bracket or derived H counts."""

    element: int
    aromatic: bool = False
    formal_charge: int = 0
    explicit_h: int = 0
    isotope: int = 0

    @property
    def symbol(self) -> str:
        return SYMBOL_FOR[self.element]


@dataclass
class Bond:
    a: int
    b: int
    order: BondOrder


@dataclass
class Molecule:
    """Atom list, bond list, and adjacency derived from the bonds.

    ``adjacency[i]`` holds (neighbor_atom_index, bond_index) pairs in bond
    insertion order. At most one bond exists per unordered atom pair.
    """

    atoms: list[Atom] = field(default_factory=list)
    bonds: list[Bond] = field(default_factory=list)
    adjacency: list[list[tuple[int, int]]] = field(default_factory=list)

    def heavy_atom_count(self) -> int:
        # bracket hydrogens ([H+], [2H]) parse as atoms but are not heavy
        return sum(1 for a in self.atoms if a.element != 1)

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])


def _parse_bracket(content: str, position: int) -> Atom:
    if "*" in content:
        raise SmilesParseError("wildcard atom not supported", position)
    m = _BRACKET_RE.match(content)
    if m is None:
        raise SmilesParseError(f"malformed bracket atom [{content}]", position)
    symbol = m.group("symbol")
    aromatic = symbol[0].islower()
    if aromatic:
        if symbol not in _AROMATIC_BRACKET:
            raise SmilesParseError(f"unknown atom symbol '{symbol}'", position)
        symbol = symbol.capitalize()
    if symbol not in ATOMIC_NUMBER:
        raise SmilesParseError(f"unknown atom symbol '{symbol}'", position)

    isotope = int(m.group("isotope")) if m.group("isotope") else 0

    hcount = 0
    htext = m.group("hcount")
    if htext:
        hcount = 1 if htext == "H" else int(htext[1:])

    charge = 0
    ctext = m.group("charge")
    if ctext:
        if ctext in ("+", "-") or ctext == len(ctext) * ctext[0]:
            charge = len(ctext) if ctext[0] == "+" else -len(ctext)
        else:
            charge = int(ctext)
    if not -9 <= charge <= 9:
        raise SmilesParseError(f"formal charge {charge:+d} out of range", position)

    return Atom(
        element=ATOMIC_NUMBER[symbol],
        aromatic=aromatic,
        formal_charge=charge,
        explicit_h=hcount,
        isotope=isotope,
    )


def implicit_hydrogens(symbol: str, aromatic: bool, bond_sum: float) -> int:
    """Implicit H count for an unbracketed organic-subset atom.

    The bond order sum (aromatic bonds count 1.5) is floored. Aliphatic
    atoms use the smallest standard valence that covers the sum, so
    hypervalent N/P/S work; aromatic atoms use the element's lowest
    valence, which reproduces the usual counts for benzene, pyridine,
    furan and thiophene without kekulizing. Never negative.
    """
    valences = _VALENCES[symbol]
    used = int(bond_sum)
    if aromatic:
        return max(0, valences[0] - used)
    for v in valences:
        if v >= used:
            return v - used
    return 0


def parse_smiles(text: str) -> Molecule:
    """Parse a SMILES string into a Molecule.

    Raises SmilesParseError for empty input, unknown symbols, wildcard
    atoms, unmatched brackets or parentheses, never-closed or duplicated
    ring closures, dangling bond symbols, and duplicate bonds. Parsing is
    deterministic; atom indices follow the order atoms appear in the text.
    """
    if not text:
        raise SmilesParseError("empty SMILES", 0)

    mol = Molecule()
    bonded: set[tuple[int, int]] = set()
    # (smiles index of organic atoms needing implicit H) -> symbol
    organic: list[tuple[int, str]] = []

    prev: int | None = None
    pending: BondOrder | None = None
    pending_pos = 0
    last_dot = 0
    # open branch stack: (saved prev, '(' position, atom count at open)
    stack: list[tuple[int, int, int]] = []
    # ring number -> (atom index, bond order or None, position)
    rings: dict[int, tuple[int, BondOrder | None, int]] = {}

    def add_atom(atom: Atom, organic_symbol: str | None) -> None:
        nonlocal prev, pending
        idx = len(mol.atoms)
        mol.atoms.append(atom)
        if organic_symbol is not None:
            organic.append((idx, organic_symbol))
        if prev is not None:
            _add_bond(prev, idx, pending, pending_pos)
        prev = idx
        pending = None

    def _add_bond(a: int, b: int, order: BondOrder | None, position: int) -> None:
        if a == b:
            raise SmilesParseError("ring closure bonds an atom to itself", position)
        key = (min(a, b), max(a, b))
        if key in bonded:
            raise SmilesParseError("duplicate bond between atoms", position)
        bonded.add(key)
        if order is None:
            both_aromatic = mol.atoms[a].aromatic and mol.atoms[b].aromatic
            order = BondOrder.AROMATIC if both_aromatic else BondOrder.SINGLE
        mol.bonds.append(Bond(a, b, order))

    def close_ring(number: int, position: int) -> None:
        nonlocal pending
        if number in rings:
            open_atom, open_order, _ = rings.pop(number)
            order = pending if pending is not None else open_order
            if pending is not None and open_order is not None and pending != open_order:
                raise SmilesParseError(
                    f"conflicting bond orders on ring closure {number}", position
                )
            assert prev is not None
            _add_bond(open_atom, prev, order, position)
        else:
            assert prev is not None
            rings[number] = (prev, pending, position)
        pending = None

    i = 0
    n = len(text)
    while i < n:
        c = text[i]

        if c == "[":
            end = text.find("]", i + 1)
            if end < 0:
                raise SmilesParseError("unmatched '['", i)
            add_atom(_parse_bracket(text[i + 1 : end], i), None)
            i = end + 1
            continue

        if c.isupper():
            two = text[i : i + 2]
            if two in _ORGANIC_TWO:
                add_atom(Atom(element=ATOMIC_NUMBER[two]), two)
                i += 2
                continue
            if c in _ORGANIC_ONE:
                add_atom(Atom(element=ATOMIC_NUMBER[c]), c)
                i += 1
                continue
            raise SmilesParseError(f"unknown atom symbol '{c}'", i)

        if c.islower():
            if c in _AROMATIC_ORGANIC:
                add_atom(
                    Atom(element=ATOMIC_NUMBER[c.upper()], aromatic=True), c.upper()
                )
                i += 1
                continue
            raise SmilesParseError(f"unknown atom symbol '{c}'", i)

        if c in "-=#:":
            if pending is not None:
                raise SmilesParseError("bond symbol with no following atom", i)
            if prev is None:
                raise SmilesParseError("bond symbol with no preceding atom", i)
            pending = {
                "-": BondOrder.SINGLE,
                "=": BondOrder.DOUBLE,
                "#": BondOrder.TRIPLE,
                ":": BondOrder.AROMATIC,
            }[c]
            pending_pos = i
            i += 1
            continue

        if c in "/\\":
            # stereo bond markers are accepted as single bonds
            if pending is not None:
                raise SmilesParseError("bond symbol with no following atom", i)
            if prev is None:
                raise SmilesParseError("bond symbol with no preceding atom", i)
            pending = BondOrder.SINGLE
            pending_pos = i
            i += 1
            continue

        if c.isdigit() or c == "%":
            if prev is None:
                raise SmilesParseError("ring closure with no preceding atom", i)
            if c == "%":
                if i + 2 >= n or not text[i + 1 : i + 3].isdigit():
                    raise SmilesParseError("'%' needs two digits", i)
                number = int(text[i + 1 : i + 3])
                width = 3
            else:
                number = int(c)
                width = 1
            if number in rings and rings[number][0] == prev:
                raise SmilesParseError(f"duplicated ring-closure digit {number}", i)
            close_ring(number, i)
            i += width
            continue

        if c == "(":
            if prev is None:
                raise SmilesParseError("branch with no preceding atom", i)
            if pending is not None:
                raise SmilesParseError("bond symbol with no following atom", i)
            if stack and stack[-1][2] == len(mol.atoms):
                raise SmilesParseError("branch cannot start with a branch", i)
            stack.append((prev, i, len(mol.atoms)))
            i += 1
            continue

        if c == ")":
            if not stack:
                raise SmilesParseError("unmatched ')'", i)
            if pending is not None:
                raise SmilesParseError("bond symbol with no following atom", i)
            saved, _, atoms_at_open = stack.pop()
            if len(mol.atoms) == atoms_at_open:
                raise SmilesParseError("empty branch", i)
            prev = saved
            i += 1
            continue

        if c == ".":
            if pending is not None:
                raise SmilesParseError("bond symbol with no following atom", i)
            if prev is None:
                raise SmilesParseError("disconnection with no preceding atom", i)
            prev = None
            last_dot = i
            i += 1
            continue

        if c == "*":
            raise SmilesParseError("wildcard atom not supported", i)

        raise SmilesParseError(f"unexpected character {c!r}", i)

    if pending is not None:
        raise SmilesParseError("bond symbol with no following atom", pending_pos)
    if prev is None and mol.atoms:
        raise SmilesParseError("disconnection with no following atom", last_dot)
    if stack:
        raise SmilesParseError("unmatched '('", stack[-1][1])
    if rings:
        number, (_, _, position) = next(iter(rings.items()))
        raise SmilesParseError(f"ring closure {number} never closed", position)
    if not mol.atoms:
        raise SmilesParseError("no atoms", 0)

    mol.adjacency = [[] for _ in mol.atoms]
    for bi, bond in enumerate(mol.bonds):
        mol.adjacency[bond.a].append((bond.b, bi))
        mol.adjacency[bond.b].append((bond.a, bi))

    for idx, symbol in organic:
        bond_sum = sum(
            mol.bonds[bi].order.valence_units() for _, bi in mol.adjacency[idx]
        )
        atom = mol.atoms[idx]
        atom.explicit_h = implicit_hydrogens(symbol, atom.aromatic, bond_sum)

    return mol
