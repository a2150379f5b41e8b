"""SMILES subset parser and atom featurization.

Supported grammar: organic-subset atoms, aromatic lowercase atoms, bracket
atoms with H count and charge, bond symbols ``- = # :``, branches, ring
closures (single digit and ``%nn``) and dot-separated components.
Stereo marks, isotopes and wildcards are rejected unless ``stereo="ignore"``
is passed, in which case ``@``, ``/`` and ``\\`` are dropped.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Atom",
    "Bond",
    "MolGraph",
    "SmilesError",
    "parse_smiles",
    "node_features",
    "ELEMENTS",
    "BOND_ORDERS",
    "NUM_NODE_FEATURES",
]

ELEMENTS = ("C", "N", "O", "S", "F", "Cl", "Br", "I", "P", "B", "Si", "other")
BOND_ORDERS = ("single", "double", "triple", "aromatic")

# allowed valences for the organic subset; the first entry is the default
_VALENCES = {
    "B": (3,),
    "C": (4,),
    "N": (3, 5),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1, 3, 5, 7),
    "Br": (1, 3, 5, 7),
    "I": (1, 3, 5, 7),
    "Si": (4,),
}
_ORGANIC = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
_AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
_AROMATIC_BRACKET = ("se", "as", "te", "si", "b", "c", "n", "o", "p", "s")

_PERIODIC = frozenset(
    """H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co
    Ni Cu Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te
    I Xe Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir
    Pt Au Hg Tl Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No
    Lr Rf Db Sg Bh Hs Mt Ds Rg Cn Nh Fl Mc Lv Ts Og""".split()
)

_BRACKET_RE = re.compile(
    r"^(?P<iso>\d+)?"
    r"(?P<sym>[A-Z][a-z]?|se|as|te|si|[bcnops])"
    r"(?P<chiral>@@?)?"
    r"(?P<h>H\d*)?"
    r"(?P<charge>\+\+|--|[+-]\d*)?"
    r"(?::(?P<cls>\d+))?$"
)

_BOND_SYMBOLS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic"}
_BOND_VALENCE = {"single": 1.0, "double": 2.0, "triple": 3.0, "aromatic": 1.5}


class SmilesError(ValueError):
    """Raised for any SMILES the parser rejects."""


@dataclass(frozen=True)
class Atom:
    element: str
    formal_charge: int = 0
    is_aromatic: bool = False
    implicit_h: int = 0
    degree: int = 0
    in_ring: bool = False
    symbol: str = ""


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: str = "single"
    is_conjugated: bool = False
    in_ring: bool = False

    @property
    def endpoints(self) -> tuple[int, int]:
        return (self.begin, self.end)

    def other(self, atom: int) -> int:
        return self.end if atom == self.begin else self.begin


@dataclass(frozen=True)
class MolGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    adjacency: tuple[tuple[int, ...], ...]
    smiles: str = ""

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def bond_between(self, i: int, j: int) -> Bond | None:
        idx = self.bond_index.get((min(i, j), max(i, j)))
        return None if idx is None else self.bonds[idx]

    @property
    def bond_index(self) -> dict[tuple[int, int], int]:
        # cached lazily; the dataclass is frozen so go through __dict__
        cache = self.__dict__.get("_bond_index")
        if cache is None:
            cache = {(min(b.begin, b.end), max(b.begin, b.end)): k for k, b in enumerate(self.bonds)}
            object.__setattr__(self, "_bond_index", cache)
        return cache

    def components(self) -> list[list[int]]:
        """Connected components as sorted atom index lists."""
        seen = [False] * self.n_atoms
        comps = []
        for start in range(self.n_atoms):
            if seen[start]:
                continue
            stack, comp = [start], []
            seen[start] = True
            while stack:
                u = stack.pop()
                comp.append(u)
                for v in self.adjacency[u]:
                    if not seen[v]:
                        seen[v] = True
                        stack.append(v)
            comps.append(sorted(comp))
        return comps


@dataclass
class _RawAtom:
    symbol: str
    element: str
    aromatic: bool
    charge: int = 0
    bracket: bool = False
    hcount: int = 0


def _tokenize_bracket(body: str, pos: int, stereo: str) -> _RawAtom:
    m = _BRACKET_RE.match(body)
    if m is None:
        raise SmilesError(f"malformed bracket atom [{body}] at position {pos}")
    if m.group("iso"):
        raise SmilesError(f"isotopes are not supported: [{body}]")
    if m.group("chiral") and stereo != "ignore":
        raise SmilesError(f"stereochemistry is not supported: [{body}]")
    sym = m.group("sym")
    aromatic = sym.islower()
    if aromatic:
        if sym not in _AROMATIC_BRACKET:
            raise SmilesError(f"unknown atom symbol [{body}]")
        element = sym.capitalize()
    else:
        if sym not in _PERIODIC:
            raise SmilesError(f"unknown atom symbol [{body}]")
        element = sym
    h = m.group("h")
    hcount = 0 if not h else (int(h[1:]) if len(h) > 1 else 1)
    ch = m.group("charge")
    charge = 0
    if ch:
        if ch in ("++", "--"):
            charge = 2 if ch == "++" else -2
        else:
            mag = int(ch[1:]) if len(ch) > 1 else 1
            charge = mag if ch[0] == "+" else -mag
    return _RawAtom(sym, element, aromatic, charge, True, hcount)


def _feature_element(element: str) -> str:
    return element if element in ELEMENTS else "other"


def parse_smiles(smiles: str, stereo: str = "error") -> MolGraph:
    """Parse ``smiles`` into a :class:`MolGraph`.

    ``stereo`` is ``"error"`` (default) or ``"ignore"``; the latter drops
    chirality and directional bond marks, which no feature consumes.
    """
    if stereo not in ("error", "ignore"):
        raise ValueError(f"stereo must be 'error' or 'ignore', got {stereo!r}")
    if not smiles or not smiles.isascii():
        raise SmilesError("input must be a non-empty ASCII string")
    smiles = smiles.strip()
    if not smiles:
        raise SmilesError("input must be a non-empty ASCII string")

    raw: list[_RawAtom] = []
    edges: dict[tuple[int, int], str | None] = {}
    branch_stack: list[int] = []
    ring_open: dict[int, tuple[int, str | None]] = {}
    prev: int | None = None
    pending_bond: str | None = None
    component_atoms = 0

    def add_edge(a: int, b: int, order: str | None) -> None:
        if a == b:
            raise SmilesError("self-loop bond")
        key = (min(a, b), max(a, b))
        if key in edges:
            raise SmilesError(f"duplicate bond between atoms {a} and {b}")
        edges[key] = order

    def add_atom(atom: _RawAtom) -> None:
        nonlocal prev, pending_bond, component_atoms
        idx = len(raw)
        raw.append(atom)
        if prev is not None:
            add_edge(prev, idx, pending_bond)
        elif pending_bond is not None:
            raise SmilesError("bond symbol without a preceding atom")
        pending_bond = None
        prev = idx
        component_atoms += 1

    i, n = 0, len(smiles)
    while i < n:
        ch = smiles[i]
        if ch == "[":
            close = smiles.find("]", i)
            if close < 0:
                raise SmilesError(f"unclosed bracket atom at position {i}")
            add_atom(_tokenize_bracket(smiles[i + 1 : close], i, stereo))
            i = close + 1
            continue
        two = smiles[i : i + 2]
        if two in ("Cl", "Br"):
            add_atom(_RawAtom(two, two, False))
            i += 2
            continue
        if ch in _ORGANIC:
            add_atom(_RawAtom(ch, ch, False))
            i += 1
            continue
        if ch in _AROMATIC_ORGANIC:
            add_atom(_RawAtom(ch, ch.upper(), True))
            i += 1
            continue
        if ch in _BOND_SYMBOLS:
            if pending_bond is not None:
                raise SmilesError(f"two consecutive bond symbols at position {i}")
            pending_bond = _BOND_SYMBOLS[ch]
            i += 1
            continue
        if ch in "/\\":
            if stereo != "ignore":
                raise SmilesError("directional bonds (/ \\) are not supported")
            if pending_bond is not None:
                raise SmilesError(f"two consecutive bond symbols at position {i}")
            pending_bond = "single"
            i += 1
            continue
        if ch == "(":
            if prev is None:
                raise SmilesError(f"branch opened without a preceding atom at position {i}")
            if pending_bond is not None:
                raise SmilesError(f"bond symbol before branch at position {i}")
            branch_stack.append(prev)
            i += 1
            continue
        if ch == ")":
            if not branch_stack:
                raise SmilesError(f"unmatched ')' at position {i}")
            if pending_bond is not None:
                raise SmilesError(f"dangling bond symbol at position {i}")
            prev = branch_stack.pop()
            i += 1
            continue
        if ch.isdigit() or ch == "%":
            if ch == "%":
                digits = smiles[i + 1 : i + 3]
                if len(digits) != 2 or not digits.isdigit():
                    raise SmilesError(f"malformed %nn ring closure at position {i}")
                label = int(digits)
                i += 3
            else:
                label = int(ch)
                i += 1
            if prev is None:
                raise SmilesError("ring closure without a preceding atom")
            if label in ring_open:
                other, order = ring_open.pop(label)
                if order is not None and pending_bond is not None and order != pending_bond:
                    raise SmilesError(f"conflicting bond symbols on ring closure {label}")
                add_edge(other, prev, pending_bond if pending_bond is not None else order)
            else:
                ring_open[label] = (prev, pending_bond)
            pending_bond = None
            continue
        if ch == ".":
            if component_atoms == 0 or pending_bond is not None:
                raise SmilesError(f"empty component before '.' at position {i}")
            if branch_stack:
                raise SmilesError("unmatched '(' before '.'")
            prev = None
            component_atoms = 0
            i += 1
            continue
        if ch == "*":
            raise SmilesError("wildcard atoms are not supported")
        if ch == "$":
            raise SmilesError("quadruple bonds are not supported")
        raise SmilesError(f"unknown atom symbol {ch!r} at position {i}")

    if ring_open:
        raise SmilesError(f"unclosed ring index {sorted(ring_open)[0]}")
    if branch_stack:
        raise SmilesError("unmatched '('")
    if pending_bond is not None:
        raise SmilesError("dangling bond symbol at end of input")
    if component_atoms == 0:
        raise SmilesError("empty component at end of input")

    return _build_graph(smiles, raw, edges)


def _build_graph(smiles: str, raw: list[_RawAtom], edges: dict[tuple[int, int], str | None]) -> MolGraph:
    from .molgraph import cyclic_edges

    n = len(raw)
    keys = sorted(edges)
    orders = []
    for a, b in keys:
        order = edges[(a, b)]
        if order is None:
            order = "aromatic" if raw[a].aromatic and raw[b].aromatic else "single"
        orders.append(order)

    adjacency = [[] for _ in range(n)]
    for a, b in keys:
        adjacency[a].append(b)
        adjacency[b].append(a)
    adjacency = [sorted(nb) for nb in adjacency]
    ring_edges = cyclic_edges(n, adjacency)
    in_ring = [key in ring_edges for key in keys]

    # implicit aromatic bonds that turn out acyclic (biphenyl-style links) are single
    for k, (a, b) in enumerate(keys):
        if orders[k] == "aromatic" and edges[(a, b)] is None and not in_ring[k]:
            orders[k] = "single"

    incident: list[list[int]] = [[] for _ in range(n)]
    for k, (a, b) in enumerate(keys):
        incident[a].append(k)
        incident[b].append(k)

    unsaturated = [any(orders[k] != "single" for k in incident[a]) for a in range(n)]
    bonds = []
    for k, (a, b) in enumerate(keys):
        conj = orders[k] == "aromatic" or (orders[k] == "single" and unsaturated[a] and unsaturated[b])
        bonds.append(Bond(a, b, orders[k], conj, in_ring[k]))

    atoms = []
    for a, r in enumerate(raw):
        bond_orders = [orders[k] for k in incident[a]]
        h = _implicit_h(r, bond_orders, a)
        atoms.append(
            Atom(
                element=r.element,
                formal_charge=r.charge,
                is_aromatic=r.aromatic,
                implicit_h=h,
                degree=len(incident[a]),
                in_ring=any(in_ring[k] for k in incident[a]),
                symbol=r.symbol,
            )
        )
    return MolGraph(tuple(atoms), tuple(bonds), tuple(tuple(nb) for nb in adjacency), smiles)


def _implicit_h(r: _RawAtom, bond_orders: list[str], index: int) -> int:
    # lower bound on bond-order sum: aromatic bonds count as 1
    n_arom = sum(o == "aromatic" for o in bond_orders)
    minimal = n_arom + sum(_BOND_VALENCE[o] for o in bond_orders if o != "aromatic")
    valences = _VALENCES.get(r.element)

    if r.bracket:
        if valences is not None and minimal + r.hcount > max(valences) + abs(r.charge):
            raise SmilesError(f"valence violation on atom {index} ({r.symbol})")
        return r.hcount

    if minimal > max(valences):
        raise SmilesError(f"valence violation on atom {index} ({r.symbol})")
    total = math.floor(sum(_BOND_VALENCE[o] for o in bond_orders))
    if r.aromatic:
        return max(0, valences[0] - total)
    for v in valences:
        if v >= total:
            return v - total
    return 0


NUM_NODE_FEATURES = len(ELEMENTS) + 6 + 5 + 5 + 2


def node_features(g: MolGraph) -> np.ndarray:
    """Per-atom feature matrix of shape ``(n_atoms, NUM_NODE_FEATURES)``.

    Blocks: element one-hot, degree one-hot (0-5), formal charge one-hot
    (-2..+2), hydrogen count one-hot (0-4), aromatic flag, in-ring flag.
    Degree, charge and H counts clamp into the end bins.
    """
    x = np.zeros((g.n_atoms, NUM_NODE_FEATURES))
    o_deg = len(ELEMENTS)
    o_chg = o_deg + 6
    o_h = o_chg + 5
    o_flags = o_h + 5
    for i, atom in enumerate(g.atoms):
        x[i, ELEMENTS.index(_feature_element(atom.element))] = 1.0
        x[i, o_deg + min(atom.degree, 5)] = 1.0
        x[i, o_chg + max(-2, min(2, atom.formal_charge)) + 2] = 1.0
        x[i, o_h + min(atom.implicit_h, 4)] = 1.0
        x[i, o_flags] = float(atom.is_aromatic)
        x[i, o_flags + 1] = float(atom.in_ring)
    return x
