import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pagtn.molgraph import perceive_rings
from pagtn.smiles import ELEMENTS, NUM_NODE_FEATURES, SmilesError, node_features, parse_smiles

# block boundaries of the node feature vector
ELEM = slice(0, 12)
DEG = slice(12, 18)
CHG = slice(18, 23)
HYD = slice(23, 28)
AROM, RING = 28, 29


def test_ethane():
    g = parse_smiles("CC")
    assert [a.element for a in g.atoms] == ["C", "C"]
    assert len(g.bonds) == 1 and g.bonds[0].order == "single"
    assert [a.implicit_h for a in g.atoms] == [3, 3]


def test_benzene():
    g = parse_smiles("c1ccccc1")
    assert len(g.atoms) == 6 and all(a.is_aromatic and a.element == "C" for a in g.atoms)
    assert len(g.bonds) == 6 and all(b.order == "aromatic" for b in g.bonds)
    assert all(a.degree == 2 and a.implicit_h == 1 for a in g.atoms)


@pytest.mark.parametrize(
    "smiles, message",
    [
        ("C1CC", "unclosed ring index 1"),
        ("CC(C", r"unmatched '\('"),
        ("CC)C", r"unmatched '\)'"),
        ("CXC", "unknown atom symbol"),
        ("C[Xx]C", "unknown atom symbol"),
        ("C(=O)(=O)C", "valence violation"),
        ("FC(F)(F)(F)F", "valence violation"),
        ("CC..C", "empty component"),
        (".C", "empty component"),
        ("C.", "empty component"),
        ("F/C=C/F", "directional bonds"),
        ("N[C@@H](C)C(=O)O", "stereochemistry"),
        ("[13CH4]", "isotopes"),
        ("C*C", "wildcard"),
        ("C==C", "consecutive bond"),
    ],
)
def test_parse_errors(smiles, message):
    with pytest.raises(SmilesError, match=message):
        parse_smiles(smiles)


def test_empty_and_non_ascii():
    with pytest.raises(SmilesError):
        parse_smiles("")
    with pytest.raises(SmilesError):
        parse_smiles("Cé")


def test_stereo_ignore_drops_marks():
    plain = parse_smiles("NC(C)C(=O)O")
    chiral = parse_smiles("N[C@@H](C)C(=O)O", stereo="ignore")
    assert [(a.element, a.implicit_h) for a in chiral.atoms] == [(a.element, a.implicit_h) for a in plain.atoms]
    assert parse_smiles("F/C=C/F", stereo="ignore").bonds[1].order == "double"


def test_golden_corpus(corpus):
    for row in corpus:
        g = parse_smiles(row["smiles"])
        assert g.n_atoms == int(row["n_atoms"]), row["smiles"]
        assert len(g.bonds) == int(row["n_bonds"]), row["smiles"]
        assert len(perceive_rings(g).rings) == int(row["n_rings"]), row["smiles"]
        assert len(g.components()) == int(row["n_components"]), row["smiles"]


@pytest.mark.parametrize(
    "smiles, hydrogens",
    [
        ("C", [4]),
        ("CCO", [3, 2, 1]),
        ("C=O", [2, 0]),
        ("C#N", [1, 0]),
        ("c1ccncc1", [1, 1, 1, 0, 1, 1]),
        ("c1cc[nH]c1", [1, 1, 1, 1, 1]),
        ("c1ccc2ccccc2c1", [1, 1, 1, 0, 1, 1, 1, 1, 0, 1]),
        ("CS(=O)(=O)N", [3, 0, 0, 0, 2]),
        ("O=[N+]([O-])C", [0, 0, 0, 3]),
        ("c1ccsc1", [1, 1, 1, 0, 1]),
        ("[NH4+]", [4]),
    ],
)
def test_implicit_hydrogens(smiles, hydrogens):
    assert [a.implicit_h for a in parse_smiles(smiles).atoms] == hydrogens


def test_charges_and_brackets():
    g = parse_smiles("[O-]C(=O)C.[Na+].[Fe+3].[O--]")
    assert [a.formal_charge for a in g.atoms] == [-1, 0, 0, 0, 1, 3, -2]
    assert g.atoms[5].element == "Fe"


def test_ring_closure_bond_orders():
    g = parse_smiles("C1CCCC=1")
    assert g.bond_between(0, 4).order == "double"
    # aromatic closure between aromatic atoms defaults to aromatic
    assert parse_smiles("c1ccccc1").bond_between(0, 5).order == "aromatic"
    with pytest.raises(SmilesError, match="conflicting"):
        parse_smiles("C=1CCCC#1")


def test_biphenyl_link_is_single_and_not_in_ring():
    for smi in ("c1ccccc1-c1ccccc1", "c1ccccc1c1ccccc1"):
        link = parse_smiles(smi).bond_between(5, 6)
        assert link.order == "single" and not link.in_ring


def test_conjugation_rule():
    g = parse_smiles("C=CC=C")
    assert [b.is_conjugated for b in g.bonds] == [False, True, False]
    assert not parse_smiles("CCC=C").bond_between(0, 1).is_conjugated
    assert all(b.is_conjugated for b in parse_smiles("c1ccccc1").bonds)
    # aryl-carbonyl single bond joins two unsaturated atoms
    assert parse_smiles("O=Cc1ccccc1").bond_between(1, 2).is_conjugated


def test_degree_and_adjacency_consistent(corpus):
    for row in corpus:
        g = parse_smiles(row["smiles"])
        for i, atom in enumerate(g.atoms):
            assert atom.degree == len(g.adjacency[i]) == sum(i in b.endpoints for b in g.bonds)
            for j in g.adjacency[i]:
                assert i in g.adjacency[j] and g.bond_between(i, j) is not None


def test_methane_features():
    x = node_features(parse_smiles("C"))
    assert x.shape == (1, NUM_NODE_FEATURES)
    expect = np.zeros(NUM_NODE_FEATURES)
    expect[ELEMENTS.index("C")] = 1
    expect[DEG.start + 0] = 1
    expect[CHG.start + 2] = 1
    expect[HYD.start + 4] = 1
    np.testing.assert_array_equal(x[0], expect)


def test_benzene_carbon_features():
    x = node_features(parse_smiles("c1ccccc1"))
    assert np.all(x[:, AROM] == 1) and np.all(x[:, RING] == 1)
    assert np.all(x[:, DEG.start + 2] == 1)


def test_feature_clamping():
    x = node_features(parse_smiles("[Fe+3].[CH4].[Se]"))
    assert x[0, CHG.start + 4] == 1  # +3 clamps to +2
    assert x[0, ELEMENTS.index("other")] == 1
    assert x[2, ELEMENTS.index("other")] == 1


def test_feature_blocks_one_hot_over_corpus(corpus):
    for row in corpus:
        x = node_features(parse_smiles(row["smiles"]))
        for block in (ELEM, DEG, CHG, HYD):
            np.testing.assert_array_equal(x[:, block].sum(axis=1), 1.0)
        assert set(np.unique(x[:, [AROM, RING]])) <= {0.0, 1.0}


def test_parsing_is_deterministic(corpus):
    for row in corpus:
        a, b = parse_smiles(row["smiles"]), parse_smiles(row["smiles"])
        assert a == b
        np.testing.assert_array_equal(node_features(a), node_features(b))


FRAGMENTS = ["C", "CC", "O", "c1ccccc1", "[Na+]", "C1CC1", "CC(=O)O", "[Cl-]", "N#N", "c1ccc2ccccc2c1"]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(FRAGMENTS), min_size=1, max_size=6))
def test_component_count_is_dot_count_plus_one(parts):
    smiles = ".".join(parts)
    g = parse_smiles(smiles)
    assert len(g.components()) == smiles.count(".") + 1
