"""From a SMILES string to the tensors the model reads.

Run: python demos/parse_and_featurize.py "O=C(O)c1ccccc1O"
"""

import sys

import numpy as np

from pagtn.molgraph import all_pairs_shortest, path_feature_layout, path_features, perceive_rings
from pagtn.smiles import ELEMENTS, node_features, parse_smiles

smiles = sys.argv[1] if len(sys.argv) > 1 else "O=C(O)c1ccccc1O"
g = parse_smiles(smiles)
print(f"{smiles}: {g.n_atoms} heavy atoms, {len(g.bonds)} bonds")
for k, a in enumerate(g.atoms):
    flag = " aromatic" if a.is_aromatic else ""
    print(f"  atom {k:2d} {a.element:2s} degree {a.degree} H {a.implicit_h} charge {a.formal_charge:+d}{flag}")

rings = perceive_rings(g)
print("smallest rings:", [list(r) for r in rings.rings])

# Each atom becomes a 30-wide vector of one-hot blocks.
x = node_features(g)
print("node features:", x.shape, "element of atom 0 =", ELEMENTS[int(np.argmax(x[0, :12]))])

# Every ordered pair (i, j) gets bond features along the shortest path,
# a distance one-hot and same-ring flags.
d = 3
sp = all_pairs_shortest(g)
pf = path_features(g, rings, d, sp)
layout = path_feature_layout(d)
print("path features:", pf.p.shape, "blocks", layout)

i, j = 0, g.n_atoms - 1
print(f"pair ({i}, {j}): path {sp.path(i, j)}, distance {sp.dist[i, j]}")
print("  distance bins:", pf.p[i, j, slice(*layout["distance"])])
print("  ring flags   :", pf.p[i, j, slice(*layout["rings"])])
