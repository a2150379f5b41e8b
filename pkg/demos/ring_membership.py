"""Can the model tell whether two ring atoms share a ring?

Pairs are sampled from molecules with at least two rings. The pair is
classified from h_i + h_j, so automorphic atoms in different rings stay
indistinguishable; the example at the end shows such a pair.

Run: python demos/ring_membership.py /root/data/Lipophilicity.csv [molecules] [epochs]
"""

import csv
import sys
from dataclasses import replace

import numpy as np

from pagtn.model import PagtnConfig, featurize, init_params, node_embeddings
from pagtn.ring_task import generate_ring_dataset, init_pair_head, train_pair_classifier
from pagtn.smiles import SmilesError, parse_smiles
from pagtn.training import TrainConfig

path = sys.argv[1] if len(sys.argv) > 1 else "/root/data/Lipophilicity.csv"
n_mols = int(sys.argv[2]) if len(sys.argv) > 2 else 300
epochs = int(sys.argv[3]) if len(sys.argv) > 3 else 10

graphs = []
with open(path) as fh:
    for row in csv.DictReader(fh):
        try:
            graphs.append(parse_smiles(row["smiles"], stereo="ignore"))
        except SmilesError:
            pass

pairs = generate_ring_dataset(graphs, seed=0)
ids = sorted({s.molecule for s in pairs})[:n_mols]
remap = {m: k for k, m in enumerate(ids)}
pairs = [replace(s, molecule=remap[s.molecule]) for s in pairs if s.molecule in remap]
feats = [featurize(graphs[m], 3) for m in ids]
print(f"{len(ids)} molecules, {len(pairs)} pairs, {sum(s.label for s in pairs)} same-ring")

for model in ("pagtn", "gcn"):
    res = train_pair_classifier(feats, pairs, PagtnConfig.for_model(model, layers=3), TrainConfig(epochs=epochs))
    print(f"{model:6s} test accuracy {100 * res.accuracy:.1f}  AUC {100 * res.auc:.1f}")

# Biphenyl: the para carbons 0 and 9 are swapped by a symmetry of the graph.
config = PagtnConfig(dim=16, layers=2)
params = {**init_params(config, 0), **init_pair_head(config, 0)}
h = node_embeddings(featurize(parse_smiles("c1ccc(cc1)-c1ccccc1"), 3), params, config).value
print("biphenyl para carbons share an embedding:", np.allclose(h[0], h[9]))
