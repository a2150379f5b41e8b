"""Global versus local attention on a long chain.

A randomly initialised model is enough to see the difference: the local
variant cannot look past d bonds, the global one spreads weight over the
whole molecule and relies on path features to tell near from far.
"""

import numpy as np

from pagtn.model import PagtnConfig, featurize, forward, init_params
from pagtn.smiles import parse_smiles

np.set_printoptions(precision=3, suppress=True, linewidth=120)
chain = parse_smiles("CCCCCCCCCC")

for model in ("pagtn", "pagtn-local"):
    config = PagtnConfig.for_model(model, dim=16, layers=1, d=3)
    params = init_params(config, seed=0)
    record: list = []
    forward(featurize(chain, config.d), params, config, record=record)
    alpha = record[0]
    print(f"{model}: attention row of the terminal carbon")
    print(" ", alpha[0])
    print("  nonzero targets:", int(np.count_nonzero(alpha[0])))
