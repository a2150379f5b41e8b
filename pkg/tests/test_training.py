import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import external_csv
from pagtn.model import PagtnConfig, featurize, init_params
from pagtn.smiles import parse_smiles
from pagtn.training import (
    LCG64,
    DataError,
    Dataset,
    FoldSplit,
    Normalizer,
    Sample,
    TaskSpec,
    TrainConfig,
    compute_metric,
    load_csv,
    make_folds,
    roc_auc,
    train,
)

SMALL = "C CC CCC CCCC CCO CC(=O)O c1ccccc1 CCN C1CCCCC1 CCOC c1ccccc1O CC(C)C CCCCCC CCl OCCO CC#N C=CC=C NCC(=O)O c1ccncc1 CCCCCCCC".split()


def atom_count_dataset(smiles=SMALL):
    feats = [featurize(parse_smiles(s)) for s in smiles]
    return Dataset([Sample(s, [f.n_atoms]) for s, f in zip(smiles, feats)], feats)


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_skips_bad_rows(tmp_path):
    ds = load_csv(write(tmp_path, "smiles,y\nCCO,1.5\nC1CC,2.0\nc1ccccc1,-0.5\n"))
    assert len(ds) == 2 and ds.skipped == 1
    np.testing.assert_array_equal(ds.targets[:, 0], [1.5, -0.5])


def test_load_quoted_smiles_and_blanks(tmp_path):
    ds = load_csv(
        write(tmp_path, 'name,smiles,a,b\n"x, y","CC(C)O",1,\nz,CCN,,2\nw,CO,,\n'),
        target_columns=["a", "b"],
    )
    assert [s.smiles for s in ds.samples] == ["CC(C)O", "CCN"]
    assert np.isnan(ds.targets[0, 1]) and np.isnan(ds.targets[1, 0])
    assert ds.skipped == 1  # row with no target at all


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path / "missing.csv")
    with pytest.raises(DataError, match="column"):
        load_csv(write(tmp_path, "smi,y\nC,1\n"))
    with pytest.raises(DataError, match="column"):
        load_csv(write(tmp_path, "smiles,y\nC,1\n"), target_columns=["z"])
    with pytest.raises(DataError, match="no usable rows"):
        load_csv(write(tmp_path, "smiles,y\nXX,1\n"))


def test_esol_row_count():
    ds = load_csv(external_csv("ESOL.csv"), target_columns=["measured log solubility in mols per litre"])
    assert len(ds) == 1128 and ds.skipped == 0


def test_lcg_reference_values():
    # state_1 = C, state_2 = A*C + C (mod 2**64)
    g = LCG64(0)
    a, c, m = LCG64.A, LCG64.C, 2**64
    assert g.next_u32() == c >> 32
    assert g.next_u32() == ((a * c + c) % m) >> 32


def test_fold_sizes_and_determinism():
    (f,) = make_folds(10, n_folds=1)
    assert (len(f.train), len(f.valid), len(f.test)) == (8, 1, 1)
    assert make_folds(57, 3, base_seed=4) == make_folds(57, 3, base_seed=4)
    folds = make_folds(57, 3, base_seed=4)
    assert [f.seed for f in folds] == [4, 5, 6]
    assert folds[0].train != folds[1].train
    with pytest.raises(DataError):
        make_folds(9)


@settings(max_examples=100, deadline=None)
@given(st.integers(10, 2000), st.integers(0, 2**40))
def test_fold_union_property(n, seed):
    (f,) = make_folds(n, 1, seed)
    assert sorted(f.train + f.valid + f.test) == list(range(n))
    assert len(f.valid) == len(f.test) and abs(len(f.valid) - 0.1 * n) <= 1
    assert abs(len(f.train) - 0.8 * n) <= 1


def test_metrics():
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert roc_auc([0.2, 0.9], [0, 1]) == 1.0
    assert roc_auc([0.5, 0.5], [0, 1]) == 0.5
    y = np.array([1.0, -2.0, 3.5])
    assert compute_metric("mae", y, y) == 0.0 and compute_metric("rmse", y, y) == 0.0
    assert compute_metric("rmse", [0.0, 0.0], [3.0, -4.0]) == pytest.approx(np.sqrt(12.5))
    assert compute_metric("mae", [[0.0, 1.0]], [[2.0, np.nan]]) == 2.0
    with pytest.raises(DataError):
        roc_auc([0.1, 0.2], [1, 1])


def test_task_spec_validation():
    with pytest.raises(ValueError):
        TaskSpec(kind="regression", metric="auc")
    assert TaskSpec("classification", "auc").higher_is_better


def test_normalizer_round_trip():
    rng = np.random.default_rng(0)
    y = rng.normal(3, 7, size=(50, 3))
    norm = Normalizer.fit(y[:40])
    np.testing.assert_allclose(norm.inverse(norm.transform(y)), y, rtol=0, atol=1e-12)
    np.testing.assert_allclose(norm.mean, y[:40].mean(axis=0))


def full_fold(n):
    return FoldSplit(0, tuple(range(n)), tuple(range(n)), ())


def test_learns_atom_count():
    ds = atom_count_dataset()
    res = train(ds, TaskSpec(), PagtnConfig(dim=16, layers=2), full_fold(20), TrainConfig(epochs=200, patience=0, batch_size=4))
    assert res.valid_metric < 0.1
    assert res.test_metric is None


def test_zero_learning_rate_leaves_params():
    ds = atom_count_dataset()
    config = PagtnConfig(dim=8, layers=1)
    res = train(ds, TaskSpec(), config, full_fold(20), TrainConfig(epochs=4, lr=0.0, patience=0))
    init = init_params(config, 0)
    assert all(np.array_equal(res.params[k], init[k]) for k in init)
    metrics = {h["valid_metric"] for h in res.history}
    assert len(metrics) == 1
    losses = [h["train_loss"] for h in res.history]
    np.testing.assert_allclose(losses, losses[0], rtol=1e-12)


def test_training_is_deterministic():
    ds = atom_count_dataset()
    fold = make_folds(len(ds), 1, 3)[0]
    kw = dict(epochs=5, seed=11)
    a = train(ds, TaskSpec(), PagtnConfig(dim=8, layers=2), fold, TrainConfig(**kw))
    b = train(ds, TaskSpec(), PagtnConfig(dim=8, layers=2), fold, TrainConfig(**kw))
    assert a.history == b.history and a.test_metric == b.test_metric
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_overfit_loss_is_monotone():
    ds = atom_count_dataset(SMALL[:5])
    fold = FoldSplit(0, tuple(range(5)), (), ())
    res = train(ds, TaskSpec(), PagtnConfig(dim=16, layers=2), fold, TrainConfig(epochs=100, batch_size=5, patience=0))
    losses = [h["train_loss"] for h in res.history]
    assert losses[-1] < 0.1 * losses[0]
    for prev, cur in zip(losses[10:], losses[11:]):
        assert cur <= prev * 1.05


def test_best_checkpoint_and_single_test_eval():
    ds = atom_count_dataset()
    fold = make_folds(len(ds), 1, 0)[0]
    res = train(ds, TaskSpec(), PagtnConfig(dim=8, layers=1), fold, TrainConfig(epochs=15, patience=3))
    best = min(h["valid_metric"] for h in res.history)
    assert res.valid_metric == best
    assert res.history[res.best_epoch - 1]["valid_metric"] == best
    assert len(res.history) <= res.best_epoch + 3


def test_classification_runs():
    ds = atom_count_dataset()
    for s in ds.samples:
        s.targets = (s.targets > 5).astype(float)
    res = train(ds, TaskSpec("classification", "auc"), PagtnConfig(dim=8, layers=1), full_fold(20), TrainConfig(epochs=30, lr=1e-2))
    assert res.valid_metric > 0.9
    assert res.normalizer.mean == 0 and res.normalizer.std == 1


def test_empty_train_split():
    ds = atom_count_dataset()
    with pytest.raises(DataError):
        train(ds, TaskSpec(), PagtnConfig(dim=8, layers=1), FoldSplit(0, (), (0,), (1,)))
