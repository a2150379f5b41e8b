import json
import re
import struct

import numpy as np
import pytest

from pagtn import io
from pagtn.cli import METRIC_ROW_RE, main, metric_row
from pagtn.model import PagtnConfig, featurize, init_params, predict
from pagtn.smiles import parse_smiles

CHAINS = ["C" * k for k in range(1, 9)] + ["CCO", "CCN", "c1ccccc1", "CC(=O)O", "OCCO", "CCCl", "C1CCCCC1", "CC#N",
                                           "c1ccncc1", "CCOCC", "NCC(=O)O", "CC(C)C"]


@pytest.fixture
def small_csv(tmp_path):
    path = tmp_path / "chains.csv"
    rows = ["smiles,n"] + [f"{s},{parse_smiles(s).n_atoms}" for s in CHAINS]
    path.write_text("\n".join(rows) + "\n")
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, out


def test_feature_container_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    mols = [(rng.normal(size=(n, 30)), rng.normal(size=(n, n, 25))) for n in (1, 3, 7)]
    mols[1][0][0, 0] = np.nextafter(1.0, 2.0)
    mols[2][1][0, 1, 2] = -0.0
    io.write_features(tmp_path / "f.bin", mols)
    back = io.read_features(tmp_path / "f.bin")
    assert len(back) == 3
    for (x, p), (x2, p2) in zip(mols, back):
        assert x.tobytes() == x2.tobytes() and p.tobytes() == p2.tobytes()


def test_feature_header_layout(tmp_path):
    f = featurize(parse_smiles("CO"), 3)
    io.write_features(tmp_path / "f.bin", [f])
    raw = (tmp_path / "f.bin").read_bytes()
    assert raw[:4] == b"PGTN"
    assert struct.unpack("<4I", raw[4:20]) == (1, 1, 2, 30)
    assert len(raw) == 24 + 8 * (2 * 30 + 4 * 25)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    config = PagtnConfig(dim=16, layers=2, heads=2)
    params = init_params(config, 3)
    ckpt = io.Checkpoint(config, params, np.array([1.25]), np.array([0.5]), 3, {"fold": 0})
    io.save_checkpoint(tmp_path / "m.ckpt", ckpt)
    back = io.load_checkpoint(tmp_path / "m.ckpt")
    assert back.config == config and back.seed == 3 and back.meta == {"fold": 0}
    assert all(back.params[k].tobytes() == params[k].tobytes() for k in params)
    g = parse_smiles("CC(=O)Nc1ccc(O)cc1")
    assert predict(g, back.params, back.config).tobytes() == predict(g, params, config).tobytes()


def test_checkpoint_version_and_layout_errors(tmp_path):
    config = PagtnConfig(dim=8, layers=1)
    io.save_checkpoint(tmp_path / "m.ckpt", io.Checkpoint(config, init_params(config), np.zeros(1), np.ones(1)))
    raw = bytearray((tmp_path / "m.ckpt").read_bytes())

    bad = bytearray(raw)
    bad[4:8] = struct.pack("<I", 99)
    (tmp_path / "v.ckpt").write_bytes(bad)
    with pytest.raises(io.FormatError, match="version"):
        io.load_checkpoint(tmp_path / "v.ckpt")

    (tmp_path / "t.ckpt").write_bytes(raw[:-5])
    with pytest.raises(io.FormatError, match="truncated"):
        io.load_checkpoint(tmp_path / "t.ckpt")

    (tmp_path / "m.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(io.FormatError, match="magic"):
        io.load_checkpoint(tmp_path / "m.bin")

    # a layout block that disagrees with this build
    n = struct.unpack("<I", raw[8:12])[0]
    meta = json.loads(raw[12 : 12 + n])
    meta["layout"]["F_n"] = 25
    blob = json.dumps(meta).encode()
    (tmp_path / "l.ckpt").write_bytes(bytes(raw[:8]) + struct.pack("<I", len(blob)) + blob + bytes(raw[12 + n :]))
    with pytest.raises(io.FormatError, match="layout"):
        io.load_checkpoint(tmp_path / "l.ckpt")


def test_cli_featurize(tmp_path, capsys):
    src = tmp_path / "two.csv"
    src.write_text("smiles\nCCO\nc1ccccc1\nC1CC\n")
    code, _ = run(capsys, "featurize", "--input", src, "--out", tmp_path / "f.bin", "--d", 2)
    assert code == 0
    mols = io.read_features(tmp_path / "f.bin")
    assert [x.shape[0] for x, _ in mols] == [3, 6]
    assert mols[0][1].shape[2] == 6 * 2 + 3 + 3


def test_cli_featurize_failures(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("smiles\n")
    assert run(capsys, "featurize", "--input", empty, "--out", tmp_path / "f.bin")[0] == 2
    assert run(capsys, "featurize", "--input", tmp_path / "nope.csv", "--out", tmp_path / "f.bin")[0] == 2
    with pytest.raises(SystemExit) as e:
        main(["featurize", "--input", str(empty)])
    assert e.value.code == 1


TRAIN = ["train", "--epochs", 3, "--dim", 8, "--layers", 1]


def test_cli_train_is_deterministic_and_row_parses(small_csv, capsys):
    code, a = run(capsys, *TRAIN, "--input", small_csv, "--seed", 7, "--folds", 2, "--name", "chains")
    assert code == 0
    _, b = run(capsys, *TRAIN, "--input", small_csv, "--seed", 7, "--folds", 2, "--name", "chains")
    assert a == b
    lines = a.strip().splitlines()
    assert [l.split()[:2] for l in lines[:2]] == [["fold", "0"], ["fold", "1"]]
    m = re.match(METRIC_ROW_RE, lines[-1])
    assert m and m["name"] == "chains" and m["metric"] == "rmse"
    folds = [float(l.split()[-1]) for l in lines[:2]]
    assert float(m["mean"]) == pytest.approx(np.mean(folds), abs=5e-4)


def test_metric_row_format():
    row = metric_row("esol", "rmse", [0.5, 0.6])
    assert row == "esol  rmse  0.550 ± 0.050"
    assert re.match(METRIC_ROW_RE, row)


def test_cli_eval_reproduces_test_metric(small_csv, tmp_path, capsys):
    ckpt = tmp_path / "m.ckpt"
    code, out = run(capsys, *TRAIN, "--input", small_csv, "--seed", 2, "--checkpoint-out", ckpt)
    assert code == 0
    trained = out.splitlines()[0].split()[-1]
    code, out = run(capsys, "eval", "--checkpoint", ckpt)
    assert code == 0
    assert out.split() == ["test", "rmse", trained]
    assert run(capsys, "eval", "--checkpoint", ckpt, "--d", 2)[0] == 2


def test_cli_debug_attention_local_vs_global(small_csv, tmp_path, capsys):
    dumps = {}
    for model in ("pagtn", "pagtn-local"):
        path = tmp_path / f"{model}.json"
        code, _ = run(capsys, *TRAIN, "--input", small_csv, "--model", model, "--debug-attention", path, "--debug-limit", 8)
        assert code == 0
        dumps[model] = json.loads(path.read_text())
    octane = [r for r in dumps["pagtn"] if r["smiles"] == "CCCCCCCC"][0]
    octane_local = [r for r in dumps["pagtn-local"] if r["smiles"] == "CCCCCCCC"][0]
    g, loc = np.array(octane["alpha"][0]), np.array(octane_local["alpha"][0])
    assert g[0, 7] > 0 and loc[0, 7] == 0
    assert np.count_nonzero(loc[0]) == 3 and np.count_nonzero(g[0]) == 7


def test_cli_bad_flag_combinations(small_csv, capsys):
    assert run(capsys, *TRAIN, "--input", small_csv, "--task", "reg", "--metric", "auc")[0] == 1
    assert run(capsys, *TRAIN, "--input", small_csv, "--dim", 9, "--heads", 2)[0] == 1
    assert run(capsys, *TRAIN, "--input", small_csv, "--targets", "missing")[0] == 2


def test_cli_gradcheck(capsys):
    code, out = run(capsys, "gradcheck", "--seed", 0)
    assert code == 0
    m = re.search(r"cases (\d+)\s+max rel err (\S+)", out)
    assert int(m[1]) >= 100 and float(m[2]) < 1e-4


def test_cli_ringtask_small(tmp_path, capsys):
    src = tmp_path / "rings.csv"
    src.write_text("smiles\n" + "\n".join(["c1ccc(cc1)-c1ccccc1", "c1ccc2ccccc2c1", "C1CC1C1CCCC1", "c1ccc2[nH]ccc2c1"] * 4) + "\n")
    code, out = run(capsys, "ringtask", "--input", src, "--epochs", 2, "--dim", 8, "--layers", 1,
                    "--pairs-out", tmp_path / "pairs.csv")
    assert code == 0 and out.startswith("ringtask  pagtn  molecules 16")
    assert (tmp_path / "pairs.csv").read_text().startswith("molecule_index,i,j,label")
