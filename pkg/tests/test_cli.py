import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from evorecon import genome as gn
from evorecon import kspace as ks
from evorecon import metrics as me
from evorecon import tensor_engine as te
from evorecon.cli import load_config, main, read_genome_file

from conftest import small_genome

GOLDEN = Path(__file__).parent / "golden"

TINY_CONFIG = """\
[search]
population_size = 2
generations = 1

[train]
max_epochs = 2
patience = 1

[data]
directory = data
count = 20
size = 8
"""


def cli(tmp_path, *args):
    return main(["--workdir", str(tmp_path), *args])


@pytest.fixture
def tiny_data(tmp_path):
    assert cli(tmp_path, "gen-data", "--count", "20", "--size", "8", "--out", "data") == 0
    return tmp_path / "data"


def test_decode_matches_golden(tmp_path, capsys):
    (tmp_path / "g.txt").write_text(gn.to_text(small_genome()))
    assert cli(tmp_path, "decode", "--genome", "g.txt", "--size", "32x32", "--seed", "0",
               "--out", "g.graph", "--kv") == 0
    assert (tmp_path / "g.graph").read_text() == (GOLDEN / "minimal.graph").read_text()
    assert capsys.readouterr().out == (GOLDEN / "minimal.summary").read_text()


def test_decode_table_to_stdout(tmp_path, capsys):
    (tmp_path / "g.txt").write_text("# decode_seed = 0\n" + gn.to_text(small_genome()))
    assert cli(tmp_path, "decode", "--genome", "g.txt") == 0
    out = capsys.readouterr().out
    assert out.startswith((GOLDEN / "minimal.graph").read_text())
    assert "flops_G" in out


def test_mask_printout(tmp_path, capsys):
    assert cli(tmp_path, "mask", "--rows", "256", "--R", "4", "--center", "0.04",
               "--out", "m.etns") == 0
    out = capsys.readouterr().out
    assert "rows 256 kept 72" in out
    assert "effective acceleration 3.5556 (3.6X)" in out
    keep = te.read_tensor(tmp_path / "m.etns")
    assert keep.dtype == np.uint8 and int(keep.sum()) == 72


def test_unknown_flag_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        cli(tmp_path, "mask", "--rows", "16", "--bogus")
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2


def test_domain_errors_exit_one(tmp_path, capsys):
    (tmp_path / "bad.txt").write_text(gn.to_text(small_genome()).replace("g12 = 4", "g12 = 11"))
    assert cli(tmp_path, "decode", "--genome", "bad.txt") == 1
    assert cli(tmp_path, "decode", "--genome", "missing.txt") == 1
    assert cli(tmp_path, "mask", "--rows", "16", "--pattern", "SPIRAL") == 1
    (tmp_path / "c.ini").write_text("[search]\nbogus = 1\n")
    assert cli(tmp_path, "search", "--config", "c.ini") == 1
    assert "error:" in capsys.readouterr().err


def test_evaluate_identity_reproduces_aliased_metrics(tmp_path, tiny_data, capsys):
    capsys.readouterr()
    assert cli(tmp_path, "evaluate", "--data", "data", "--identity", "--csv", "id.csv") == 0
    table = capsys.readouterr().out.splitlines()
    assert table[1].split()[1:] == table[2].split()[1:]
    ds = ks.load_dataset(tiny_data)
    x, y = ds.arrays("test", np.float64)
    direct = me.evaluate_pairs(y, x)
    assert (tmp_path / "id.csv").read_text() == me.report_csv(direct)


def test_train_reconstruct_evaluate(tmp_path, tiny_data, capsys):
    (tmp_path / "c.ini").write_text(TINY_CONFIG)
    (tmp_path / "g.txt").write_text(gn.to_text(small_genome(g12=2)))
    assert cli(tmp_path, "train", "--genome", "g.txt", "--data", "data", "--config", "c.ini",
               "--out", "run") == 0
    hist = (tmp_path / "run" / "history.csv").read_text().splitlines()
    assert hist[0] == "epoch,train_mse,val_mse" and len(hist) == 3
    assert cli(tmp_path, "reconstruct", "--params", "run/params.npz", "--genome", "g.txt",
               "--input", "data/test_input.etns", "--out", "rec.etns") == 0
    rec = te.read_tensor(tmp_path / "rec.etns")
    assert rec.shape == (3, 8, 8)
    assert cli(tmp_path, "evaluate", "--params", "run/params.npz", "--genome", "g.txt",
               "--data", "data") == 0
    assert "Model" in capsys.readouterr().out


def test_search_writes_artifacts_and_resumes(tmp_path, capsys):
    (tmp_path / "c.ini").write_text(TINY_CONFIG)
    assert cli(tmp_path, "search", "--config", "c.ini", "--out", "s") == 0
    first = capsys.readouterr().out
    out = tmp_path / "s"
    for name in ("best_genome.txt", "best_params.npz", "best_graph.txt", "lineage.tsv",
                 "history.csv", "checkpoint.evck"):
        assert (out / name).exists(), name
    genome, seed = read_genome_file(out / "best_genome.txt")
    assert seed is not None
    assert (tmp_path / "data" / ks.MANIFEST).exists()
    # resuming a finished run only rebuilds the outputs
    assert cli(tmp_path, "search", "--config", "c.ini", "--out", "s", "--resume") == 0
    again = capsys.readouterr().out
    assert first.splitlines()[-1] == again.splitlines()[-1]


def test_config_defaults():
    search, train, data = load_config()
    assert (search.population_size, search.generations, search.tournament_size) == (50, 30, 3)
    assert (search.crossover_rate, search.mutation_rate) == (0.9, 0.1)
    assert (train.max_epochs, train.patience) == (1000, 20)
    assert (data["reduction"], data["center"], data["fractions"]) == ("4", "0.04", "0.75,0.10,0.15")


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "evorecon", "--help"], capture_output=True,
                          text=True)
    assert proc.returncode == 0
    for cmd in ("gen-data", "mask", "search", "decode", "train", "reconstruct", "evaluate"):
        assert cmd in proc.stdout
