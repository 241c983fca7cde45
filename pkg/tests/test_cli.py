"""Golden-output tests for every CLI command.

Set CNNCOMM_UPDATE_GOLDEN=1 to rewrite the files under tests/golden/.
"""

import csv
import io
import os
from pathlib import Path

import pytest

from cnncomm import cli
from cnncomm.bounds import serial_lower_bound
from cnncomm.exact import fmt6
from cnncomm.model import SerialMachine
from cnncomm.presets import load_preset

HERE = Path(__file__).parent
DATA = HERE / "data"
GOLDEN = HERE / "golden"
UPDATE = os.environ.get("CNNCOMM_UPDATE_GOLDEN") == "1"


def run(argv, capsys):
    out = io.StringIO()
    code = cli.main([str(a) for a in argv], out=out)
    return code, out.getvalue(), capsys.readouterr().err


GOLDEN_CASES = {
    "bounds_conv1": ["bounds", "--preset", "resnet50-conv1", "--m-words", 131072],
    "bounds_parallel": ["bounds", "--preset", "resnet50-conv2x", "--m-words", 2**20,
                        "--procs", 2**18],
    "tile_serial": ["tile", "--preset", "resnet50-conv2x", "--m-words", 131072],
    "tile_parallel": ["tile", "--preset", "resnet50-conv2x", "--m-words", 2**20, "--procs", 4096],
    "tile_two_buffer": ["tile", "--preset", "resnet50-conv5x", "--scratchpad", 262144,
                        "--accumulator", 16384, "--no-tile-image"],
    "volumes_serial": ["volumes", "--preset", "resnet50-conv3x", "--m-words", 65536],
    "volumes_parallel": ["volumes", "--preset", "resnet50-conv2x", "--m-words", 2**20,
                         "--procs", 2**19],
    "simulate_toy": ["simulate", "--layer", DATA / "toy.layer", "--m-words", 16,
                     "--tiling", DATA / "toy.tiling"],
    "simulate_parallel": ["simulate", "--layer", DATA / "toy.layer", "--m-words", 64,
                          "--procs", 8],
    "sweep_toy": ["sweep", "--layer", DATA / "toy.layer", "--sweep", "m", "--from", 8,
                  "--to", 64],
    "hbl_cnn": ["hbl", "--builtin", "cnn", "--stride", 1, 1],
    "hbl_lifted": ["hbl", "--builtin", "lifted"],
    "hbl_matrices": ["hbl", "--matrices", DATA / "matmul.txt"],
}


@pytest.mark.parametrize("name", sorted(GOLDEN_CASES))
def test_golden(name, capsys):
    code, out, err = run(GOLDEN_CASES[name], capsys)
    assert code == 0, err
    path = GOLDEN / f"{name}.txt"
    if UPDATE:
        path.write_text(out)
    assert out == path.read_text()
    # byte-for-byte determinism
    assert run(GOLDEN_CASES[name], capsys)[1] == out


def test_bounds_table_matches_module(capsys):
    code, out, _ = run(GOLDEN_CASES["bounds_conv1"], capsys)
    layer, prec = load_preset("resnet50-conv1")
    r = serial_lower_bound(layer, prec, SerialMachine(131072))
    rows = {line.split()[0]: line.split()[1] for line in out.splitlines()[3:7]}
    assert rows == {"trivial": fmt6(r.term_trivial), "large_filter": fmt6(r.term_large_filter),
                    "small_filter": fmt6(r.term_small_filter), "bound": fmt6(r.bound)}


def test_hbl_cnn_output(capsys):
    _, out, _ = run(GOLDEN_CASES["hbl_cnn"], capsys)
    for c in ("1 <= s_F + s_O", "1 <= s_I + s_O", "1 <= s_I + s_F", "2 <= s_I + s_F + s_O"):
        assert c in out
    assert out.count("2/3") == 3 and out.rstrip().endswith("total 2")


def test_sweep_csv_rows(tmp_path, capsys):
    path = tmp_path / "out.csv"
    code, out, _ = run(["sweep", "--preset", "resnet50-conv2x", "--sweep", "m", "--from", 4096,
                        "--to", 4194304, "--factor", 2, "--csv", path], capsys)
    assert code == 0 and "wrote 11 rows" in out
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["param", "bound", "naive", "blocking", "im2col", "ratio_naive",
                       "ratio_blocking", "ratio_im2col", "note"]
    assert [int(r[0]) for r in rows[1:]] == [2**k for k in range(12, 23)]


def test_sweep_p_csv(tmp_path, capsys):
    path = tmp_path / "p.csv"
    code, _, _ = run(["sweep", "--preset", "resnet50-conv2x", "--sweep", "p", "--from", 2**18,
                      "--to", 2**20, "--m-words", 2**20, "--csv", path, "--workers", 2], capsys)
    assert code == 0 and len(path.read_text().splitlines()) == 4


def test_tile_out_feeds_simulate(tmp_path, capsys):
    path = tmp_path / "t.tiling"
    assert run(["tile", "--layer", DATA / "toy.layer", "--m-words", 24, "--out", path],
               capsys)[0] == 0
    code, out, _ = run(["simulate", "--layer", DATA / "toy.layer", "--m-words", 24,
                        "--tiling", path], capsys)
    assert code == 0 and "LRU simulation" in out


def test_trace_flag(tmp_path, capsys):
    path = tmp_path / "trace.txt"
    code, out, _ = run(GOLDEN_CASES["simulate_toy"] + ["--trace", path], capsys)
    loads = next(line.split()[1] for line in out.splitlines() if line.startswith("loads"))
    assert code == 0 and len(path.read_text().splitlines()) == int(loads)


@pytest.mark.parametrize("argv, fragment", [
    (["bounds", "--preset", "nope", "--m-words", 4], "resnet50-conv1"),
    (["bounds", "--preset", "resnet50-conv1"], "--m-words is required"),
    (["bounds", "--layer", DATA / "missing.layer", "--m-words", 4], "No such file"),
    (["simulate", "--preset", "resnet50-conv2x", "--m-words", 16], "exceeds the simulator cap"),
    (["simulate", "--layer", DATA / "toy.layer", "--m-words", 11, "--tiling", DATA / "toy.tiling"],
     "invalid tiling"),
    (["sweep", "--layer", DATA / "toy.layer", "--sweep", "m", "--from", 8, "--to", 4], "empty"),
    (["sweep", "--layer", DATA / "toy.layer", "--sweep", "m", "--from", 8, "--to", 64,
      "--factor", 1], "--factor"),
    (["sweep", "--layer", DATA / "toy.layer", "--sweep", "p", "--from", 2, "--to", 8],
     "--m-words"),
])
def test_validation_errors_exit_2(argv, fragment, capsys):
    code, out, err = run(argv, capsys)
    assert code == 2 and fragment in err and out == ""


def test_bad_layer_file_is_line_numbered(tmp_path, capsys):
    path = tmp_path / "bad.layer"
    path.write_text("N = 2\nc_in = x\n")
    code, _, err = run(["bounds", "--layer", path, "--m-words", 4], capsys)
    assert code == 2 and "line 2" in err


def test_invalid_layer_shape(tmp_path, capsys):
    path = tmp_path / "wide.layer"
    path.write_text((DATA / "toy.layer").read_text().replace("w_f = 2", "w_f = 5"))
    code, _, err = run(["bounds", "--layer", path, "--m-words", 64], capsys)
    assert code == 2 and "w_f <= stride_w*w_out" in err


@pytest.mark.parametrize("argv", [
    ["bounds", "--m-words", 4],
    ["bounds", "--layer", "a", "--preset", "b", "--m-words", 4],
    ["bounds", "--preset", "resnet50-conv1", "--m-words", 0],
    ["frobnicate"],
])
def test_argparse_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as e:
        cli.main([str(a) for a in argv])
    assert e.value.code == 2


@pytest.mark.parametrize("argv", [
    ["tile", "--layer", DATA / "toy.layer", "--m-words", 8],
    ["tile", "--preset", "resnet50-conv1", "--scratchpad", 4, "--accumulator", 4],
    ["simulate", "--layer", DATA / "toy.layer", "--m-words", 16, "--procs", 8],
    ["volumes", "--layer", DATA / "toy.layer", "--m-words", 4, "--procs", 2],
])
def test_infeasible_exit_3(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 3 and err.startswith("infeasible")


def test_hbl_infeasible_exit_3(tmp_path, capsys):
    # a map to a point forces rank 1 <= 0 * s
    path = tmp_path / "zero.txt"
    path.write_text("0\n")
    code, _, err = run(["hbl", "--matrices", path], capsys)
    assert code == 3


def test_presets_untouched(capsys):
    from importlib import resources
    root = resources.files("cnncomm").joinpath("presets")
    before = {p.name: p.read_text() for p in root.iterdir()}
    run(GOLDEN_CASES["tile_two_buffer"], capsys)
    assert {p.name: p.read_text() for p in root.iterdir()} == before
