import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from conftest import TOPOLOGIES, case_path, random_tree_case
from flexmap.casefile import emit_case
from flexmap.cli import INPUT_ERROR, OK, EMPTY, main
from flexmap.lifp import LIFPRegion
from flexmap.sampler import NFPRegion

FAST = ["--workers", "1", "--q-count", "5"]


def topo_file(tmp_path, name, vec):
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps({str(k): v for k, v in vec.items()}))
    return f"{name}={p}"


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_nfp_writes_all_formats(tmp_path, capsys):
    out = tmp_path / "o"
    code, text, _ = run(capsys, "nfp", "--case", "case5", "--bus", "4", "--q-span", "-0.2:0.2", "--out", str(out),
                        *FAST)
    assert code == OK and "bus 4: 5/5 slices" in text
    assert {p.name for p in out.iterdir()} == {"nfp_bus4.csv", "nfp_bus4.json", "nfp_bus4.svg"}
    csv_text = (out / "nfp_bus4.csv").read_text()
    assert csv_text.startswith("q_mvar,p_up_mw,p_down_mw")
    data = json.loads((out / "nfp_bus4.json").read_text())
    region = NFPRegion.from_json((out / "nfp_bus4.json").read_text())
    back = NFPRegion.from_csv(csv_text, 4, region.grid, data["base_mva"])
    np.testing.assert_allclose(back.bounds()[2], region.bounds()[2], rtol=1e-14)
    assert region.grid.q_min == -0.2 and region.grid.count == 5


def test_missing_case_is_input_error(tmp_path, capsys):
    code, _, err = run(capsys, "nfp", "--case", str(tmp_path / "nope.m"), "--bus", "2")
    assert code == INPUT_ERROR and "nope.m" in err


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as info:
        main(["nfp", "--q-count", "many"])
    assert info.value.code == INPUT_ERROR
    code, _, err = run(capsys, "nfp", "--case", "case5", "--bus", "4", "--q-span", "0.3:0.1")
    assert code == INPUT_ERROR and "lo < hi" in err
    code, _, err = run(capsys, "nfp", "--case", "case5", "--bus", "4", "--emit", "png")
    assert code == INPUT_ERROR and "png" in err
    code, _, err = run(capsys, "lifp", "--case", "case5", "--zone", "ring:x")
    assert code == INPUT_ERROR and "unknown ring" in err


def test_pinched_case_exits_2(tmp_path, capsys):
    code, _, err = run(capsys, "nfp", "--case", "case3_pinched", "--bus", "2", "--out", str(tmp_path), *FAST)
    assert code == EMPTY
    assert "no feasible" in err or err.count("empty") == 1


def test_pinched_case_with_explicit_span_exits_2(tmp_path, capsys):
    code, _, err = run(capsys, "nfp", "--case", "case3_pinched", "--bus", "2", "--q-span", "-0.1:0.1",
                       "--out", str(tmp_path), *FAST)
    assert code == EMPTY and "region is empty" in err


def test_radial_check(tmp_path, capsys):
    good = topo_file(tmp_path, "good", {4: 1, 5: 0})
    loop = topo_file(tmp_path, "loop", {4: 1, 5: 1})
    code, out, _ = run(capsys, "radial-check", "--case", "case5", "--topology", good)
    assert code == OK and "good: radial" in out
    code, out, _ = run(capsys, "radial-check", "--case", "case5", "--topology", good, "--topology", loop)
    assert code == INPUT_ERROR and "cycle" in out


def test_disconnected_zone_bus(tmp_path, capsys):
    split = topo_file(tmp_path, "split", {4: 0, 5: 0})
    code, _, err = run(capsys, "lifp", "--case", "case5", "--topology", split, "--zone", "4,5", *FAST)
    assert code == INPUT_ERROR and "[5]" in err


def test_single_bus_lifp_equals_nfp(tmp_path, capsys):
    out = tmp_path / "o"
    code, _, _ = run(capsys, "lifp", "--case", "case5", "--zone", "3", "--q-span", "-0.2:0.2", "--out", str(out),
                     *FAST)
    assert code == OK
    nfp = NFPRegion.from_json((out / "nfp_bus3.json").read_text())
    lifp = LIFPRegion.from_json((out / "lifp.json").read_text())
    q, lo, hi = nfp.bounds()
    assert np.array_equal(lifp.p_lo, lo) and np.array_equal(lifp.p_hi, hi)
    meta = json.loads((out / "lifp_meta.json").read_text())
    assert meta["lifp_within_members"] is True


def test_config_file_and_precedence(tmp_path, capsys):
    shutil.copy(case_path("case5"), tmp_path / "net.m")
    (tmp_path / "cfg.json").write_text(json.dumps({
        "case": "net.m", "zone": "3,4", "q_span": [-0.1, 0.1], "q_count": 3, "workers": 1,
        "out": str(tmp_path / "from_cfg"), "emit": ["json"]}))
    code, text, _ = run(capsys, "lifp", "--config", str(tmp_path / "cfg.json"))
    assert code == OK and "3/3 slices" in text
    assert (tmp_path / "from_cfg" / "lifp.json").exists()
    # a flag beats the file
    code, text, _ = run(capsys, "lifp", "--config", str(tmp_path / "cfg.json"), "--q-count", "4",
                        "--emit", "csv", "--out", str(tmp_path / "flag"))
    assert code == OK and "4/4 slices" in text
    assert (tmp_path / "flag" / "lifp.csv").exists() and not (tmp_path / "flag" / "lifp.json").exists()
    (tmp_path / "bad.json").write_text(json.dumps({"case": "net.m", "colour": "red"}))
    code, _, err = run(capsys, "lifp", "--config", str(tmp_path / "bad.json"))
    assert code == INPUT_ERROR and "colour" in err


def test_compare_with_rings(tmp_path, capsys):
    out = tmp_path / "o"
    args = ["compare", "--case", "case9_ring", "--zone", "2,3,4,5", "--ring", "west=6,7,8",
            "--q-span", "-0.2:0.2", "--out", str(out), *FAST]
    for name, vec in TOPOLOGIES["case9_ring"].items():
        args += ["--topology", topo_file(tmp_path, name, vec)]
    code, text, _ = run(capsys, *args)
    assert code == OK
    assert "zone 2,3,4,5" in text and "zone ring:west" in text and "normalized to default" in text
    payload = json.loads((out / "compare.json").read_text())
    assert set(payload) == {"2,3,4,5", "ring:west"}
    assert payload["ring:west"]["topologies"][0]["normalized"] == 1.0
    assert (out / "compare_ring_west.svg").exists()
    assert (out / "lifp_2-3-4-5_cross.csv").exists()


def test_compare_needs_two_topologies(tmp_path, capsys):
    code, _, err = run(capsys, "compare", "--case", "case5", "--topology",
                       topo_file(tmp_path, "a", TOPOLOGIES["case5"]["default"]))
    assert code == INPUT_ERROR and "two" in err


def test_svg_is_deterministic(tmp_path, capsys):
    outs = []
    for k in range(2):
        out = tmp_path / str(k)
        run(capsys, "lifp", "--case", "case5", "--zone", "3,4", "--q-span", "-0.2:0.2", "--emit", "svg",
            "--out", str(out), *FAST)
        outs.append((out / "lifp.svg").read_bytes())
    assert outs[0] == outs[1] and outs[0].startswith(b"<svg")


def test_validate(tmp_path, capsys):
    code, text, _ = run(capsys, "validate", "--case", "case2", "--q-span", "-0.2:0.2", "--out", str(tmp_path), *FAST)
    assert code == OK and "0 violations" in text
    # a sloppy solver tolerance leaves the vertices short of the true boundary
    code, text, err = run(capsys, "validate", "--case", "case2", "--q-span", "-0.2:0.2", "--solver-tol", "1e-1",
                          "--out", str(tmp_path), *FAST)
    assert code == EMPTY and "bracketing violations" in err


def test_validate_guard(tmp_path, capsys):
    big = tmp_path / "big.m"
    big.write_text(emit_case(random_tree_case(95, np.random.default_rng(1))))
    code, _, err = run(capsys, "validate", "--case", str(big), "--bus", "2", *FAST)
    assert code == INPUT_ERROR and "30 buses" in err


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "flexmap", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("flexmap ")
    exe = shutil.which("flexmap")
    if exe:
        out = subprocess.run([exe, "radial-check", "--case", "case5"], capture_output=True, text=True)
        assert out.returncode == 0 and "radial" in out.stdout
