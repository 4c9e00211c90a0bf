import csv
import io as stdio
import json
import subprocess
import sys

import numpy as np
import pytest

from boxplan import io
from boxplan.cli import EXIT_ERROR, EXIT_INFEASIBLE, EXIT_OK, main
from boxplan.geometry import BoxSet
from boxplan.scenes import running_example


@pytest.fixture()
def files(tmp_path):
    S, p, q, T, alpha = running_example()
    scene = tmp_path / "scene.json"
    io.save_scene(scene, S)
    cache = tmp_path / "cache.json"
    assert main(["preprocess", str(scene), "-o", str(cache)]) == EXIT_OK
    return tmp_path, scene, cache, p, q


def vec(v):
    return ",".join(repr(float(x)) for x in v)


def test_plan_eval_verify(files, capsys):
    tmp, scene, cache, p, q = files
    out = tmp / "path.json"
    code = main(["plan", str(cache), "--init", vec(p), "--term", vec(q), "-T", "1",
                 "--alpha", "0,0,1", "--init-deriv", "1:0,0", "-o", str(out)])
    assert code == EXIT_OK
    capsys.readouterr()
    assert main(["eval", str(out), "--t", "0"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    p0 = np.array([float(x) for x in lines[0].split("=")[1].split()])
    assert np.array_equal(p0, p)
    p1 = np.array([float(x) for x in lines[1].split("=")[1].split()])
    np.testing.assert_allclose(p1, 0, atol=1e-7)
    assert len(lines) == 4
    assert main(["verify", str(out), "--scene", str(scene)]) == EXIT_OK
    assert main(["eval", str(out), "--t", "5"]) == EXIT_ERROR
    svg = tmp / "fig.svg"
    assert main(["plot", str(scene), str(out), "-o", str(svg)]) == EXIT_OK
    text = svg.read_text()
    assert text.startswith("<svg") or text.startswith("<?xml")
    assert text.count("<rect") >= 9


def test_plan_infeasible_exit_2(tmp_path, capsys):
    scene = tmp_path / "two.json"
    io.save_scene(scene, BoxSet([[0, 0], [3, 3]], [[1, 1], [4, 4]]))
    cache = tmp_path / "c.json"
    main(["preprocess", str(scene), "-o", str(cache)])
    code = main(["plan", str(cache), "--init", "0.5,0.5", "--term", "3.5,3.5", "-T", "1",
                 "--alpha", "1", "-o", str(tmp_path / "p.json")])
    assert code == EXIT_INFEASIBLE
    assert "infeasible" in capsys.readouterr().out
    assert not (tmp_path / "p.json").exists()


def run(argv):
    # usage errors leave through SystemExit, the rest through the return value
    try:
        return main(argv)
    except SystemExit as err:
        return err.code


@pytest.mark.parametrize("argv", [
    ["plan", "CACHE", "--init", "0,0,0", "--term", "1,1", "-T", "1", "--alpha", "1", "-o", "OUT"],
    ["plan", "CACHE", "--init", "a,b", "--term", "1,1", "-T", "1", "--alpha", "1", "-o", "OUT"],
    ["plan", "CACHE", "--init", "1,1", "--term", "1,1", "-T", "1", "--alpha", "0,0", "-o", "OUT"],
    ["plan", "CACHE", "--init", "1,1", "--term", "1,1", "-T", "-1", "--alpha", "1", "-o", "OUT"],
    ["plan", "CACHE", "--init", "1,1", "--term", "1,1", "-T", "1", "--alpha", "1", "--init-deriv", "x", "-o", "OUT"],
    ["plan", "SCENE", "--init", "1,1", "--term", "1,1", "-T", "1", "--alpha", "1", "-o", "OUT"],
    ["preprocess", "missing.json", "-o", "OUT"],
    ["eval", "SCENE", "--t", "0"],
    ["gen", "grid", "--side", "1", "-o", "OUT"],
    ["verify", "CACHE"],
    ["bogus"],
    ["plan"],
])
def test_errors_exit_1(files, argv):
    tmp, scene, cache, _, _ = files
    subst = {"CACHE": str(cache), "SCENE": str(scene), "OUT": str(tmp / "out.json")}
    assert run([subst.get(a, a) for a in argv]) == EXIT_ERROR


def test_gen_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["gen", "grid", "--side", "5", "--seed", "3", "-o", str(tmp_path / name)]) == EXIT_OK
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    assert io.load_scene(tmp_path / "a").K == 25
    assert main(["gen", "village", "--side", "10", "--seed", "1", "-o", str(tmp_path / "v")]) == EXIT_OK
    assert io.load_scene(tmp_path / "v").dim == 3
    assert main(["plot", str(tmp_path / "v"), "-o", str(tmp_path / "v.svg")]) == EXIT_OK


def test_bench_csv(capsys):
    assert main(["bench", "--sides", "5,10"]) == EXIT_OK
    rows = list(csv.DictReader(stdio.StringIO(capsys.readouterr().out)))
    assert [int(r["K"]) for r in rows] == [25, 100]
    assert all(float(r["offline_s"]) >= 0 for r in rows)


def test_verify_oracle(tmp_path, capsys):
    S = BoxSet([[0, 0], [1, 0], [1.5, 0.5]], [[2, 1], [3, 1], [2.5, 2]])
    scene = tmp_path / "s.json"
    io.save_scene(scene, S)
    cache = tmp_path / "c.json"
    main(["preprocess", str(scene), "-o", str(cache)])
    path = tmp_path / "p.json"
    assert main(["plan", str(cache), "--init", "0.2,0.5", "--term", "2.8,0.5", "-T", "1",
                 "--alpha", "0,1", "-o", str(path)]) == EXIT_OK
    capsys.readouterr()
    assert main(["verify", str(path), "--scene", str(scene), "--oracle"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "oracle: best cost" in out


def test_verify_rejects_broken_path(files, capsys):
    tmp, scene, cache, p, q = files
    out = tmp / "path.json"
    main(["plan", str(cache), "--init", vec(p), "--term", vec(q), "-T", "1", "--alpha", "0,0,1", "-o", str(out)])
    data = json.loads(out.read_text())
    data["T"] = 2.0
    out.write_text(json.dumps(data))
    assert main(["verify", str(out)]) == EXIT_ERROR


def test_module_entry_point(files):
    tmp, scene, cache, p, q = files
    out = tmp / "path.json"
    cmd = [sys.executable, "-m", "boxplan", "plan", str(cache), "--init", vec(p), "--term", vec(q),
           "-T", "1", "--alpha", "0,0,1", "-o", str(out)]
    assert subprocess.run(cmd, capture_output=True).returncode == 0
    bad = subprocess.run([sys.executable, "-m", "boxplan", "plan"], capture_output=True)
    assert bad.returncode == 1
