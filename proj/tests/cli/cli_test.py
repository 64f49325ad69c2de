"""End-to-end checks of the trido command-line tool.

Usage: cli_test.py <path to trido> <scenario>
"""

import filecmp
import json
import struct
import subprocess
import sys
import tempfile
from pathlib import Path

TINY = {
    "geometry": {"n_angles": 32, "n_bins": 32, "image_size": 32},
    "data": {"n_train": 4, "n_val": 2, "osem_subsets": 4, "osem_iters": 4, "seed": 7},
    "se_former": {"width": 32, "heads": 2, "ffn_ratio": 2},
    "ssr_former": {"channels": [4, 4, 8, 8], "heads": [1, 2, 2, 2], "window": 2},
    "train": {"epochs": 2, "warm_epochs": 1, "batch_size": 2, "checkpoint_every": 1},
}


def run(*args, expect=0):
    proc = subprocess.run([TRIDO, *map(str, args)], capture_output=True, text=True)
    if expect is not None and proc.returncode != expect:
        raise AssertionError(
            f"{args}: exit {proc.returncode}, wanted {expect}\n{proc.stdout}\n{proc.stderr}")
    return proc


def write_f64(path, rows, cols, values):
    with open(path, "wb") as f:
        f.write(b"TDT1" + struct.pack("<HBB", 1, 1, 2) + struct.pack("<II", rows, cols))
        f.write(struct.pack(f"<{rows * cols}d", *values))


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.diff_files or cmp.funny_files:
        return False
    files = [p.relative_to(a) for p in Path(a).rglob("*") if p.is_file()]
    return all(filecmp.cmp(Path(a) / f, Path(b) / f, shallow=False) for f in files)


def simulate(tmp, name="data", config=None):
    cfg = tmp / f"{name}.json"
    cfg.write_text(json.dumps(config or TINY))
    run("simulate", "--config", cfg, "--out", tmp / name)
    return cfg, tmp / name


def scenario_usage(tmp):
    run(expect=1)
    run("frobnicate", expect=1)
    run("simulate", expect=1)  # --out is required
    (tmp / "bad.json").write_text('{"train": {"epochz": 3}}')
    err = run("simulate", "--config", tmp / "bad.json", "--out", tmp / "x", expect=1).stderr
    assert "epochz" in err, err
    err = run("simulate", "--set", "train.lambda=0", "--out", tmp / "x", expect=1).stderr
    assert "lambda" in err and "train: train:" not in err, err
    assert run("--help").returncode == 0


def scenario_simulate(tmp):
    cfg, a = simulate(tmp, "a")
    run("simulate", "--config", cfg, "--out", tmp / "b")
    assert same_tree(a, tmp / "b"), "same seed gave different files"
    for split, n in (("train", 4), ("val", 2)):
        meta = json.loads((a / split / "metadata.json").read_text())
        assert meta["dose_factor"] == 0.25, meta
        for name in ("low", "standard", "target"):
            assert (a / split / f"{name}.tdt").is_file()
    run("simulate", "--config", cfg, "--set", "data.seed=8", "--out", tmp / "c")
    assert not filecmp.cmp(a / "train" / "low.tdt", tmp / "c" / "train" / "low.tdt", shallow=False)


def scenario_gradcheck(tmp):
    out = run("gradcheck").stdout
    assert out.count("PASS") == 24 and "FAIL" not in out, out
    faulty = run("gradcheck", "--inject-fault", expect=2).stdout
    assert "injected_fault" in faulty and "FAIL" in faulty, faulty


def scenario_train_resume(tmp):
    cfg, data = simulate(tmp)
    out = run("train", "--config", cfg, "--data", data, "--out", tmp / "full").stdout
    assert "lambda = 10" in out, out
    history = [json.loads(line) for line in (tmp / "full" / "history.jsonl").read_text().splitlines()]
    assert [h["epoch"] for h in history] == [0, 1], history
    for h in history:
        assert abs(h["l_total"] - (h["l_sino"] + 10 * h["l_img"])) < 1e-6 * h["l_total"]
        assert h["val_psnr"] is not None
    assert (tmp / "full" / "final.tdck").is_file()

    run("train", "--config", cfg, "--data", data, "--out", tmp / "cut", "--max-steps", 3)
    run("train", "--data", data, "--out", tmp / "cut", "--resume", tmp / "cut" / "last.tdck")
    assert filecmp.cmp(tmp / "full" / "final.tdck", tmp / "cut" / "final.tdck", shallow=False)


def scenario_reconstruct_eval(tmp):
    cfg, data = simulate(tmp)
    run("train", "--config", cfg, "--data", data, "--out", tmp / "run")
    ckpt = tmp / "run" / "final.tdck"

    # first validation slice written as a standalone sinogram
    raw = (data / "val" / "low.tdt").read_bytes()
    values = struct.unpack_from(f"<{32 * 32}d", raw, 8 + 3 * 4)
    write_f64(tmp / "sino.tdt", 32, 32, values)
    for name in ("x1", "x2"):
        run("reconstruct", "--checkpoint", ckpt, "--input", tmp / "sino.tdt", "--output", tmp / f"{name}.tdt",
            "--emit-denoised", tmp / f"{name}_se.tdt", "--pgm", tmp / f"{name}.pgm")
    assert filecmp.cmp(tmp / "x1.tdt", tmp / "x2.tdt", shallow=False)
    assert (tmp / "x1.pgm").read_bytes().startswith(b"P5\n32 32\n255\n")
    write_f64(tmp / "wrong.tdt", 16, 16, [0.0] * 256)
    run("reconstruct", "--checkpoint", ckpt, "--input", tmp / "wrong.tdt", "--output", tmp / "y.tdt", expect=2)
    run("reconstruct", "--checkpoint", ckpt, "--output", tmp / "y.tdt", expect=1)

    run("eval", "--checkpoint", ckpt, "--data", data, "--out", tmp / "ev")
    rows = [json.loads(line) for line in (tmp / "ev" / "report.jsonl").read_text().splitlines()]
    methods = {r["method"] for r in rows}
    assert methods == {"osem_lpet", "osem_spet", "trido_former"}, methods
    assert sum(r["kind"] == "slice" for r in rows) == 3 * 2
    table = (tmp / "ev" / "report.txt").read_text()
    assert table.count("trido_former") == 2 + 2, table
    run("eval", "--data", data, "--split", "test", expect=2)
    (data / "empty").mkdir()
    assert run("eval", "--data", data, "--split", "empty", expect=None).returncode != 0


def scenario_spectrum(tmp):
    config = json.loads(json.dumps(TINY))
    config["train"].update({"epochs": 1, "warm_epochs": 0, "train_gfp": False})
    cfg, data = simulate(tmp, config=config)
    run("train", "--config", cfg, "--data", data, "--out", tmp / "run")
    run("spectrum", "--checkpoint", tmp / "run" / "final.tdck", "--out", tmp / "filters")
    index = [json.loads(line) for line in (tmp / "filters" / "filters.jsonl").read_text().splitlines()]
    assert len(index) == 14, len(index)  # 7 blocks, two layers each
    for f in index:
        assert f["min"] == 1.0 and f["max"] == 1.0, f
        assert (tmp / "filters" / f["file"]).is_file()

    write_f64(tmp / "flat.tdt", 16, 16, [0.5] * 256)
    run("spectrum", "--image", tmp / "flat.tdt", "--out", tmp / "spec")
    rings = [json.loads(line) for line in (tmp / "spec" / "spectrum.jsonl").read_text().splitlines()]
    assert len(rings) == 9
    assert rings[0]["total_power"] > 0
    assert all(r["total_power"] < 1e-20 * rings[0]["total_power"] for r in rings[1:]), rings
    assert (tmp / "spec" / "image.pgm").is_file()
    run("spectrum", "--out", tmp / "none", expect=1)


if __name__ == "__main__":
    TRIDO = sys.argv[1]
    with tempfile.TemporaryDirectory(prefix="trido_cli_") as d:
        globals()["scenario_" + sys.argv[2]](Path(d))
    print("ok", sys.argv[2])
