import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from roundseg.cli import main
from roundseg.core import load_mask_png, save_image_png, load_image_png
from roundseg.datagen import load_split


def run_cli(*argv) -> int:
    return main(list(argv))


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as e:
        run_cli("datagen", "--bogus", "1")
    assert e.value.code == 2


def test_missing_required_flag_named(capsys):
    with pytest.raises(SystemExit) as e:
        run_cli("eval", "--data", "x")
    assert e.value.code == 2
    assert "--checkpoint" in capsys.readouterr().err


def test_datagen_deterministic(tmp_path):
    a = ["datagen", "--seed", "7", "--n-train", "3", "--n-val", "1", "--n-test", "1",
         "--image-size", "64"]
    assert run_cli(*a, "--out", str(tmp_path / "d1")) == 0
    assert run_cli(*a, "--out", str(tmp_path / "d2")) == 0
    f1 = sorted(p.relative_to(tmp_path / "d1") for p in (tmp_path / "d1").rglob("*") if p.is_file())
    f2 = sorted(p.relative_to(tmp_path / "d2") for p in (tmp_path / "d2").rglob("*") if p.is_file())
    assert f1 == f2
    for rel in f1:
        assert (tmp_path / "d1" / rel).read_bytes() == (tmp_path / "d2" / rel).read_bytes()


def test_datagen_refuses_nonempty_out(tmp_path):
    out = tmp_path / "d"
    out.mkdir()
    (out / "junk").write_text("x")
    rc = run_cli("datagen", "--seed", "1", "--n-train", "1", "--n-val", "0", "--n-test", "0",
                 "--image-size", "64", "--out", str(out))
    assert rc == 1


def test_infer_runs_and_is_deterministic(tmp_path, tiny_dataset, tiny_checkpoint):
    convs = load_split(tiny_dataset, "val")
    conv = convs[0]
    script = tmp_path / "script.jsonl"
    with open(tiny_dataset / "val" / "conversations.jsonl") as fh:
        script.write_text(fh.readline())
    # masks referenced relative to the script dir: link the dataset dirs
    (tmp_path / "masks").symlink_to(tiny_dataset / "masks")
    image_path = tiny_dataset / conv.image_ref

    args = ["infer", "--checkpoint", str(tiny_checkpoint), "--image", str(image_path),
            "--script", str(script), "--mode", "auto"]
    assert run_cli(*args, "--out", str(tmp_path / "o1")) == 0
    assert run_cli(*args, "--out", str(tmp_path / "o2")) == 0
    r1 = (tmp_path / "o1" / "results.jsonl").read_bytes()
    r2 = (tmp_path / "o2" / "results.jsonl").read_bytes()
    assert r1 == r2
    for k in range(1, len(conv.rounds) + 1):
        m1 = (tmp_path / "o1" / f"round_{k:02d}.png").read_bytes()
        m2 = (tmp_path / "o2" / f"round_{k:02d}.png").read_bytes()
        assert m1 == m2


def test_infer_plain_script(tmp_path, tiny_dataset, tiny_checkpoint):
    convs = load_split(tiny_dataset, "val")
    image_path = tiny_dataset / convs[0].image_ref
    script = tmp_path / "plain.jsonl"
    script.write_text(
        json.dumps({"query_text": "Please segment the organ-a.", "ref_round": 0}) + "\n"
        + json.dumps({"query_text": "Outline the organ-b.", "ref_round": 1}) + "\n"
    )
    rc = run_cli("infer", "--checkpoint", str(tiny_checkpoint), "--image", str(image_path),
                 "--script", str(script), "--out", str(tmp_path / "out"))
    assert rc == 0
    recs = [json.loads(l) for l in (tmp_path / "out" / "results.jsonl").read_text().splitlines()]
    assert [r["round_index"] for r in recs] == [1, 2]


def test_eval_writes_report(tmp_path, tiny_dataset, tiny_checkpoint):
    report = tmp_path / "rep.json"
    rc = run_cli("eval", "--checkpoint", str(tiny_checkpoint), "--data", str(tiny_dataset),
                 "--split", "val", "--mode", "auto", "--report", str(report))
    assert rc == 0
    obj = json.loads(report.read_text())
    assert obj["schema"] == 1
    assert obj["reference_mode"] == "autoregressive"
    assert 0.0 <= obj["overall"]["dice"] <= 1.0


def test_cli_entrypoint_subprocess(tmp_path):
    out = subprocess.run(
        [sys.executable, "-m", "roundseg.cli", "datagen", "--help"],
        capture_output=True, text=True,
    )
    assert out.returncode == 0
    assert "--hard-fraction" in out.stdout
