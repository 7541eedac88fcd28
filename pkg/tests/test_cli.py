import json
from pathlib import Path

import numpy as np
import pytest

from brepfields.cli import build_parser, main

FIXTURE = Path(__file__).resolve().parent.parent / "fixtures" / "cube.json"


def run(capsys, *argv):
    try:
        code = main(list(argv))
    except SystemExit as exc:
        code = exc.code
    out = capsys.readouterr()
    return code, out.out, out.err


def test_validate_cube_fixture(capsys):
    code, out, _ = run(capsys, "validate", "--in", str(FIXTURE))
    assert code == 0
    assert "6 faces, 12 edges, 8 vertices" in out


def test_validate_missing_file_is_data_error(capsys):
    code, _, err = run(capsys, "validate", "--in", "/nonexistent.json")
    assert code == 2
    assert err.startswith("error\t")
    assert json.loads(err.split("\t", 1)[1])["code"]


def test_usage_error_exits_one(capsys):
    code, _, err = run(capsys, "gen", "--count")
    assert code == 1
    assert "error\t" in err


def test_unknown_subcommand_exits_one(capsys):
    code, _, _ = run(capsys, "frobnicate")
    assert code == 1


def test_every_subcommand_documents_flags(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions
               if isinstance(a, __import__("argparse")._SubParsersAction))
    for name, sp in sub.choices.items():
        text = sp.format_help()
        for action in sp._actions:
            for opt in action.option_strings:
                if opt in ("-h",):
                    continue
                assert opt in text, (name, opt)
            assert action.help or action.dest in ("help", "command"), \
                (name, action.dest)


def test_gen_count_zero_streams_manifest(tmp_path, capsys):
    code, _, _ = run(capsys, "gen", "--count", "0", "--seed", "1",
                     "--out", str(tmp_path / "corpus"))
    assert code == 0
    manifest = json.loads((tmp_path / "corpus" / "manifest.json").read_text())
    assert manifest["parts"] == []


def test_gen_rejects_unknown_family(tmp_path, capsys):
    code, _, err = run(capsys, "gen", "--count", "2", "--families", "gear",
                       "--out", str(tmp_path / "c"))
    assert code == 2


@pytest.mark.slow
def test_full_pipeline_smoke(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    dataset = tmp_path / "dataset"
    ckpt = tmp_path / "model.ckpt"
    codes = tmp_path / "codes.bin"

    code, out, err = run(capsys, "gen", "--count", "8", "--seed", "5",
                         "--out", str(corpus))
    assert code == 0, err
    code, out, err = run(capsys, "dataset", "--in", str(corpus),
                         "--out", str(dataset), "--seed", "5")
    assert code == 0, err

    code, out, err = run(capsys, "pretrain", "--dataset", str(dataset),
                         "--out", str(ckpt), "--epochs", "2",
                         "--hidden", "16", "--seed", "5")
    assert code == 0, err
    assert ckpt.exists() and Path(str(ckpt) + ".report.json").exists()

    code, out, err = run(capsys, "embed", "--ckpt", str(ckpt),
                         "--dataset", str(dataset), "--out", str(codes))
    assert code == 0, err

    code, out, err = run(capsys, "train", "--task", "seg", "--size", "4",
                         "--dataset", str(dataset), "--codes", str(codes),
                         "--head-epochs", "10")
    assert code == 0, err
    assert "accuracy" in out

    code, out, err = run(capsys, "train", "--task", "cls", "--size", "4",
                         "--dataset", str(dataset), "--random-codes",
                         "--head-epochs", "5")
    assert code == 0, err

    curve = tmp_path / "curve.tsv"
    code, out, err = run(capsys, "curve", "--task", "mlp", "--sizes", "2,4",
                         "--seeds", "2", "--dataset", str(dataset),
                         "--codes", str(codes), "--out", str(curve),
                         "--head-epochs", "5")
    assert code == 0, err
    assert curve.read_text().startswith("size\tmean")

    manifest = json.loads((corpus / "manifest.json").read_text())
    part = manifest["parts"][0]["name"]
    obj = tmp_path / "part.obj"
    code, out, err = run(capsys, "raster", "--ckpt", str(ckpt),
                         "--dataset", str(dataset), "--part", part,
                         "--res", "12", "--out", str(obj))
    assert code == 0, err
    assert obj.exists()

    target = tmp_path / "target.xyz"
    from brepfields.brep import load_brep
    from brepfields.corpus import normalize_part
    from brepfields.shapefit import sample_surface_cloud, save_cloud
    norm, _ = normalize_part(load_brep(corpus / "parts" / f"{part}.json"))
    save_cloud(sample_surface_cloud(norm, 64, seed=1), target)
    fitted = tmp_path / "fitted.json"
    code, out, err = run(capsys, "fit", "--ckpt", str(ckpt),
                         "--part", str(corpus / "parts" / f"{part}.json"),
                         "--target", str(target),
                         "--free", "face:0:origin", "--steps", "2",
                         "--out", str(fitted), "--trace",
                         str(tmp_path / "trace.json"))
    assert code == 0, err
    assert fitted.exists()
    code, out, err = run(capsys, "validate", "--in", str(fitted))
    assert code == 0, err


def test_cli_outputs_are_idempotent(tmp_path, capsys):
    out1 = tmp_path / "c1"
    out2 = tmp_path / "c2"
    for out in (out1, out2):
        code, _, _ = run(capsys, "gen", "--count", "4", "--seed", "9",
                         "--out", str(out))
        assert code == 0
    files1 = sorted(p.relative_to(out1) for p in out1.rglob("*.json"))
    files2 = sorted(p.relative_to(out2) for p in out2.rglob("*.json"))
    assert files1 == files2
    for rel in files1:
        assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes()
