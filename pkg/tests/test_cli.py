import json
import os

import pytest

from conftest import CHAT_BYTES, chat_packet, ether, ipv4_packet
from hdrclass.cli import build_parser, dispatch
from hdrclass.dataset import read_csv
from hdrclass.manifest import manifest_path, validate_manifest
from hdrclass.model import load_model

SMALL = ["--s", "16", "--d", "8", "--kernels", "8"]


def run(*argv):
    return dispatch([str(a) for a in argv])


@pytest.fixture
def synth_csv(tmp_path):
    path = tmp_path / "synth.csv"
    assert run("synth", "--classes", 2, "--per-class", 150, "--seed", 3, "--out", path) == 0
    return path


@pytest.fixture
def trained(tmp_path, synth_csv):
    model = tmp_path / "m.json"
    rc = run("train", "--dataset", synth_csv, "--epochs", 12, "--lr", 0.005, "--batch", 32, *SMALL, "--out", model, "--log", tmp_path / "log.csv")
    assert rc == 0
    return model


def test_help_exits_zero(capsys):
    assert run("--help") == 0
    assert "crossval" in capsys.readouterr().out
    assert run("train", "--help") == 0


def test_missing_dataset_is_usage_error(capsys):
    assert run("train", "--out", "x.json") == 1
    err = capsys.readouterr().err
    assert "--dataset" in err and "usage:" in err


def test_unknown_flag_and_no_command(capsys):
    assert run("train", "--bogus") == 1
    assert run() == 1


def test_data_error_exits_two(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("not,a,dataset\n")
    assert run("stats", "--dataset", bad, "--out", tmp_path / "g.csv") == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "MalformedRow"
    assert run("eval", "--model", tmp_path / "missing.json", "--dataset", bad) == 2


def test_flag_defaults():
    args = build_parser().parse_args(["train"])
    assert (args.lr, args.dropout, args.q, args.batch, args.epochs, args.s, args.d, args.kernels) == (0.001, 0.1, 3, 128, 200, 128, 32, 64)
    assert build_parser().parse_args(["ingest"]).input_len == 12
    assert build_parser().parse_args(["crossval"]).folds == 10


def test_pipeline_synth_train_eval(tmp_path, trained, synth_csv):
    report = tmp_path / "r.json"
    assert run("eval", "--model", trained, "--dataset", synth_csv, "--report", report, "--figure", tmp_path / "cm.png") == 0
    doc = json.loads(report.read_text())
    assert doc["accuracy"] >= 0.99
    assert doc["averaging"] == "macro"
    assert (tmp_path / "r.json.confusion.csv").read_text().startswith("true\\pred,Chat,Email")
    assert (tmp_path / "cm.png").read_bytes()[:4] == b"\x89PNG"
    for out in (report, tmp_path / "r.json.confusion.csv", tmp_path / "cm.png", trained, tmp_path / "log.csv"):
        validate_manifest(json.loads(open(manifest_path(out)).read()))


def test_manifest_rerun_reproduces(tmp_path, trained):
    man = json.loads(open(manifest_path(trained)).read())
    assert man["command"] == "train" and man["config"]["lr"] == 0.005
    original = trained.read_bytes()
    os.remove(trained)
    assert dispatch(man["argv"]) == 0
    assert trained.read_bytes() == original


def test_config_file_merge(tmp_path, synth_csv):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# training\ndataset = {synth_csv}\nepochs = 1\nbatch = 64\ns = 16\nd = 8\nkernels = 8\nlr=0.5\n")
    out = tmp_path / "m.json"
    assert run("train", "--config", cfg, "--lr", 0.002, "--out", out) == 0
    man = json.loads(open(manifest_path(out)).read())
    assert man["config"]["lr"] == 0.002  # flag wins
    assert man["config"]["epochs"] == 1 and man["config"]["batch"] == 64
    assert load_model(out).config.s == 16
    bad = tmp_path / "bad.cfg"
    bad.write_text("epochs\n")
    assert run("train", "--config", bad) == 1


def test_stats(tmp_path, synth_csv):
    out = tmp_path / "g.json"
    assert run("stats", "--dataset", synth_csv, "--out", out, "--format", "json") == 0
    assert os.path.exists(manifest_path(out))


def test_ingest_and_infer(tmp_path, write_pcap_file, trained, capsys):
    email = ipv4_packet(bytes([69, 0, 5, 220, 90, 160, 64, 0, 32, 6, 101, 46]), b"\0" * 1480)
    a = write_pcap_file("chat.pcap", [ether(chat_packet())] * 3)
    b = write_pcap_file("email.pcap", [ether(email)] * 2 + [ether(b"\x60" + b"\0" * 39, 0x86DD)])
    out = tmp_path / "ing.csv"
    assert run("ingest", "--pcap", f"{a}:Chat", "--pcap", f"{b}:Email", "--out", out, "--dedup") == 0
    ds = read_csv(out)
    assert len(ds) == 2 and ds.class_names == ("Chat", "Email")
    assert list(ds.sample(0).values) == CHAT_BYTES
    summary = json.loads((tmp_path / "ing.csv.summary.json").read_text())
    assert summary["records"] == 6 and summary["skipped"] == 1

    preds = tmp_path / "p.csv"
    assert run("infer", "--model", trained, "--pcap", a, "--csv", out, "--label-map", "x,y", "--out", preds) == 0
    lines = preds.read_text().splitlines()
    assert lines[0] == "source,predicted,predicted_name,p_x,p_y"
    assert len(lines) == 1 + 2 + 3
    assert run("infer", "--model", trained, "--csv", out, "--label-map", "only") == 2
    assert run("infer", "--model", trained) == 1


def test_ingest_bad_spec(tmp_path):
    assert run("ingest", "--pcap", "nolabel", "--out", tmp_path / "x.csv") == 1


def test_bench(tmp_path, trained):
    out = tmp_path / "b.json"
    assert run("bench", "--model", trained, "--iters", 20, "--warmup", 2, "--report", out) == 0
    doc = json.loads(out.read_text())
    assert doc["batch_size"] == 1 and doc["forward"]["iterations"] == 20


def test_crossval_and_sweep(tmp_path, synth_csv, capsys):
    rep = tmp_path / "cv.json"
    rc = run("crossval", "--dataset", synth_csv, "--folds", 3, "--epochs", 1, "--batch", 64, *SMALL, "--report", rep, "--figure", tmp_path / "f.png")
    assert rc == 0
    doc = json.loads(rep.read_text())
    accs = [f["accuracy"] for f in doc["folds"]]
    assert doc["summary"]["accuracy"]["mean"] == sum(accs) / 3
    assert "over 3 folds" in capsys.readouterr().out

    sw = tmp_path / "sw.json"
    rc = run("sweep", "--dataset", synth_csv, "--s", "8,16", "--d", "4", "--kernels", 4, "--folds", 3, "--epochs", 1, "--bench-iters", 3, "--report", sw, "--figure", tmp_path / "s.png")
    assert rc == 0
    rows = json.loads(sw.read_text())["results"]
    assert [(r["s"], r["d"]) for r in rows] == [(8, 4), (16, 4)]
    assert os.path.getsize(tmp_path / "s.png") > 0
