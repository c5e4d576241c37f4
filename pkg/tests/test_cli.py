import csv
import json

import pytest

from pafr.cli import main
from pafr.io import load_parts, read_header, save_parts
from pafr.pipeline import PipelineModel
from pafr.serialize import load_model, save_model

from conftest import make_part

FAST_TRAIN = ["--trees-binary", "25", "--trees-multiclass", "25",
              "--depth-binary", "4", "--depth-multiclass", "4"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "data"
    assert main(["gen", "--out", str(d), "--parts", "60", "--seed", "11"]) == 0
    return d


@pytest.fixture(scope="module")
def model_path(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("cli-model") / "model.bin"
    code = main(["train", "--data", str(data_dir), "--out", str(out)] + FAST_TRAIN)
    assert code == 0
    return out


@pytest.fixture(scope="module")
def pred_path(tmp_path_factory, data_dir, model_path):
    out = tmp_path_factory.mktemp("cli-pred") / "preds.jsonl"
    code = main(["infer", "--model", str(model_path), "--data", str(data_dir),
                 "--split", "test", "--out", str(out)])
    assert code == 0
    return out


class TestGen:
    def test_outputs_exist(self, data_dir):
        assert (data_dir / "dataset.jsonl").is_file()
        manifest = json.loads((data_dir / "manifest.json").read_text())
        assert manifest["n_parts"] == 60
        assert len(manifest["splits"]["train"]) == 42

    def test_repeat_identical_bytes(self, data_dir, tmp_path):
        d2 = tmp_path / "again"
        assert main(["gen", "--out", str(d2), "--parts", "60", "--seed", "11"]) == 0
        assert (d2 / "dataset.jsonl").read_bytes() == \
            (data_dir / "dataset.jsonl").read_bytes()
        assert (d2 / "manifest.json").read_bytes() == \
            (data_dir / "manifest.json").read_bytes()

    def test_missing_out_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["gen", "--parts", "5"])
        assert exc.value.code == 2

    def test_bad_features_range(self, tmp_path):
        assert main(["gen", "--out", str(tmp_path / "x"), "--features", "3"]) == 2


class TestGlobalFlags:
    def test_bad_log_level(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PAFR_LOG", "verbose")
        assert main(["gen", "--out", str(tmp_path / "d"), "--parts", "2"]) == 2

    def test_threads_must_be_positive(self, tmp_path):
        assert main(["gen", "--out", str(tmp_path / "d"), "--threads", "0"]) == 2

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2


class TestTrain:
    def test_report_written(self, model_path):
        with open(str(model_path) + ".report.json") as fh:
            report = json.load(fh)
        assert report["n_parts"] == 42
        assert report["n_edges"] > 0
        assert 0.0 <= report["oof_ece"] <= 1.0

    def test_deterministic_model_bytes(self, data_dir, tmp_path):
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        args = ["train", "--data", str(data_dir), "--split", "val"] + FAST_TRAIN
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_missing_data_path(self, tmp_path):
        code = main(["train", "--data", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "m.bin")])
        assert code == 2


class TestInfer:
    def test_prediction_records(self, pred_path, data_dir):
        lines = pred_path.read_text().splitlines()
        header = json.loads(lines[0])
        assert header["schema"] == "pafr-pred/1"
        manifest = json.loads((data_dir / "manifest.json").read_text())
        records = [json.loads(ln) for ln in lines[1:]]
        assert sorted(r["part_id"] for r in records) == \
            sorted(manifest["splits"]["test"])
        for r in records:
            faces = sorted(f for inst in r["instances"] for f in inst["faces"])
            assert faces == list(range(len(faces)))  # partition of [0, n)
            for inst in r["instances"]:
                assert isinstance(inst["class_name"], str)
                assert 0.0 <= inst["confidence"] <= 1.0

    def test_empty_input_gives_header_only(self, model_path, data_dir, tmp_path):
        header = read_header(data_dir / "dataset.jsonl")
        empty = tmp_path / "empty.jsonl"
        save_parts([], empty, header=header)
        out = tmp_path / "preds.jsonl"
        assert main(["infer", "--model", str(model_path), "--data", str(empty),
                     "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 1 and json.loads(lines[0])["schema"] == "pafr-pred/1"

    def test_unlabeled_parts_accepted(self, model_path, tmp_path):
        g = make_part(3, [(0, 1), (1, 2)])  # no instance/class labels
        path = tmp_path / "unlabeled.jsonl"
        save_parts([g], path)
        out = tmp_path / "preds.jsonl"
        assert main(["infer", "--model", str(model_path), "--data", str(path),
                     "--out", str(out)]) == 0
        record = json.loads(out.read_text().splitlines()[1])
        assert record["part_id"] == "toy"

    def test_schema_mismatch_exit_1_names_versions(self, model_path, tmp_path, capsys):
        model = load_model(model_path)
        stale = PipelineModel(boundary=model.boundary, semantic=model.semantic,
                              threshold=model.threshold, classes=model.classes,
                              edge_schema="edge-attrs-v0")
        stale_path = tmp_path / "stale.bin"
        save_model(stale, stale_path)
        g = make_part(2, [(0, 1)])
        data = tmp_path / "d.jsonl"
        save_parts([g], data)
        code = main(["infer", "--model", str(stale_path), "--data", str(data),
                     "--out", str(tmp_path / "p.jsonl")])
        assert code == 1
        err = capsys.readouterr().err
        assert "edge-attrs-v0" in err and "edge-attrs-v1" in err


class TestEval:
    def test_pred_and_model_paths_agree(self, data_dir, model_path, pred_path, tmp_path):
        ra, rb = tmp_path / "a.json", tmp_path / "b.json"
        assert main(["eval", "--data", str(data_dir), "--split", "test",
                     "--pred", str(pred_path), "--out", str(ra)]) == 0
        assert main(["eval", "--data", str(data_dir), "--split", "test",
                     "--model", str(model_path), "--out", str(rb)]) == 0
        a = json.loads(ra.read_text())
        b = json.loads(rb.read_text())
        assert a == b
        assert a["schema"] == "pafr-eval/1"
        assert a["n_parts"] == 9
        assert 0.0 <= a["instance_metrics"]["pq"] <= 1.0
        assert a["edge_metrics"] is not None

    def test_both_or_neither_source_rejected(self, data_dir, model_path, pred_path):
        base = ["eval", "--data", str(data_dir), "--split", "test"]
        assert main(base) == 2
        assert main(base + ["--pred", str(pred_path),
                            "--model", str(model_path)]) == 2

    def test_exclusion_only_touches_instance_metrics(self, data_dir, pred_path, tmp_path):
        ra, rb = tmp_path / "a.json", tmp_path / "b.json"
        base = ["eval", "--data", str(data_dir), "--split", "test",
                "--pred", str(pred_path)]
        assert main(base + ["--out", str(ra)]) == 0
        assert main(base + ["--exclude-classes", "stock", "--out", str(rb)]) == 0
        a, b = json.loads(ra.read_text()), json.loads(rb.read_text())
        assert a["edge_metrics"] == b["edge_metrics"]
        assert b["exclude_classes"] == ["stock"]
        assert b["instance_metrics"] == a["instance_metrics_excl_stock"]

    def test_unknown_excluded_class(self, data_dir, pred_path):
        code = main(["eval", "--data", str(data_dir), "--split", "test",
                     "--pred", str(pred_path), "--exclude-classes", "fillet"])
        assert code == 2


class TestSweep:
    def test_csv_rows(self, data_dir, tmp_path):
        out = tmp_path / "sweep.csv"
        code = main(["sweep", "--data", str(data_dir), "--out", str(out),
                     "--sizes", "5,10", "--seeds", "0,1"] + FAST_TRAIN)
        assert code == 0
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["train_size", "seed", "pq", "pq_excl_stock", "rl_acc",
                           "edge_acc", "edge_f1", "ece"]
        assert len(rows) == 1 + 4
        assert [r[:2] for r in rows[1:]] == \
            [["5", "0"], ["5", "1"], ["10", "0"], ["10", "1"]]
        for r in rows[1:]:
            assert 0.0 <= float(r[2]) <= 1.0

    def test_size_exceeding_train_split(self, data_dir, tmp_path):
        code = main(["sweep", "--data", str(data_dir), "--out",
                     str(tmp_path / "s.csv"), "--sizes", "43", "--seeds", "0"])
        assert code == 2


class TestInspect:
    def test_known_part(self, data_dir, capsys):
        parts = list(load_parts(data_dir / "dataset.jsonl"))
        pid = parts[0].part_id
        assert main(["inspect", "--data", str(data_dir), "--part", pid]) == 0
        out = capsys.readouterr().out
        assert pid in out

    def test_unknown_part(self, data_dir):
        assert main(["inspect", "--data", str(data_dir),
                     "--part", "part-999999"]) == 1
