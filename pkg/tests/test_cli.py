"""CLI contract tests: subcommands, exit codes, manifests, reproducibility."""
import json

import pytest

from semprobe.cli import main
from semprobe.store import read_tensor


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture()
def blob_dir(tmp_path):
    out = tmp_path / "blobs"
    code = main([
        "synth", "blobs", "--classes", "4", "--dim", "16", "--per-class", "60",
        "--separation", "6", "--val-fraction", "0.25", "--seed", "0",
        "--out-dir", str(out),
    ])
    assert code == 0
    return out


@pytest.fixture()
def scene_dir(tmp_path):
    out = tmp_path / "scene"
    code = main([
        "synth", "scene", "--noise-sigma", "0", "--seed", "1",
        "--out-dir", str(out),
    ])
    assert code == 0
    return out


class TestExitCodes:
    def test_unknown_flag_exits_one_with_usage(self, capsys):
        code, _, err = run(capsys, "grid", "--bogus", "7")
        assert code == 1
        assert "usage" in err

    def test_unknown_subcommand_exits_one(self, capsys):
        code, _, err = run(capsys, "frobnicate")
        assert code == 1

    def test_missing_input_file_exits_two(self, capsys, tmp_path):
        code, _, err = run(
            capsys, "probe", "eval", "--model", str(tmp_path / "no.lpck"),
            "--features", str(tmp_path / "no.tnsr"), "--labels", str(tmp_path / "no2.tnsr"),
        )
        assert code == 2
        assert "error" in err

    def test_validation_failure_exits_one(self, capsys, tmp_path):
        bad = tmp_path / "gt.json"
        bad.write_text(json.dumps({
            "images": [],
            "annotations": [{"id": 1, "image_id": 5, "category_id": 1,
                             "bbox": [0, 0, 1, 1]}],
            "categories": [],
        }))
        dets = tmp_path / "dets.json"
        dets.write_text("[]")
        code, _, err = run(capsys, "eval", "coco", "--dets", str(dets), "--gt", str(bad))
        assert code == 1

    def test_help_exits_zero(self, capsys):
        assert run(capsys, "--help")[0] == 0


class TestGrid:
    def test_points_file(self, capsys, tmp_path):
        out = tmp_path / "pts.json"
        code, _, _ = run(capsys, "grid", "--width", "100", "--height", "50",
                         "--points-per-side", "1", "--out", str(out))
        assert code == 0
        data = json.loads(out.read_text())
        assert data["points"] == [[50.0, 25.0]]
        assert (tmp_path / "pts.json.manifest.json").exists()


class TestProbeCli:
    def test_train_is_reproducible_across_runs_and_threads(self, capsys, blob_dir, tmp_path):
        models = []
        for name, threads in (("a", "1"), ("b", "4"), ("c", "1")):
            out = tmp_path / f"{name}.lpck"
            code, _, _ = run(
                capsys, "probe", "train",
                "--features", str(blob_dir / "train_features.tnsr"),
                "--labels", str(blob_dir / "train_labels.tnsr"),
                "--val-features", str(blob_dir / "val_features.tnsr"),
                "--val-labels", str(blob_dir / "val_labels.tnsr"),
                "--epochs", "3", "--seed", "7", "--threads", threads,
                "--out", str(out), "--report", str(tmp_path / f"{name}.json"),
            )
            assert code == 0
            models.append(out.read_bytes())
        assert models[0] == models[1] == models[2]

    def test_train_report_and_eval(self, capsys, blob_dir, tmp_path):
        model = tmp_path / "m.lpck"
        report = tmp_path / "r.json"
        code, out, _ = run(
            capsys, "probe", "train",
            "--features", str(blob_dir / "train_features.tnsr"),
            "--labels", str(blob_dir / "train_labels.tnsr"),
            "--val-features", str(blob_dir / "val_features.tnsr"),
            "--val-labels", str(blob_dir / "val_labels.tnsr"),
            "--seed", "0", "--out", str(model), "--report", str(report),
        )
        assert code == 0
        assert "epoch  10" in out
        rep = json.loads(report.read_text())
        assert len(rep["epochs"]) == 10
        assert rep["config"]["batch_size"] == 128

        code, out, _ = run(
            capsys, "probe", "eval", "--model", str(model),
            "--features", str(blob_dir / "val_features.tnsr"),
            "--labels", str(blob_dir / "val_labels.tnsr"),
            "--topk", "1,2",
        )
        assert code == 0
        top1 = float(out.split("top1 ")[1].split()[0])
        top2 = float(out.split("top2 ")[1].split()[0])
        assert 0.99 <= top1 <= top2 <= 1.0

    def test_manifest_digests_inputs(self, capsys, blob_dir, tmp_path):
        model = tmp_path / "m.lpck"
        run(capsys, "probe", "train",
            "--features", str(blob_dir / "train_features.tnsr"),
            "--labels", str(blob_dir / "train_labels.tnsr"),
            "--epochs", "1", "--out", str(model))
        manifest = json.loads((tmp_path / "m.lpck.manifest.json").read_text())
        assert manifest["subcommand"] == "probe train"
        assert manifest["seed"] == 0
        assert len(manifest["inputs"]["features"]["sha256"]) == 64
        assert manifest["outputs"]["model"]["path"] == str(model)


class TestEvalCli:
    def test_gt_as_detections_prints_perfect_ap(self, capsys, scene_dir, tmp_path):
        gt = json.loads((scene_dir / "gt.json").read_text())
        dets = [
            {
                "image_id": a["image_id"],
                "category_id": a["category_id"],
                "bbox": a["bbox"],
                "score": 1.0,
                "segmentation": a["segmentation"],
            }
            for a in gt["annotations"]
        ]
        dets_path = tmp_path / "dets.json"
        dets_path.write_text(json.dumps(dets))
        code, out, _ = run(capsys, "eval", "coco", "--dets", str(dets_path),
                           "--gt", str(scene_dir / "gt.json"), "--iou-type", "mask")
        assert code == 0
        assert "AP_mask" in out and "100.0" in out


class TestPipeline:
    def test_full_synthetic_pipeline_reaches_perfect_ap(self, capsys, scene_dir, tmp_path):
        protos = tmp_path / "protos.tnsr"
        code, _, _ = run(capsys, "proto", "build", "--refs", str(scene_dir / "refs.json"),
                         "--stride", "14", "--out", str(protos))
        assert code == 0
        assert read_tensor(protos).shape == (3, 128)

        dets = tmp_path / "dets.json"
        code, out, _ = run(
            capsys, "match", "run",
            "--target-map", str(scene_dir / "map.tnsr"),
            "--target-meta", str(scene_dir / "map.meta.json"),
            "--proposals", str(scene_dir / "props.json"),
            "--protos", str(protos),
            "--sim-threshold", "0.5", "--nms-iou", "0.5",
            "--out", str(dets),
        )
        assert code == 0

        for iou_type in ("mask", "box"):
            code, out, _ = run(capsys, "eval", "coco", "--dets", str(dets),
                               "--gt", str(scene_dir / "gt.json"),
                               "--iou-type", iou_type)
            assert code == 0
            assert "100.0" in out

    def test_eval_with_splits(self, capsys, scene_dir, tmp_path):
        protos = tmp_path / "protos.tnsr"
        dets = tmp_path / "dets.json"
        run(capsys, "proto", "build", "--refs", str(scene_dir / "refs.json"),
            "--out", str(protos))
        run(capsys, "match", "run",
            "--target-map", str(scene_dir / "map.tnsr"),
            "--target-meta", str(scene_dir / "map.meta.json"),
            "--proposals", str(scene_dir / "props.json"),
            "--protos", str(protos), "--out", str(dets))
        splits = tmp_path / "splits.json"
        splits.write_text(json.dumps({"base": [1, 2], "novel": [3]}))
        report = tmp_path / "report.json"
        code, out, _ = run(capsys, "eval", "coco", "--dets", str(dets),
                           "--gt", str(scene_dir / "gt.json"),
                           "--iou-type", "mask", "--splits", str(splits),
                           "--report", str(report))
        assert code == 0
        assert "BASE" in out and "NOVEL" in out
        rep = json.loads(report.read_text())
        assert rep["splits"]["base"]["num_evaluated"] == 2
        assert rep["splits"]["novel"]["num_evaluated"] == 1

    def test_overlapping_splits_exit_one(self, capsys, scene_dir, tmp_path):
        protos = tmp_path / "protos.tnsr"
        dets = tmp_path / "dets.json"
        run(capsys, "proto", "build", "--refs", str(scene_dir / "refs.json"),
            "--out", str(protos))
        run(capsys, "match", "run",
            "--target-map", str(scene_dir / "map.tnsr"),
            "--target-meta", str(scene_dir / "map.meta.json"),
            "--proposals", str(scene_dir / "props.json"),
            "--protos", str(protos), "--out", str(dets))
        splits = tmp_path / "splits.json"
        splits.write_text(json.dumps({"base": [1, 2], "novel": [2, 3]}))
        code, _, err = run(capsys, "eval", "coco", "--dets", str(dets),
                           "--gt", str(scene_dir / "gt.json"),
                           "--splits", str(splits))
        assert code == 1


class TestTsneCli:
    def test_embedding_svg_and_report(self, capsys, tmp_path):
        from semprobe.store import write_tensor
        from semprobe.synthetic import BlobSpec, gen_blobs

        fm, lv = gen_blobs(BlobSpec(num_classes=3, dim=8, per_class=20,
                                    separation=10, seed=0))
        feats, labels = tmp_path / "f.tnsr", tmp_path / "l.tnsr"
        write_tensor(feats, fm.features)
        write_tensor(labels, lv.labels)
        out, svg, report = tmp_path / "emb.tnsr", tmp_path / "emb.svg", tmp_path / "emb.json"
        code, stdout, _ = run(
            capsys, "tsne", "--features", str(feats), "--labels", str(labels),
            "--perplexity", "10", "--iterations", "250", "--seed", "0",
            "--out", str(out), "--svg", str(svg), "--report", str(report),
        )
        assert code == 0
        assert read_tensor(out).shape == (60, 2)
        assert svg.read_text().startswith("<svg")
        rep = json.loads(report.read_text())
        assert rep["silhouette"] > 0.5
        assert "final_kl" in stdout

    def test_same_seed_same_bytes(self, capsys, tmp_path):
        from semprobe.store import write_tensor
        from semprobe.synthetic import BlobSpec, gen_blobs

        fm, _ = gen_blobs(BlobSpec(num_classes=2, dim=4, per_class=15, seed=3))
        feats = tmp_path / "f.tnsr"
        write_tensor(feats, fm.features)
        outs = []
        for name in ("a", "b"):
            out = tmp_path / f"{name}.tnsr"
            code, _, _ = run(capsys, "tsne", "--features", str(feats),
                             "--perplexity", "5", "--iterations", "250",
                             "--seed", "9", "--out", str(out))
            assert code == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
