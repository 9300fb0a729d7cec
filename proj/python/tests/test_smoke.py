import json

import numpy as np
import pytest

import evexplain as evx


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    names = evx.write_toy_dataset(str(root), per_class=6, size=16, seed=3)
    return root, names


def test_version():
    assert evx.__version__


def test_pixel_normalization():
    assert evx.normalize_pixel(0.0) == -1.0
    assert evx.normalize_pixel(255.0) == 1.0


def test_scan_and_batch(toy):
    root, names = toy
    manifest = evx.scan(str(root), seed=13)
    assert [c["name"] for c in manifest["classes"]] == names
    images, labels, ids = evx.load_batch(manifest, "train", [0, 1], 16)
    assert images.shape == (2, 16, 16, 3)
    assert images.min() >= -1.0 and images.max() <= 1.0
    assert len(labels) == len(ids) == 2


def test_errors_carry_code(tmp_path):
    with pytest.raises(evx.Error, match="UnreadableRoot"):
        evx.scan(str(tmp_path / "missing"))


def test_model_predict_and_maps(toy, tmp_path):
    root, names = toy
    model = evx.Model.build({"backbone_id": "evnet-scratch", "input_size": 16,
                             "num_classes": 3}, names)
    assert "block4_conv_act" in model.layer_names
    x = np.random.default_rng(0).uniform(-1, 1, (1, 16, 16, 3))
    ids, probs = model.predict(x)
    assert probs.shape == (1, 3)
    assert abs(probs.sum() - 1.0) < 1e-9
    grid = model.grad_cam(x, ids[0])
    assert grid.shape == (16, 16)
    assert 0.0 <= grid.min() and grid.max() <= 1.0
    np.testing.assert_allclose(model.cam(x, ids[0]), grid, atol=1e-6)
    assert len(model.grad_cam_weights(x, 0)) == 32

    path = tmp_path / "m.ckpt"
    model.save(str(path))
    again = evx.Model.load(str(path))
    np.testing.assert_allclose(again.logits(x), model.logits(x), atol=1e-9)
    assert again.config == model.config


def test_finetune_and_evaluate(toy):
    root, names = toy
    manifest = evx.scan(str(root), seed=13)
    model = evx.Model.build({"backbone_id": "evnet-scratch", "input_size": 16,
                             "num_classes": 3, "epochs": 1, "batch_size": 4,
                             "lr_backbone": 1e-4, "lr_head": 1e-2}, names)
    record = model.finetune(manifest)
    assert len(record["epochs"]) == 1
    report = model.evaluate(manifest, "test")
    assert "Weighted Average" in evx.render_report_table(report)


def test_metrics():
    report = evx.compute_report([0, 0, 1, 1], [0, 1, 1, 1], ["a", "b"])
    assert report["per_class"][0]["precision"] == 1.0
    assert report["per_class"][0]["recall"] == 0.5
    assert evx.normalize_map(np.array([[2.0, 4.0]])).tolist() == [[0.0, 1.0]]


def test_study_service(tmp_path):
    images = tmp_path / "images"
    overlays = tmp_path / "overlays"
    (overlays / "a").mkdir(parents=True)
    (overlays / "a" / "1.png").write_bytes(b"png")
    report = evx.compute_report([0], [0], ["a", "b"])
    report["predictions"] = [{"sample_id": "a/1.jpg", "true_class": 0,
                              "predicted_class": 0, "confidence": 0.9}]
    svc = evx.StudyService(str(tmp_path / "state"))
    study = svc.create_study(report, str(images), str(overlays), 3)
    for who in ("x", "y", "z"):
        assert svc.register_annotator(who)
    assert svc.next_task(study, "x")["sample_id"] == "a/1.jpg"
    assert svc.submit_vote(study, "x", "a/1.jpg", 1) == (1, None)
    svc.submit_vote(study, "y", "a/1.jpg", 0)
    assert svc.submit_vote(study, "z", "a/1.jpg", 1) == (3, 1)
    assert svc.next_task(study, "x") is None
    assert json.loads(json.dumps(svc.report(study)))["weighted_average"] == 1.0
    with pytest.raises(evx.Error, match="DuplicateVote"):
        svc.submit_vote(study, "x", "a/1.jpg", 1)
    assert evx.majority_label([1, 0, 1]) == 1
