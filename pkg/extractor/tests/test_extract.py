import json

import numpy as np
import pytest

from cropextract.backbones import BackboneError, extract_features, load_backbone
from cropextract.cli import main
from cropextract.extract import stable_track_id, write_dataset
from cropextract.manifest import ManifestError, load_manifest


@pytest.fixture(scope="session")
def backbone(tiny_checkpoint):
    return load_backbone("vit", str(tiny_checkpoint))


def test_unknown_backbone_rejected():
    with pytest.raises(BackboneError):
        load_backbone("resnet50")


def test_feature_dim_matches_model_config(backbone):
    rng = np.random.default_rng(0)
    crops = [rng.integers(0, 256, size=(224, 224, 3), dtype=np.uint8) for _ in range(3)]
    vectors = extract_features(crops, backbone)
    assert vectors.shape == (3, backbone.model.config.hidden_size)
    assert vectors.dtype == np.float32


def test_identical_input_gives_identical_vectors(backbone):
    rng = np.random.default_rng(1)
    crop = rng.integers(0, 256, size=(224, 224, 3), dtype=np.uint8)
    a = extract_features([crop], backbone)
    b = extract_features([crop], backbone)
    assert np.array_equal(a, b)


def test_batch_order_does_not_change_outputs(backbone):
    rng = np.random.default_rng(2)
    crops = [rng.integers(0, 256, size=(224, 224, 3), dtype=np.uint8) for _ in range(5)]
    forward = extract_features(crops, backbone)
    backward = extract_features(crops[::-1], backbone)[::-1]
    assert np.allclose(forward, backward, rtol=0, atol=1e-5)


def test_manifest_validation_lists_problems(manifest_dir, tmp_path):
    doc = json.loads((manifest_dir / "manifest.json").read_text())
    doc["images"][0].pop("variety")
    doc["images"][1]["path"] = "missing.png"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(ManifestError) as exc:
        load_manifest(bad)
    message = str(exc.value)
    assert "missing variety" in message
    assert "not found" in message


def test_manifest_rejects_out_of_season_date(manifest_dir, tmp_path):
    doc = json.loads((manifest_dir / "manifest.json").read_text())
    doc["images"][0]["date"] = "2025-01-01"
    bad = tmp_path / "late.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(ManifestError):
        load_manifest(bad)


def test_write_dataset_counts_and_validation(manifest_dir, backbone, tmp_path):
    import croptraj

    manifest = load_manifest(manifest_dir / "manifest.json")
    written = write_dataset(manifest, backbone, tmp_path / "out", patch_size=224)
    assert set(written) == {"patch", "berry"}

    patches = croptraj.read_features_file(written["patch"])
    # 2 images x (4 x 2) tiles of 224 in an 896 x 448 frame
    assert len(patches) == 16
    assert patches.feature_dim == backbone.feature_dim
    assert patches.span_days == 108.0
    assert patches.class_names == ["A", "B"]
    assert patches.scale is croptraj.Scale.PATCH
    assert backbone.describe() == patches.backbone
    assert all(r.rot is None for r in patches.records)
    # left tiles tagged left, right tiles right (4-wide grid)
    tags = {r.spatial_tag for r in patches.records}
    assert tags == {croptraj.SpatialTag.LEFT, croptraj.SpatialTag.RIGHT}

    berries = croptraj.read_features_file(written["berry"])
    assert len(berries) == 3
    assert berries.scale is croptraj.Scale.BERRY
    assert all(r.rot is not None for r in berries.records)
    # the tracked berry keeps one id across sessions
    b1 = stable_track_id("berry", "r1-b1")
    sessions = sorted(r.session_index for r in berries.records if r.track_id == b1)
    assert sessions == [0, 1]


def test_time_normalization_from_dates(manifest_dir, backbone, tmp_path):
    import croptraj

    manifest = load_manifest(manifest_dir / "manifest.json")
    written = write_dataset(manifest, backbone, tmp_path / "out")
    patches = croptraj.read_features_file(written["patch"])
    by_session = {r.session_index: r.time_norm for r in patches.records}
    # 2024-06-12 is day 11, 2024-07-15 day 44 of the 108-day season
    assert by_session[0] == pytest.approx(11 / 108, abs=1e-6)
    assert by_session[1] == pytest.approx(44 / 108, abs=1e-6)


def test_split_round_trips_through_primary(manifest_dir, backbone, tmp_path):
    import croptraj

    manifest = load_manifest(manifest_dir / "manifest.json")
    written = write_dataset(manifest, backbone, tmp_path / "out")
    patches = croptraj.read_features_file(written["patch"])
    train, test = croptraj.split_train_test(patches, 0.7, seed=0)
    assert len(train) + len(test) == len(patches)
    assert all(r.spatial_tag is croptraj.SpatialTag.LEFT for r in train.records)
    assert all(r.spatial_tag is croptraj.SpatialTag.RIGHT for r in test.records)


def test_acceptance_cli_deterministic_bytes(manifest_dir, tiny_checkpoint, tmp_path):
    import croptraj

    out1, out2 = tmp_path / "run1", tmp_path / "run2"
    for out in (out1, out2):
        rc = main([
            "--manifest", str(manifest_dir / "manifest.json"),
            "--backbone", "vit",
            "--checkpoint", str(tiny_checkpoint),
            "--out", str(out),
        ])
        assert rc == 0
    for name in ("patches.tltf", "berries.tltf"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    # files validate and tiling formula holds: 2 images -> 2 * floor(896/224) * floor(448/224)
    patches = croptraj.read_features_file(out1 / "patches.tltf")
    assert len(patches) == 2 * (896 // 224) * (448 // 224)
    print("SECONDARY ACCEPTANCE PASS: extractor contract "
          f"({len(patches)} patch records, deterministic bytes, validated)")


def test_cli_bad_inputs(manifest_dir, tiny_checkpoint, tmp_path):
    rc = main([
        "--manifest", str(tmp_path / "nope.json"),
        "--backbone", "vit",
        "--checkpoint", str(tiny_checkpoint),
        "--out", str(tmp_path / "o"),
    ])
    assert rc == 2
    rc = main([
        "--manifest", str(manifest_dir / "manifest.json"),
        "--backbone", "alexnet",
        "--out", str(tmp_path / "o"),
    ])
    assert rc == 2
