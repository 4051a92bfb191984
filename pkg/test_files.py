#!/usr/bin/env python3
"""测试帧文件/结果文件模型与图像重映射"""
import json

import numpy as np
import pytest
from pydantic import ValidationError

from src.errors import DegenerateAlpha, FrameFileError
from src.files import FrameEntry, FrameFile, ModelEntry, ResultFile, rectify_frames
from src.geometry import AffineFrame, DivisionModel, FrameSet, Normalization, RectifyModel, VanishingLine
from src.remap import RemapMode, build_maps, remap_image
from src.synth import gen_scene


@pytest.fixture(scope="module")
def scene():
    return gen_scene(np.random.default_rng(21), lambda_gt=-3.0)


def test_frame_entry_validation():
    FrameEntry(points=[[0, 1], [0, 0], [1, 0]])
    with pytest.raises(ValidationError):
        FrameEntry(points=[[0, 1], [0, 0]])
    with pytest.raises(ValidationError):
        FrameEntry(points=[[0, 1], [0, 0], [float("nan"), 0]])
    with pytest.raises(ValidationError):
        FrameEntry(points=[[0, 1], [0, 0], [1, 0]], cluster=-1)


def test_clusters_must_be_contiguous():
    entry = {"points": [[0, 1], [0, 0], [1, 0]]}
    with pytest.raises(ValidationError):
        FrameFile(frames=[{**entry, "cluster": 0}, {**entry, "cluster": 2}])
    doc = FrameFile(frames=[{**entry, "cluster": 1}, {**entry, "cluster": 0}])
    assert len(doc.to_frameset().clusters()) == 2


def test_scene_file_round_trip(scene, tmp_path):
    path = FrameFile.from_scene(scene).save(tmp_path / "scene.json")
    raw = json.loads(path.read_text(encoding="utf-8"))
    assert raw["format"] == "rr-frames"
    assert raw["ground_truth"]["lambda"] == scene.gt_model.lam
    assert raw["convention"]["scale"] == "1/(width+height)"

    doc = FrameFile.load(path)
    fs = doc.to_frameset()
    np.testing.assert_allclose(fs.points(), scene.frames.points(), atol=1e-12)
    np.testing.assert_array_equal(fs.cluster_ids, scene.frames.cluster_ids)
    assert doc.ground_truth.to_model().lam == scene.gt_model.lam
    assert doc.ground_truth.motion == scene.motion.value


def test_load_errors(tmp_path):
    with pytest.raises(FrameFileError):
        FrameFile.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text('{"format": "rr-frames", "version": 2, "frames": []}', encoding="utf-8")
    with pytest.raises(FrameFileError) as info:
        FrameFile.load(bad)
    assert info.value.code == 60


def test_model_entry_alias_and_pixels():
    norm = Normalization(640, 480)
    model = RectifyModel(VanishingLine(0.1, -0.2), DivisionModel(-2.0))
    entry = ModelEntry.from_model(model, norm)
    dumped = json.loads(entry.model_dump_json(by_alias=True))
    assert dumped["lambda"] == -2.0
    assert dumped["lambda_px"] == pytest.approx(-2.0 / 1120 ** 2)
    assert ModelEntry.model_validate(dumped).to_model().as_vector().tolist() == model.as_vector().tolist()


def test_result_file_round_trip(tmp_path):
    doc = ResultFile(command="solve", config="4", models=[ModelEntry(lambda_=-1.0, l1=0.0, l2=0.5)], flags=["x"])
    path = doc.save(tmp_path / "out" / "r.json")
    loaded = ResultFile.load(path)
    assert loaded.models[0].lambda_ == -1.0
    assert '"lambda": -1.0' in loaded.to_json()


def test_rectify_frames_flags_points_at_infinity():
    frames = [
        AffineFrame(np.array([[0.0, 0.1], [0.0, 0.0], [0.1, 0.0]])),
        AffineFrame(np.array([[-1.0, 0.1], [-1.0, 0.0], [-0.9, 0.0]])),
    ]
    model = RectifyModel(VanishingLine(1.0, 0.0))
    rows = rectify_frames(FrameSet(frames, [0, 0]), model)
    assert not rows[0].flagged
    np.testing.assert_allclose(rows[0].points[1], [0.0, 0.0])
    assert rows[1].flagged
    assert rows[1].flags == [DegenerateAlpha.__name__]
    assert rows[1].points[0] is None and rows[1].points[1] is None
    assert rows[1].points[2] is not None


def test_identity_undistort_maps():
    norm = Normalization(64, 48)
    map_x, map_y = build_maps(RectifyModel(), norm)
    xs, ys = np.meshgrid(np.arange(64), np.arange(48))
    np.testing.assert_allclose(map_x, xs, atol=1e-3)
    np.testing.assert_allclose(map_y, ys, atol=1e-3)


def test_remap_image_identity_and_distortion():
    image = (np.add.outer(np.arange(48), np.arange(64)) % 256).astype(np.uint8)
    same = remap_image(image, RectifyModel())
    assert np.max(np.abs(same.astype(int) - image.astype(int))) <= 1

    barrel = RectifyModel(distortion=DivisionModel(-2.0))
    out = remap_image(image, barrel, RemapMode.UNDISTORT)
    assert out.shape == image.shape
    assert not np.array_equal(out, image)
