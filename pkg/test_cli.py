#!/usr/bin/env python3
"""测试命令行：各子命令的输出文件与退出码"""
import json

import cv2
import numpy as np
import pytest

from main import main
from src.files import FrameFile, ResultFile
from src.geometry import FrameSet


@pytest.fixture(autouse=True)
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("RR_LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.delenv("RR_TEMPLATE_DIR", raising=False)
    return tmp_path


@pytest.fixture
def scene_file(workdir):
    path = workdir / "scene.json"
    assert main(["gen-scene", "--seed", "4", "--lambda", "-4", "--out", str(path)]) == 0
    return path


def test_gen_scene_writes_ground_truth(scene_file):
    doc = FrameFile.load(scene_file)
    assert len(doc.frames) == 20
    assert doc.ground_truth.lambda_ == -4.0


def test_solve_writes_models(scene_file, workdir):
    out = workdir / "solve.json"
    assert main(["solve", str(scene_file), "--config", "22", "--lambda", "-4", "--out", str(out)]) == 0
    raw = json.loads(out.read_text(encoding="utf-8"))
    assert raw["command"] == "solve"
    assert all("lambda" in m for m in raw["models"])
    result = ResultFile.load(out)
    assert result.details["n_feasible"] == len(result.models)
    assert all(m.lambda_ == pytest.approx(-4.0) for m in result.models)


def test_solve_with_too_few_frames(scene_file, workdir, capsys):
    doc = FrameFile.load(scene_file)
    fs = doc.to_frameset()
    small = FrameFile.from_frameset(FrameSet(fs.frames[:3], [0, 0, 0]), doc.normalization())
    path = small.save(workdir / "small.json")
    assert main(["solve", str(path), "--config", "4"]) == 20
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "WrongSampleSize"
    assert err["code"] == 20


def test_missing_frames_file(workdir):
    assert main(["solve", str(workdir / "nope.json")]) == 60


def test_unwritable_output(scene_file, workdir):
    blocker = workdir / "blocker"
    blocker.write_text("", encoding="utf-8")
    code = main(["solve", str(scene_file), "--config", "22", "--out", str(blocker / "r.json")])
    assert code == 70


def test_ransac_command(scene_file, workdir):
    out = workdir / "ransac.json"
    assert main(["ransac", str(scene_file), "--config", "4", "--iterations", "5", "--seed", "1",
                 "--out", str(out)]) == 0
    result = ResultFile.load(out)
    assert len(result.models) == 1
    assert result.score is not None and result.score > 0
    assert result.inliers == sorted(result.inliers)


def test_rectify_points_identity_echoes_input(scene_file, workdir):
    out = workdir / "rect.json"
    assert main(["rectify-points", str(scene_file), "--out", str(out)]) == 0
    result = ResultFile.load(out)
    fs = FrameFile.load(scene_file).to_frameset()
    assert len(result.rectified) == len(fs)
    for row, frame in zip(result.rectified, fs.frames):
        assert not row.flagged
        np.testing.assert_allclose(np.array(row.points), frame.xy, atol=1e-12)


def test_rectify_points_with_model_file(scene_file, workdir):
    model_path = ResultFile(command="solve", models=[
        {"lambda": -4.0, "l1": 0.0, "l2": 0.0, "feasible": True},
    ]).save(workdir / "model.json")
    out = workdir / "rect.json"
    assert main(["rectify-points", str(scene_file), "--model", str(model_path), "--out", str(out)]) == 0
    assert ResultFile.load(out).models[0].lambda_ == -4.0


def test_bench_omit_runtime_is_reproducible(workdir):
    outputs = []
    for name in ("a.csv", "b.csv"):
        path = workdir / name
        assert main(["bench", "solutions", "--scenes", "2", "--config", "22", "--omit-runtime",
                     "--out", str(path)]) == 0
        outputs.append(path.read_bytes())
    assert outputs[0] == outputs[1]
    lines = outputs[0].decode("utf-8").splitlines()
    assert lines[0] == "scene_id,solver,sigma,warp_rms_px,rel_lambda_err,n_real,n_feasible,runtime_ms"
    assert len(lines) == 3
    assert all(line.endswith(",") for line in lines[1:])


def test_remap_image_command(workdir):
    image = (np.add.outer(np.arange(40), np.arange(60)) % 256).astype(np.uint8)
    src = workdir / "in.png"
    cv2.imwrite(str(src), image)
    dst = workdir / "out.png"
    assert main(["remap-image", str(src), "--lambda", "-2", "--out", str(dst)]) == 0
    assert cv2.imread(str(dst), cv2.IMREAD_UNCHANGED).shape == image.shape
    assert main(["remap-image", str(workdir / "missing.png"), "--out", str(dst)]) == 60


def test_run_log_written(scene_file, workdir):
    logs = list((workdir / "logs").glob("run_log_*.md"))
    assert len(logs) == 1
    text = logs[0].read_text(encoding="utf-8")
    assert "GEN-SCENE" in text
