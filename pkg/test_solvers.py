#!/usr/bin/env python3
"""测试最小求解器：真值恢复、可行性、退化检查与模板目录"""
import warnings

import numpy as np
import pytest

from src.constraints import Configuration
from src.errors import DegenerateSample, WrongSampleSize
from src.geometry import AffineFrame
from src.polysolve import evaluate_template, sample_and_select
from src.ransac import draw_sample
from src.solvers import (
    DegeneracyFlag,
    MinimalSample,
    TemplateStore,
    check_degeneracy,
    reference_template,
    solve_minimal,
    system_shape,
)
from src.synth import gen_scene


def _relative_lambda_error(candidates, lam_gt):
    if not candidates:
        return np.inf
    return min(abs(c.model.lam - lam_gt) / abs(lam_gt) for c in candidates)


@pytest.fixture(scope="module")
def store():
    return TemplateStore(None)


NOISELESS_SCENES = 100


@pytest.fixture(scope="module")
def scenes():
    rng = np.random.default_rng(100)
    return [gen_scene(rng) for _ in range(5)]


@pytest.fixture(scope="module")
def many_scenes():
    rng = np.random.default_rng(300)
    return [gen_scene(rng) for _ in range(NOISELESS_SCENES)]


@pytest.mark.parametrize("config", [Configuration.C222, Configuration.C32, Configuration.C4])
def test_noiseless_lambda_recovery(config, many_scenes, store):
    """无噪场景上至少 95% 的样本把 λ 恢复到 1e-6 相对误差以内，且不产生复数截断警告"""
    hits = 0
    with warnings.catch_warnings():
        warnings.simplefilter("error", np.exceptions.ComplexWarning)
        for k, scene in enumerate(many_scenes):
            sample = draw_sample(scene.frames, config, np.random.default_rng(k))
            try:
                candidates = solve_minimal(sample, store=store)
            except DegenerateSample:
                continue
            assert len(candidates) <= config.expected_solutions
            assert [c.residual for c in candidates] == sorted(c.residual for c in candidates)
            for c in candidates:
                assert c.feasible == (-8.0 <= c.model.lam <= 0.5)
            if _relative_lambda_error(candidates, scene.gt_model.lam) < 1e-6:
                hits += 1
    assert hits >= 0.95 * NOISELESS_SCENES


def test_fixed_lambda_recovers_vanishing_line(scenes, store):
    hits = 0
    for k, scene in enumerate(scenes):
        sample = draw_sample(scene.frames, Configuration.C22_FIXED, np.random.default_rng(k))
        candidates = solve_minimal(sample, scene.gt_model.lam, store=store)
        assert all(c.feasible for c in candidates)
        gt = scene.gt_model.line
        err = min((np.hypot(c.model.l1 - gt.l1, c.model.l2 - gt.l2) for c in candidates), default=np.inf)
        if err < 1e-6 * (1.0 + gt.norm):
            hits += 1
    assert hits >= 4


def test_pinhole_default_for_fixed_solver(store):
    scene = gen_scene(np.random.default_rng(8), lambda_gt=0.0)
    sample = draw_sample(scene.frames, Configuration.C22_FIXED, np.random.default_rng(0))
    candidates = solve_minimal(sample, store=store)
    assert candidates
    assert all(c.model.lam == 0.0 for c in candidates)


def test_fronto_parallel_pinhole_gives_zero_model(store):
    scene = gen_scene(np.random.default_rng(9), lambda_gt=0.0, fronto_parallel=True)
    sample = draw_sample(scene.frames, Configuration.C4, np.random.default_rng(1))
    candidates = solve_minimal(sample, store=store)
    best = min(candidates, key=lambda c: np.linalg.norm(c.model.as_vector()))
    np.testing.assert_allclose(best.model.as_vector(), [0.0, 0.0, 0.0], atol=1e-6)


def test_fixed_lambda_rejected_for_distortion_solver():
    scene = gen_scene(np.random.default_rng(10))
    sample = draw_sample(scene.frames, Configuration.C4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        solve_minimal(sample, fixed_lambda=-1.0)


def test_sample_shapes():
    f = AffineFrame.from_points((0, 1), (0, 0), (1, 0))
    with pytest.raises(WrongSampleSize):
        MinimalSample(Configuration.C222, ((f, f), (f, f)))
    with pytest.raises(WrongSampleSize):
        MinimalSample.from_frames(Configuration.C4, [f, f, f])
    sample = MinimalSample.from_frames(Configuration.C32, [f] * 5)
    assert [len(g) for g in sample.groups] == [3, 2]
    regions = MinimalSample.from_regions_fixed(f, f.reversed(), f)
    assert regions.config is Configuration.C22_FIXED
    assert regions.groups[0][0] is regions.groups[1][0]


def test_collinear_sample_is_degenerate():
    good = AffineFrame(np.array([[0.0, 0.1], [0.0, 0.0], [0.1, 0.0]]))
    bad = AffineFrame(np.array([[0.0, 0.0], [0.1, 0.1], [0.2, 0.2]]))
    sample = MinimalSample(Configuration.C4, ((good, good, good, bad),))
    with pytest.raises(DegenerateSample) as info:
        solve_minimal(sample)
    assert info.value.flags == [DegeneracyFlag.COLLINEAR.value]
    assert DegeneracyFlag.COLLINEAR in check_degeneracy(sample)


def test_concentric_groups_flagged():
    base = np.array([[0.05, 0.2], [0.1, 0.1], [0.2, 0.05]])
    rotations = [np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]]) for t in (0.0, 0.7, 1.9, 2.8)]
    group = tuple(AffineFrame(base @ r.T) for r in rotations)
    sample = MinimalSample(Configuration.C4, (group,))
    assert DegeneracyFlag.CONCENTRIC in check_degeneracy(sample)

    shifted = tuple(AffineFrame(base + 0.05 * k) for k in range(4))
    assert DegeneracyFlag.CONCENTRIC not in check_degeneracy(MinimalSample(Configuration.C4, (shifted,)))


def test_template_store_round_trip(tmp_path, caplog):
    template = reference_template(Configuration.C22_FIXED)
    store = TemplateStore(str(tmp_path))
    assert store.path_for(Configuration.C22_FIXED).name == "template_22.json"
    path = store.save(Configuration.C22_FIXED, template)
    assert path.exists()

    fresh = TemplateStore(str(tmp_path))
    loaded = fresh.get(Configuration.C22_FIXED)
    assert loaded.columns == template.columns

    with caplog.at_level("WARNING"):
        fallback = fresh.get(Configuration.C4)
    assert fallback.expected_solutions == 36
    assert "template_4.json" in caplog.text


@pytest.mark.parametrize("config", [Configuration.C4, Configuration.C22_FIXED])
def test_duplicate_frames_are_degenerate(scenes, store, config):
    sample = draw_sample(scenes[0].frames, config, np.random.default_rng(0))
    first = sample.groups[0]
    doubled = (first[0], first[0]) + first[2:]
    duplicated = MinimalSample(config, (doubled,) + sample.groups[1:])
    with pytest.raises(DegenerateSample):
        solve_minimal(duplicated, -4.0 if config is Configuration.C22_FIXED else None, store=store)


@pytest.mark.parametrize("config", [Configuration.C222, Configuration.C4])
def test_reversed_frames_give_same_models(scenes, store, config):
    """点序反转的帧描述同一区域，求解结果不变"""
    sample = draw_sample(scenes[1].frames, config, np.random.default_rng(3))
    flipped = MinimalSample(config, tuple(tuple(f.reversed() for f in g) for g in sample.groups))
    plain = solve_minimal(sample, store=store)
    mirrored = solve_minimal(flipped, store=store)
    assert len(plain) == len(mirrored)
    for a, b in zip(plain, mirrored):
        np.testing.assert_allclose(a.model.as_vector(), b.model.as_vector(), rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("config", [Configuration.C222, Configuration.C32, Configuration.C4])
def test_selected_basis_not_worse_than_default(config):
    shape = system_shape(config)
    seen = []
    best = sample_and_select(shape, 2, 8, seed=1, include_default=True, on_candidate=seen.append)
    default = seen[0]
    assert default.basis_seed is None
    assert best.median_residual <= default.median_log_residual

    rng = np.random.default_rng(77)
    fresh = [shape.test_instance(rng) for _ in range(10)]
    assert evaluate_template(best, fresh) <= -6.0
