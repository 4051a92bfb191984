#!/usr/bin/env python3
"""测试等尺度约束的组装与条件化"""
import numpy as np
import pytest

from src.constraints import (
    Configuration,
    ScaleRecord,
    assemble,
    condition_frames,
    equations_from_coordinates,
    pair_constraint,
)
from src.errors import AllZeroCoordinates, CollinearFrame, WrongSampleSize
from src.geometry import AffineFrame, RectifyModel, alpha, orient_frame, rectified_scale
from src.ransac import draw_sample
from src.synth import gen_scene


@pytest.fixture(scope="module")
def scene():
    return gen_scene(np.random.default_rng(21), lambda_gt=-3.0)


def _conditioned(scene, config, seed=0):
    sample = draw_sample(scene.frames, config, np.random.default_rng(seed))
    return condition_frames([orient_frame(f) for f in sample.frames])


def test_configuration_table():
    assert [c.frame_count for c in Configuration] == [6, 5, 4, 4]
    assert [c.equation_count for c in Configuration] == [3, 4, 6, 2]
    assert [c.expected_solutions for c in Configuration] == [54, 45, 36, 9]
    assert Configuration("22").estimates_distortion is False
    assert Configuration.C222.solver_name == "H222_l_lambda"
    assert Configuration.C22_FIXED.solver_name == "H22_l"


@pytest.mark.parametrize("config", [Configuration.C222, Configuration.C32, Configuration.C4])
def test_residual_vanishes_at_ground_truth(scene, config):
    frames, record = _conditioned(scene, config)
    system = assemble(config, frames, record=record)
    assert system.n_equations == config.equation_count
    assert system.degree == 4
    x = system.from_model(scene.gt_model)
    assert system.relative_residual(x) <= 1e-9


def test_fixed_lambda_system(scene):
    config = Configuration.C22_FIXED
    frames, record = _conditioned(scene, config)
    system = assemble(config, frames, fixed_lambda=scene.gt_model.lam, record=record)
    assert system.variables == ("l1", "l2")
    assert system.degree == 3
    assert system.relative_residual(system.from_model(scene.gt_model)) <= 1e-9


def test_model_round_trip_through_conditioning(scene):
    frames, record = _conditioned(scene, Configuration.C4)
    system = assemble(Configuration.C4, frames, record=record)
    model = system.to_model(system.from_model(scene.gt_model))
    np.testing.assert_allclose(model.as_vector(), scene.gt_model.as_vector(), rtol=1e-12)


def test_pair_constraint_zero_for_equal_scales():
    """两帧真值尺度相等时约束为零，尺度不等时非零"""
    f = AffineFrame(np.array([[0.1, 0.3], [0.1, 0.1], [0.3, 0.1]]))
    g = AffineFrame(f.xy + np.array([0.05, -0.2]))
    poly = pair_constraint(f, g)
    # λ = 0、l = 0 时两帧都是原始行列式，平移不改变行列式
    assert poly.evaluate([0.0, 0.0, 0.0]) == pytest.approx(0.0, abs=1e-15)
    h = AffineFrame(f.xy * 2.0)
    assert abs(pair_constraint(f, h).evaluate([0.0, 0.0, 0.0])) > 1e-6


def test_pair_constraint_sign_matches_scales():
    rng = np.random.default_rng(2)
    f = AffineFrame(rng.uniform(-0.3, 0.3, size=(3, 2)))
    g = AffineFrame(rng.uniform(-0.3, 0.3, size=(3, 2)))
    x = np.array([-1.5, 0.2, 0.4])
    m = RectifyModel.from_vector(x)
    a_f = np.prod(alpha(f.pts, m))
    a_g = np.prod(alpha(g.pts, m))
    expected = a_g * a_f * (rectified_scale(f, m) - rectified_scale(g, m))
    assert pair_constraint(f, g).evaluate(x) == pytest.approx(expected, rel=1e-9, abs=1e-14)


def test_integer_coordinates_give_exact_coefficients():
    coords = [[[1, 2], [0, 0], [3, -1]], [[2, 5], [1, 1], [4, 0]], [[-3, 1], [0, 2], [1, -2]], [[5, 5], [2, 3], [6, 1]]]
    rhos = [[x * x + y * y for x, y in frame] for frame in coords]
    eqs = equations_from_coordinates(Configuration.C4, coords, rhos)
    assert len(eqs) == 6
    for eq in eqs:
        assert all(isinstance(c, int) for c in eq.terms.values())


def test_star_equations_subset():
    config = Configuration.C4
    frames = [AffineFrame(np.array([[0.0, 0.1 + k], [0.0, 0.0], [0.1 + k, 0.0]]) * 0.1) for k in range(4)]
    full = assemble(config, frames)
    star = assemble(config, frames, all_pairs=False)
    assert full.n_equations == 6
    assert star.n_equations == 3


def test_wrong_sample_size_and_lambda_rules():
    frames = [AffineFrame.from_points((0, 1), (0, 0), (1, 0))] * 3
    with pytest.raises(WrongSampleSize):
        assemble(Configuration.C4, frames)
    four = frames + frames[:1]
    with pytest.raises(ValueError):
        assemble(Configuration.C22_FIXED, four)
    with pytest.raises(ValueError):
        assemble(Configuration.C4, four, fixed_lambda=-1.0)


def test_collinear_frame_rejected():
    good = AffineFrame.from_points((0, 1), (0, 0), (1, 0))
    bad = AffineFrame(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))
    with pytest.raises(CollinearFrame):
        assemble(Configuration.C4, [good, good, good, bad])


def test_condition_frames_scales():
    frames = [AffineFrame(np.array([[3.0, 4.0], [0.0, 5.0], [5.0, 0.0]]))]
    conditioned, record = condition_frames(frames)
    assert record.coord_scale == pytest.approx(5.0)
    assert record.rsq_scale == pytest.approx(25.0)
    np.testing.assert_allclose(np.linalg.norm(conditioned[0].xy, axis=1), 1.0)
    assert ScaleRecord(2.0, 8.0).rho_factor == pytest.approx(0.5)
    with pytest.raises(AllZeroCoordinates):
        condition_frames([AffineFrame(np.zeros((3, 2)))])


def test_pair_constraint_antisymmetric_and_zero_on_itself():
    rng = np.random.default_rng(5)
    f = AffineFrame(rng.uniform(-0.3, 0.3, size=(3, 2)))
    g = AffineFrame(rng.uniform(-0.3, 0.3, size=(3, 2)))
    for x in rng.uniform(-1.0, 1.0, size=(5, 3)):
        assert pair_constraint(f, g).evaluate(x) == pytest.approx(-pair_constraint(g, f).evaluate(x), rel=1e-12)
        assert pair_constraint(f, f).evaluate(x) == 0.0
    assert all(c == 0 for c in pair_constraint(f, f).terms.values())


def _radial_determinant(frame, rho_factor):
    """N(λ) = det[x y 1+λρ]，按 λ 线性；返回 (N(0), dN/dλ)"""
    xy = frame.xy
    rho = np.sum(xy * xy, axis=1) * rho_factor
    return np.linalg.det(np.column_stack([xy, np.ones(3)])), np.linalg.det(np.column_stack([xy, rho]))


def test_star_pairs_admit_a_curve_that_all_pairs_exclude(scene):
    """只取与首帧的配对时，首帧 N = 0 且某点 α = 0 的整条曲线都满足方程；全部配对排除它"""
    config = Configuration.C4
    frames, record = _conditioned(scene, config, seed=4)
    star = assemble(config, frames, record=record, all_pairs=False)
    full = assemble(config, frames, record=record)

    n0, dn = _radial_determinant(frames[0], record.rho_factor)
    lam0 = -n0 / dn
    (x, y), = frames[0].xy[:1]
    rho = (x * x + y * y) * record.rho_factor
    for l1 in (-0.7, 0.3, 1.1):
        # 首帧第一点 α = 1 + λρ + l1 x + l2 y = 0
        l2 = -(1.0 + lam0 * rho + l1 * x) / y
        point = np.array([lam0, l1, l2])
        assert star.relative_residual(point) < 1e-9
        assert full.relative_residual(point) > 1e-4

    truth = full.from_model(scene.gt_model)
    assert full.relative_residual(truth) <= 1e-9
