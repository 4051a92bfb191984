"""等尺度约束系统：把成组仿射帧的"校正后面积相等"写成 (λ, l1, l2) 的多项式方程

一对帧 i, j 的约束为 A_j N_i − A_i N_j = 0，其中 A = α1 α2 α3，
N = det[[x], [y], [α]] 按第三行展开。N 中 l 项相互抵消，只剩 λ 的一次式。
"""

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.errors import AllZeroCoordinates, CollinearFrame, WrongSampleSize
from src.geometry import TOL_COLLINEAR, AffineFrame, DivisionModel, RectifyModel, VanishingLine
from src.polynomial import Monomial, Poly, monomial_values

logger = logging.getLogger(__name__)


class Configuration(str, Enum):
    C222 = "222"
    C32 = "32"
    C4 = "4"
    C22_FIXED = "22"

    @property
    def group_sizes(self) -> Tuple[int, ...]:
        return _GROUP_SIZES[self]

    @property
    def frame_count(self) -> int:
        return sum(self.group_sizes)

    @property
    def equation_count(self) -> int:
        return sum(n * (n - 1) // 2 for n in self.group_sizes)

    @property
    def estimates_distortion(self) -> bool:
        return self is not Configuration.C22_FIXED

    @property
    def expected_solutions(self) -> int:
        return _EXPECTED_SOLUTIONS[self]

    @property
    def solver_name(self) -> str:
        if self.estimates_distortion:
            return f"H{self.value}_l_lambda"
        return f"H{self.value}_l"


_GROUP_SIZES = {
    Configuration.C222: (2, 2, 2),
    Configuration.C32: (3, 2),
    Configuration.C4: (4,),
    Configuration.C22_FIXED: (2, 2),
}

_EXPECTED_SOLUTIONS = {
    Configuration.C222: 54,
    Configuration.C32: 45,
    Configuration.C4: 36,
    Configuration.C22_FIXED: 9,
}

FREE_VARIABLES = ("lambda", "l1", "l2")
FIXED_VARIABLES = ("l1", "l2")


@dataclass(frozen=True)
class ScaleRecord:
    """条件化记录：坐标除以 coord_scale，r² 项按 rsq_scale 重标定

    条件化后的未知量为 λ' = λ·rsq_scale，l' = l·coord_scale。
    """

    coord_scale: float = 1.0
    rsq_scale: float = 1.0

    @property
    def rho_factor(self) -> float:
        return self.coord_scale * self.coord_scale / self.rsq_scale

    def condition(self, lam: float, l1: float, l2: float) -> Tuple[float, float, float]:
        return lam * self.rsq_scale, l1 * self.coord_scale, l2 * self.coord_scale

    def unscale(self, lam: float, l1: float, l2: float) -> Tuple[float, float, float]:
        return lam / self.rsq_scale, l1 / self.coord_scale, l2 / self.coord_scale


def condition_frames(frames: Sequence[AffineFrame]) -> Tuple[List[AffineFrame], ScaleRecord]:
    if not frames:
        raise ValueError("至少需要一个帧")
    xy = np.stack([f.xy for f in frames])
    mags = np.linalg.norm(xy, axis=-1)
    coord_scale = float(np.mean(mags))
    if not np.isfinite(coord_scale) or coord_scale <= 0.0:
        raise AllZeroCoordinates("帧坐标全为零，无法条件化")
    rsq_scale = float(np.mean(mags * mags))
    conditioned = [AffineFrame(p / coord_scale) for p in xy]
    return conditioned, ScaleRecord(coord_scale, rsq_scale)


def _frame_parts(xy, rho, lam) -> Tuple[Poly, Poly]:
    """返回一帧的 (A, N)；lam 为 None 时 λ 为未知量"""
    if lam is None:
        nvars = 3
        alphas = [Poly(3, {(0, 0, 0): 1, (1, 0, 0): r, (0, 1, 0): x, (0, 0, 1): y}) for (x, y), r in zip(xy, rho)]
        radial = [Poly(3, {(0, 0, 0): 1, (1, 0, 0): r}) for r in rho]
    else:
        nvars = 2
        alphas = [Poly(2, {(0, 0): 1 + lam * r, (1, 0): x, (0, 1): y}) for (x, y), r in zip(xy, rho)]
        radial = [Poly.constant(2, 1 + lam * r) for r in rho]

    (x1, y1), (x2, y2), (x3, y3) = xy
    m1 = x2 * y3 - x3 * y2
    m2 = x1 * y3 - x3 * y1
    m3 = x1 * y2 - x2 * y1
    # 按 α 行展开时 l 项相消，只保留径向部分
    numerator = radial[0] * m1 - radial[1] * m2 + radial[2] * m3
    if numerator.nvars != nvars:
        raise AssertionError("变量个数不一致")
    return alphas[0] * alphas[1] * alphas[2], numerator


def _pair(parts_i: Tuple[Poly, Poly], parts_j: Tuple[Poly, Poly]) -> Poly:
    a_i, n_i = parts_i
    a_j, n_j = parts_j
    return a_j * n_i - a_i * n_j


def _coordinates(frame: AffineFrame, rho_factor: float) -> Tuple[List[List[float]], List[float]]:
    xy = frame.xy
    rho = (np.sum(xy * xy, axis=1) * rho_factor).tolist()
    return xy.tolist(), rho


def _check_frame(frame: AffineFrame):
    if abs(frame.det) < TOL_COLLINEAR:
        raise CollinearFrame(f"帧点共线: det={frame.det:.3e}")


def pair_constraint(
    fi: AffineFrame,
    fj: AffineFrame,
    record: Optional[ScaleRecord] = None,
    fixed_lambda: Optional[float] = None,
) -> Poly:
    record = record or ScaleRecord()
    _check_frame(fi)
    _check_frame(fj)
    lam = None if fixed_lambda is None else fixed_lambda * record.rsq_scale
    parts_i = _frame_parts(*_coordinates(fi, record.rho_factor), lam)
    parts_j = _frame_parts(*_coordinates(fj, record.rho_factor), lam)
    return _pair(parts_i, parts_j)


def _group_pairs(config: Configuration, all_pairs: bool) -> List[Tuple[int, int]]:
    pairs = []
    start = 0
    for size in config.group_sizes:
        members = range(start, start + size)
        if all_pairs:
            pairs.extend(itertools.combinations(members, 2))
        else:
            pairs.extend((start, k) for k in members if k != start)
        start += size
    return pairs


def equations_from_coordinates(
    config: Configuration,
    coords: Sequence[Sequence[Sequence]],
    rhos: Sequence[Sequence],
    fixed_lambda=None,
    all_pairs: bool = True,
) -> List[Poly]:
    """由原始坐标列表构造方程；整数输入得到精确的整数系数"""
    if len(coords) != config.frame_count:
        raise WrongSampleSize(f"配置 {config.value} 需要 {config.frame_count} 个帧，得到 {len(coords)}")
    parts = [_frame_parts(xy, rho, fixed_lambda) for xy, rho in zip(coords, rhos)]
    return [_pair(parts[i], parts[j]) for i, j in _group_pairs(config, all_pairs)]


@dataclass(eq=False)
class ConstraintSystem:
    config: Configuration
    equations: List[Poly]
    record: ScaleRecord = field(default_factory=ScaleRecord)
    fixed_lambda: Optional[float] = None

    @property
    def variables(self) -> Tuple[str, ...]:
        return FREE_VARIABLES if self.fixed_lambda is None else FIXED_VARIABLES

    @property
    def nvars(self) -> int:
        return len(self.variables)

    @property
    def n_equations(self) -> int:
        return len(self.equations)

    @property
    def degree(self) -> int:
        return max(eq.degree() for eq in self.equations)

    def coefficient_matrix(self, monomials: Sequence[Monomial]) -> np.ndarray:
        return np.array([eq.coefficients(monomials) for eq in self.equations], dtype=float)

    def relative_residuals(self, x: Sequence[float]) -> np.ndarray:
        """|f(x)| / Σ|c_t m_t(x)|，逐方程"""
        out = []
        for eq in self.equations:
            monos = list(eq.terms)
            if not monos:
                out.append(0.0)
                continue
            coeffs = np.array([eq.terms[m] for m in monos])
            vals = monomial_values(np.asarray(x)[None, :], monos)[0]
            scale = np.sum(np.abs(coeffs * vals))
            out.append(float(abs(np.sum(coeffs * vals)) / scale) if scale > 0 else 0.0)
        return np.array(out)

    def relative_residual(self, x: Sequence[float]) -> float:
        return float(np.max(self.relative_residuals(x)))

    def to_model(self, x: Sequence[float]) -> RectifyModel:
        """条件化解向量 -> 原始归一化单位下的模型"""
        if self.fixed_lambda is None:
            lam, l1, l2 = self.record.unscale(*x)
        else:
            _, l1, l2 = self.record.unscale(0.0, x[0], x[1])
            lam = self.fixed_lambda
        return RectifyModel(VanishingLine(l1, l2), DivisionModel(lam))

    def from_model(self, model: RectifyModel) -> np.ndarray:
        lam, l1, l2 = self.record.condition(model.lam, model.l1, model.l2)
        if self.fixed_lambda is None:
            return np.array([lam, l1, l2])
        return np.array([l1, l2])


def assemble(
    config: Configuration,
    frames: Sequence[AffineFrame],
    fixed_lambda: Optional[float] = None,
    record: Optional[ScaleRecord] = None,
    all_pairs: bool = True,
) -> ConstraintSystem:
    """组装约束系统

    all_pairs=False 只生成每组首帧与其余帧的方程，用于复现不完整方程组的伪解族。
    """
    if len(frames) != config.frame_count:
        raise WrongSampleSize(f"配置 {config.value} 需要 {config.frame_count} 个帧，得到 {len(frames)}")
    if config is Configuration.C22_FIXED and fixed_lambda is None:
        raise ValueError("固定畸变配置需要给定 fixed_lambda")
    if config is not Configuration.C22_FIXED and fixed_lambda is not None:
        raise ValueError(f"配置 {config.value} 会估计 λ，不接受 fixed_lambda")
    record = record or ScaleRecord()
    for frame in frames:
        _check_frame(frame)

    lam = None if fixed_lambda is None else fixed_lambda * record.rsq_scale
    coords, rhos = zip(*(_coordinates(f, record.rho_factor) for f in frames))
    equations = equations_from_coordinates(config, coords, rhos, lam, all_pairs)
    logger.debug(f"组装 {config.value}: {len(equations)} 个方程")
    return ConstraintSystem(config, equations, record, fixed_lambda)
