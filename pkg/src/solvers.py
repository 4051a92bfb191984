"""最小求解器 H222lλ / H32lλ / H4lλ / H22l

流程：定向 -> 条件化 -> 组装 -> 模板求解 -> 反条件化 -> 可行性标记。
模板优先从模板目录读取（template_<配置>.json），否则运行时构建 grevlex 参考模板。
"""

import logging
import os
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config import SolverConfig
from src.constraints import (
    FIXED_VARIABLES,
    FREE_VARIABLES,
    Configuration,
    assemble,
    condition_frames,
    equations_from_coordinates,
)
from src.errors import CollinearFrame, DegenerateSample, RankDeficientTemplate, WrongSampleSize
from src.geometry import TOL_COLLINEAR, AffineFrame, RectifyModel, orient_frame
from src.polysolve import SolverTemplate, SystemShape, generate_template, load_template, save_template, solve
from src.synth import gen_scene

logger = logging.getLogger(__name__)


class DegeneracyFlag(str, Enum):
    LINE_THROUGH_ORIGIN = "line_through_origin"
    CONCENTRIC = "concentric"
    COLLINEAR = "collinear"


@dataclass(frozen=True, eq=False)
class MinimalSample:
    """最小样本：若干组互为重复的仿射帧"""

    config: Configuration
    groups: Tuple[Tuple[AffineFrame, ...], ...]
    indices: Tuple[Tuple[int, ...], ...] = ()

    def __post_init__(self):
        groups = tuple(tuple(g) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "indices", tuple(tuple(int(i) for i in g) for g in self.indices))
        sizes = tuple(len(g) for g in groups)
        if sizes != self.config.group_sizes:
            raise WrongSampleSize(f"配置 {self.config.value} 需要分组 {self.config.group_sizes}，得到 {sizes}")

    @property
    def frames(self) -> List[AffineFrame]:
        return [f for g in self.groups for f in g]

    @classmethod
    def from_frames(cls, config: Configuration, frames: Sequence[AffineFrame]) -> "MinimalSample":
        """按文件顺序把帧切成配置要求的分组"""
        if len(frames) != config.frame_count:
            raise WrongSampleSize(f"配置 {config.value} 需要 {config.frame_count} 个帧，得到 {len(frames)}")
        groups, start = [], 0
        for size in config.group_sizes:
            groups.append(tuple(frames[start:start + size]))
            start += size
        return cls(config, tuple(groups))

    @classmethod
    def from_regions_fixed(cls, a: AffineFrame, b: AffineFrame, c: AffineFrame) -> "MinimalSample":
        """三个重复区域、λ 已知：复用区域 a 组成 (a, b), (a, c) 两对"""
        return cls(Configuration.C22_FIXED, ((a, b), (a, c)))


@dataclass(frozen=True)
class ModelCandidate:
    model: RectifyModel
    residual: float
    feasible: bool


# ---------------------------------------------------------------------------
# 方程组形状
# ---------------------------------------------------------------------------

def _integer_frames(rng: np.random.Generator, count: int) -> List[List[List[int]]]:
    frames = []
    while len(frames) < count:
        pts = rng.integers(-20, 21, size=(3, 2))
        (x1, y1), (x2, y2), (x3, y3) = pts.tolist()
        det = x1 * (y2 - y3) - y1 * (x2 - x3) + (x2 * y3 - x3 * y2)
        if det == 0:
            continue
        frames.append(pts[::-1].tolist() if det < 0 else pts.tolist())
    return frames


def _scene_sample(scene, config: Configuration, rng: np.random.Generator) -> MinimalSample:
    """从不同的重复簇中各取前若干帧组成样本"""
    clusters = list(scene.frames.clusters().values())
    chosen = rng.permutation(len(clusters))[:len(config.group_sizes)]
    groups = []
    indices = []
    for c, size in zip(chosen, config.group_sizes):
        members = clusters[c][:size]
        groups.append(tuple(scene.frames.frames[i] for i in members))
        indices.append(tuple(members))
    return MinimalSample(config, tuple(groups), tuple(indices))


@lru_cache(maxsize=None)
def system_shape(config: Configuration) -> SystemShape:
    fixed = not config.estimates_distortion

    def integer_instance(rng: np.random.Generator):
        coords = _integer_frames(rng, config.frame_count)
        rhos = [[x * x + y * y for x, y in frame] for frame in coords]
        lam = int(rng.choice([-5, -4, -3, -2, -1, 1, 2])) if fixed else None
        return equations_from_coordinates(config, coords, rhos, lam)

    def test_instance(rng: np.random.Generator):
        scene = gen_scene(rng, lambda_gt=None)
        sample = _scene_sample(scene, config, rng)
        frames, record = condition_frames([orient_frame(f) for f in sample.frames])
        system = assemble(config, frames, scene.gt_model.lam if fixed else None, record)
        return system, system.from_model(scene.gt_model)

    return SystemShape(
        tag=config.value,
        variables=FIXED_VARIABLES if fixed else FREE_VARIABLES,
        n_equations=config.equation_count,
        max_degree=3 if fixed else 4,
        expected_solutions=config.expected_solutions,
        integer_instance=integer_instance,
        test_instance=test_instance,
        action_variable=0,
    )


@lru_cache(maxsize=None)
def reference_template(config: Configuration) -> SolverTemplate:
    """运行时构建的 grevlex 默认模板（未做离线基采样时的参考求解器）"""
    logger.info(f"构建 {config.solver_name} 参考模板...")
    return generate_template(system_shape(config), None)


class TemplateStore:
    """按配置解析模板文件，缺失时回退到参考模板"""

    def __init__(self, directory: Optional[str] = None):
        self.directory = Path(directory) if directory else None
        self._cache: Dict[Configuration, SolverTemplate] = {}

    def path_for(self, config: Configuration) -> Optional[Path]:
        if self.directory is None:
            return None
        return self.directory / f"template_{config.value}.json"

    def get(self, config: Configuration) -> SolverTemplate:
        config = Configuration(config)
        if config in self._cache:
            return self._cache[config]
        path = self.path_for(config)
        if path is not None and path.exists():
            template = load_template(path)
            logger.debug(f"载入模板 {path}")
        else:
            if path is not None:
                logger.warning(f"⚠️ 未找到模板 {path}，使用运行时参考模板")
            template = reference_template(config)
        self._cache[config] = template
        return template

    def put(self, config: Configuration, template: SolverTemplate):
        self._cache[Configuration(config)] = template

    def save(self, config: Configuration, template: SolverTemplate) -> Path:
        path = self.path_for(config)
        if path is None:
            raise ValueError("模板目录未设置")
        self.put(config, template)
        return save_template(template, path)


_DEFAULT_STORES: Dict[Optional[str], TemplateStore] = {}


def default_store() -> TemplateStore:
    directory = os.getenv("RR_TEMPLATE_DIR") or None
    if directory not in _DEFAULT_STORES:
        _DEFAULT_STORES[directory] = TemplateStore(directory)
    return _DEFAULT_STORES[directory]


# ---------------------------------------------------------------------------
# 求解与退化检查
# ---------------------------------------------------------------------------

def solve_minimal(
    sample: MinimalSample,
    fixed_lambda: Optional[float] = None,
    store: Optional[TemplateStore] = None,
    settings: Optional[SolverConfig] = None,
) -> List[ModelCandidate]:
    """求解一个最小样本，返回按残差排序的候选模型

    H22l 未给定 fixed_lambda 时按针孔相机（λ = 0）处理。
    """
    config = sample.config
    if config is Configuration.C22_FIXED and fixed_lambda is None:
        fixed_lambda = 0.0
    elif config.estimates_distortion and fixed_lambda is not None:
        raise ValueError(f"{config.solver_name} 会估计 λ，不接受 fixed_lambda")

    try:
        oriented = [orient_frame(f) for f in sample.frames]
    except CollinearFrame as e:
        raise DegenerateSample(str(e), [DegeneracyFlag.COLLINEAR.value]) from e
    frames, record = condition_frames(oriented)
    system = assemble(config, frames, fixed_lambda, record)

    template = (store or default_store()).get(config)
    try:
        result = solve(template, system, settings)
    except RankDeficientTemplate as e:
        raise DegenerateSample(str(e)) from e

    candidates = []
    for x, residual in result:
        model = system.to_model(x)
        feasible = model.is_feasible() if config.estimates_distortion else True
        candidates.append(ModelCandidate(model, float(residual), feasible))
    candidates.sort(key=lambda c: c.residual)
    logger.debug(f"{config.solver_name}: {len(candidates)} 个实解，"
                 f"{sum(c.feasible for c in candidates)} 个可行，{result.n_complex} 个复解，{result.n_infinite} 个无穷远解")
    return candidates


def check_degeneracy(
    sample: MinimalSample,
    candidates: Optional[Sequence[ModelCandidate]] = None,
    settings: Optional[SolverConfig] = None,
) -> List[DegeneracyFlag]:
    """退化提示（不抛异常）：消失线过原点、同心圆分布、共线帧"""
    settings = settings or SolverConfig()
    flags: List[DegeneracyFlag] = []

    if candidates:
        feasible = [c for c in candidates if c.feasible]
        best = (feasible or list(candidates))[0]
        if best.model.line.norm > settings.max_line_norm:
            flags.append(DegeneracyFlag.LINE_THROUGH_ORIGIN)

    # 每组中对应点到中心的距离都相等：正视且重复绕中心旋转
    concentric = True
    for group in sample.groups:
        radii = np.array([np.linalg.norm(f.xy, axis=1) for f in group])
        if np.any(np.ptp(radii, axis=0) > settings.tol_radius):
            concentric = False
            break
    if concentric:
        flags.append(DegeneracyFlag.CONCENTRIC)

    if any(abs(f.det) < TOL_COLLINEAR for f in sample.frames):
        flags.append(DegeneracyFlag.COLLINEAR)
    return flags
