"""鲁棒估计：按簇大小加权的最小采样、尺度一致性共识、局部优化与最优模型选择

两种打分模式：
- consensus：按仿射不变的校正尺度一致性打分（分数越大越好）
- warp：基准模式，按真值场景的 warp 误差打分（越小越好），需要 FrameSet.scene
"""

import itertools
import logging
from dataclasses import dataclass, field
from math import comb
from typing import Dict, FrozenSet, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares

from src.config import SolverConfig
from src.constraints import Configuration
from src.errors import CollinearFrame, DegenerateSample, InsufficientData, NoValidModel
from src.geometry import TOL_ALPHA, TOL_COLLINEAR, DivisionModel, FrameSet, RectifyModel, VanishingLine, frame_scales
from src.solvers import MinimalSample, TemplateStore, solve_minimal
from src.synth import warp_error

logger = logging.getLogger(__name__)

CONSENSUS_MODE = "consensus"
WARP_MODE = "warp"


@dataclass
class RansacConfig:
    iterations: int = 25
    config: Configuration = Configuration.C222
    tau_s: float = 0.1
    local_optimization: bool = True
    seed: int = 0
    mode: str = CONSENSUS_MODE
    fixed_lambda: Optional[float] = None

    def __post_init__(self):
        self.config = Configuration(self.config)
        if self.iterations < 1:
            raise ValueError("iterations 至少为 1")
        if self.tau_s <= 0:
            raise ValueError("tau_s 必须为正")
        if self.mode not in (CONSENSUS_MODE, WARP_MODE):
            raise ValueError(f"未知打分模式: {self.mode}")


class Consensus(NamedTuple):
    inliers: FrozenSet[int]
    score: float
    n_degenerate: int = 0


@dataclass
class Refinement:
    model: RectifyModel
    initial_cost: float
    final_cost: float
    n_pairs: int
    accepted: bool
    message: str = ""


@dataclass
class Estimate:
    model: RectifyModel
    inliers: FrozenSet[int]
    score: float
    iteration: int
    refinement: Optional[Refinement] = None
    n_degenerate_samples: int = 0
    history: List[float] = field(default_factory=list)
    warp_rms: Optional[float] = None


# ---------------------------------------------------------------------------
# 采样
# ---------------------------------------------------------------------------

def draw_sample(fs: FrameSet, config: Configuration, rng: np.random.Generator) -> MinimalSample:
    """按簇大小比例选簇，簇内无放回抽取各组帧；大组先抽"""
    config = Configuration(config)
    clusters = fs.clusters()
    available: Dict[int, List[int]] = {cid: list(idx) for cid, idx in clusters.items()}
    groups, indices = [], []
    for size in config.group_sizes:
        eligible = [cid for cid, idx in available.items() if len(idx) >= size]
        if not eligible:
            raise InsufficientData(f"没有满足 {size} 帧分组的簇（配置 {config.value}）")
        weights = np.array([len(clusters[cid]) for cid in eligible], dtype=float)
        cid = eligible[int(rng.choice(len(eligible), p=weights / weights.sum()))]
        picks = rng.choice(len(available[cid]), size=size, replace=False)
        chosen = [available[cid][int(k)] for k in picks]
        available[cid] = [i for i in available[cid] if i not in chosen]
        groups.append(tuple(fs.frames[i] for i in chosen))
        indices.append(tuple(chosen))
    return MinimalSample(config, tuple(groups), tuple(indices))


# ---------------------------------------------------------------------------
# 共识
# ---------------------------------------------------------------------------

def _oriented_points(fs: FrameSet) -> Tuple[np.ndarray, np.ndarray]:
    """帧点按手性归一化；共线帧在掩码中为 False"""
    pts = fs.points()
    if not len(pts):
        return pts, np.zeros(0, dtype=bool)
    dets = np.linalg.det(pts)
    ok = np.abs(dets) >= TOL_COLLINEAR
    flip = dets < 0
    pts = np.where(flip[:, None, None], pts[:, ::-1, :], pts)
    return pts, ok


def consensus(fs: FrameSet, model: RectifyModel, tau_s: float = 0.1) -> Consensus:
    if len(fs) == 0:
        return Consensus(frozenset(), 0.0, 0)
    pts, ok = _oriented_points(fs)
    scales, _ = frame_scales(pts, model)
    usable = ok & np.isfinite(scales)
    n_degenerate = int(np.sum(~usable))

    inliers = set()
    score = 0.0
    for members in fs.clusters().values():
        if len(members) < 2:
            continue
        consistent = 0
        for i, j in itertools.combinations(members, 2):
            if not (usable[i] and usable[j]):
                continue
            denom = max(abs(scales[i]), abs(scales[j]))
            if denom > 0 and abs(scales[i] - scales[j]) / denom < tau_s:
                consistent += 1
                inliers.update((i, j))
        score += consistent / comb(len(members), 2)
    return Consensus(frozenset(inliers), score, n_degenerate)


# ---------------------------------------------------------------------------
# 局部优化
# ---------------------------------------------------------------------------

class ScaleObjective:
    """簇内帧对的对数尺度差 r = log|s_i| − log|s_j|

    参数为 (λ, l1, l2)，λ 固定时为 (l1, l2)。
    s = N / A，N = D + λE，A = Π α_k，α_k = l1 x_k + l2 y_k + 1 + λ r_k²。
    """

    def __init__(self, points: np.ndarray, pairs: Sequence[Tuple[int, int]], fixed_lambda: Optional[float] = None):
        self.points = np.asarray(points, dtype=float)
        self.pairs = np.array(pairs, dtype=int).reshape(-1, 2)
        self.fixed_lambda = fixed_lambda
        xy = self.points[..., :2] / self.points[..., 2:3]
        self.x, self.y = xy[..., 0], xy[..., 1]
        self.rsq = self.x ** 2 + self.y ** 2
        ones = np.ones_like(self.x)
        self.d = np.linalg.det(np.stack([self.x, self.y, ones], axis=1))
        self.e = np.linalg.det(np.stack([self.x, self.y, self.rsq], axis=1))

    def _unpack(self, params: np.ndarray) -> Tuple[float, float, float]:
        if self.fixed_lambda is None:
            return float(params[0]), float(params[1]), float(params[2])
        return float(self.fixed_lambda), float(params[0]), float(params[1])

    def _log_scales(self, params: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        lam, l1, l2 = self._unpack(params)
        alphas = l1 * self.x + l2 * self.y + 1.0 + lam * self.rsq
        numer = self.d + lam * self.e
        safe = lambda v: np.maximum(np.abs(v), 1e-300)  # noqa: E731
        log_s = np.log(safe(numer)) - np.sum(np.log(safe(alphas)), axis=1)
        grad = np.empty((len(numer), 3))
        grad[:, 0] = self.e / numer - np.sum(self.rsq / alphas, axis=1)
        grad[:, 1] = -np.sum(self.x / alphas, axis=1)
        grad[:, 2] = -np.sum(self.y / alphas, axis=1)
        if self.fixed_lambda is not None:
            grad = grad[:, 1:]
        return log_s, grad

    def residuals(self, params: np.ndarray) -> np.ndarray:
        log_s, _ = self._log_scales(params)
        return log_s[self.pairs[:, 0]] - log_s[self.pairs[:, 1]]

    def jacobian(self, params: np.ndarray) -> np.ndarray:
        _, grad = self._log_scales(params)
        return grad[self.pairs[:, 0]] - grad[self.pairs[:, 1]]

    def cost(self, params: np.ndarray) -> float:
        r = self.residuals(params)
        return float(0.5 * np.dot(r, r))

    def gradient(self, params: np.ndarray) -> np.ndarray:
        return self.jacobian(params).T @ self.residuals(params)

    def initial(self, model: RectifyModel) -> np.ndarray:
        if self.fixed_lambda is None:
            return model.as_vector()
        return np.array([model.l1, model.l2])

    def to_model(self, params: np.ndarray, center=(0.0, 0.0)) -> RectifyModel:
        lam, l1, l2 = self._unpack(params)
        return RectifyModel(VanishingLine(l1, l2), DivisionModel(lam, center))


def _inlier_pairs(fs: FrameSet, inliers) -> List[Tuple[int, int]]:
    inliers = set(inliers)
    pairs = []
    for members in fs.clusters().values():
        kept = [i for i in members if i in inliers]
        pairs.extend(itertools.combinations(kept, 2))
    return pairs


def local_optimize(model: RectifyModel, fs: FrameSet, inliers, fixed_lambda: Optional[float] = None) -> Refinement:
    """在内点帧对上最小化对数尺度差平方和（信赖域），目标不下降时返回原模型"""
    pts, ok = _oriented_points(fs)
    pairs = [(i, j) for i, j in _inlier_pairs(fs, inliers) if ok[i] and ok[j]]
    if not pairs:
        return Refinement(model, 0.0, 0.0, 0, False, "没有可用的内点帧对")

    objective = ScaleObjective(pts, pairs, fixed_lambda)
    x0 = objective.initial(model)
    _, alphas = frame_scales(pts, model)
    used = np.unique(np.array(pairs).ravel())
    if np.any(np.abs(alphas[used]) < TOL_ALPHA):
        return Refinement(model, float("nan"), float("nan"), len(pairs), False, "初始模型 α 退化")

    cost0 = objective.cost(x0)
    try:
        fit = least_squares(objective.residuals, x0, jac=objective.jacobian, method="trf")
    except (ValueError, np.linalg.LinAlgError) as e:
        logger.debug(f"局部优化失败: {e}")
        return Refinement(model, cost0, cost0, len(pairs), False, str(e))
    cost1 = objective.cost(fit.x)
    if not np.isfinite(cost1) or cost1 > cost0:
        return Refinement(model, cost0, cost0, len(pairs), False, "目标上升，保留原模型")
    refined = objective.to_model(fit.x, model.distortion.center)
    return Refinement(refined, cost0, cost1, len(pairs), True, fit.message)


# ---------------------------------------------------------------------------
# 主循环
# ---------------------------------------------------------------------------

def _warp_loss(model: RectifyModel, fs: FrameSet) -> float:
    try:
        rms = warp_error(model, fs.scene).rms
    except (ValueError, np.linalg.LinAlgError):
        return float("inf")
    return rms if np.isfinite(rms) else float("inf")


def estimate(
    fs: FrameSet,
    cfg: RansacConfig,
    store: Optional[TemplateStore] = None,
    settings: Optional[SolverConfig] = None,
    seed_models: Sequence[RectifyModel] = (),
) -> Estimate:
    """RANSAC：采样 -> 最小求解 -> 可行性筛选 -> 打分，保留最优；可选局部优化

    seed_models 在采样前以迭代号 -1 参与打分。平局保留较早的迭代。
    """
    warp_mode = cfg.mode == WARP_MODE
    if warp_mode and fs.scene is None:
        raise ValueError("warp 打分模式需要带真值场景的 FrameSet")

    def loss_of(model: RectifyModel) -> Tuple[float, Consensus]:
        cons = consensus(fs, model, cfg.tau_s)
        return (_warp_loss(model, fs) if warp_mode else -cons.score), cons

    best: Optional[Tuple[float, RectifyModel, Consensus, int]] = None
    history: List[float] = []
    n_degenerate = 0

    for model in seed_models:
        loss, cons = loss_of(model)
        if best is None or loss < best[0]:
            best = (loss, model, cons, -1)

    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.iterations)
    for iteration, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        sample = draw_sample(fs, cfg.config, rng)
        try:
            candidates = solve_minimal(sample, cfg.fixed_lambda, store, settings)
        except (DegenerateSample, CollinearFrame) as e:
            n_degenerate += 1
            logger.debug(f"迭代 {iteration}: 退化样本 ({e})")
            candidates = []
        for cand in candidates:
            if not cand.feasible:
                continue
            loss, cons = loss_of(cand.model)
            if best is None or loss < best[0]:
                best = (loss, cand.model, cons, iteration)
        if best is not None:
            history.append(best[0] if warp_mode else -best[0])

    if best is None:
        raise NoValidModel(f"{cfg.iterations} 次迭代均未得到可行模型（退化样本 {n_degenerate} 个）")

    loss, model, cons, iteration = best
    refinement = None
    if cfg.local_optimization and cons.inliers:
        refinement = local_optimize(model, fs, cons.inliers, cfg.fixed_lambda)
        if refinement.accepted:
            new_loss, new_cons = loss_of(refinement.model)
            if new_loss <= loss:
                model, loss, cons = refinement.model, new_loss, new_cons
            else:
                refinement.accepted = False
                refinement.message = "局部优化后分数变差，保留原模型"

    score = loss if warp_mode else -loss
    warp_rms = loss if warp_mode else None
    logger.info(f"RANSAC 完成: 最优迭代 {iteration}，分数 {score:.6g}，内点 {len(cons.inliers)}，退化样本 {n_degenerate}")
    return Estimate(model, cons.inliers, float(score), iteration, refinement, n_degenerate, history, warp_rms)
