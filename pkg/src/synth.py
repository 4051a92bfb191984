"""合成场景：随机相机观察平面上的重复图案，帧经除法模型畸变后输出；并提供噪声注入与 warp 误差

场景约定：
- 平面为世界坐标 z = 0，重复图案与误差网格都落在 [-1, 1]² 内
- 焦距在 [0.5, 2.5] × 图像宽度内均匀采样，相机倾角不超过 60°
- 帧边长为平面半宽的 0.15~0.3 倍，原点留出边距使整帧落在平面内
- 共轭平移：同簇帧只差平面平移；刚体运动：额外绕帧原点旋转
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from src.errors import DegenerateAlpha, PointOutsideInvertibleDomain, RetryExhausted
from src.geometry import (
    LAMBDA_RANGE,
    TOL_ALPHA,
    AffineFrame,
    DivisionModel,
    FrameSet,
    Normalization,
    RectifyModel,
    VanishingLine,
    distort_points,
    undistort_point,
)

logger = logging.getLogger(__name__)

PLANE_HALF_EXTENT = 1.0
GRID_SIZE = 10
MAX_TILT = np.deg2rad(60.0)
MIN_VISIBLE = 0.9
# 帧边长相对平面半宽；成像后约 50~150 px，与仿射协变区域检测器给出的尺度相当
FRAME_SCALE_RANGE = (0.15, 0.3)


class MotionType(str, Enum):
    CONJUGATE_TRANSLATION = "ct"
    RIGID = "rigid"


@dataclass(eq=False)
class SyntheticScene:
    camera: np.ndarray  # 3x4，像素坐标
    rotation: np.ndarray
    camera_center: np.ndarray
    focal_px: float
    gt_model: RectifyModel
    frames: FrameSet
    plane_frames: np.ndarray  # (n, 3, 2) 平面坐标
    grid: np.ndarray  # (100, 2) 平面坐标
    grid_distorted: np.ndarray  # (100, 3) 归一化畸变坐标，w = 1
    motion: MotionType = MotionType.CONJUGATE_TRANSLATION
    normalization: Normalization = field(default_factory=Normalization)

    def __post_init__(self):
        if self.frames.scene is None:
            self.frames.scene = self

    @property
    def plane_homography(self) -> np.ndarray:
        """平面 (X, Y, 1) -> 归一化无畸变图像坐标"""
        return self.normalization.matrix() @ self.camera[:, [0, 1, 3]]

    def with_frames(self, frames: Union[FrameSet, Sequence[AffineFrame]]) -> "SyntheticScene":
        """替换帧（如加噪后），保留真值；返回的场景与其帧集合相互引用"""
        if not isinstance(frames, FrameSet):
            frames = self.frames.with_frames(frames)
        frames = FrameSet(frames.frames, frames.cluster_ids, None)
        return replace(self, frames=frames)


@dataclass
class WarpErrorReport:
    rms: float
    affine: np.ndarray  # 2x3
    residuals: np.ndarray  # 每个网格点的像素误差，被排除的点为 nan
    n_excluded: int = 0
    flags: List[str] = field(default_factory=list)


def _rot2(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _look_at(center: np.ndarray, target: np.ndarray, roll: float) -> np.ndarray:
    """世界到相机的旋转：z 轴指向目标，绕视轴再转 roll"""
    z = target - center
    z = z / np.linalg.norm(z)
    hint = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(z, hint)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    spin = Rotation.from_rotvec(roll * z)
    x, y = spin.apply(x), spin.apply(y)
    return np.vstack([x, y, z])


def _prototype(rng: np.random.Generator, scale: float) -> np.ndarray:
    """簇原型：相对原点的 (y 点, 原点, x 点)"""
    basis = scale * _rot2(rng.uniform(0, 2 * np.pi)) @ np.array(
        [[1.0, rng.uniform(-0.3, 0.3)], [0.0, rng.uniform(0.6, 1.4)]]
    )
    return np.array([basis[:, 1], [0.0, 0.0], basis[:, 0]])


def _try_scene(rng, motion, lam, n_clusters, frames_per_cluster, fronto_parallel, norm) -> Optional[SyntheticScene]:
    w, h = norm.width, norm.height
    focal = rng.uniform(0.5, 2.5) * w
    k_mat = np.array([[focal, 0.0, w / 2.0], [0.0, focal, h / 2.0], [0.0, 0.0, 1.0]])

    if fronto_parallel:
        tilt, azimuth, roll = 0.0, 0.0, 0.0
        target = np.zeros(3)
        fill = 0.8
    else:
        tilt = rng.uniform(0.0, MAX_TILT)
        azimuth = rng.uniform(0.0, 2 * np.pi)
        roll = rng.uniform(-np.pi, np.pi)
        target = np.array([rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), 0.0])
        fill = rng.uniform(0.6, 1.0)
    distance = focal * PLANE_HALF_EXTENT / (fill * 0.5 * w)
    direction = np.array([np.sin(tilt) * np.cos(azimuth), np.sin(tilt) * np.sin(azimuth), np.cos(tilt)])
    center = target + distance * direction
    rotation = _look_at(center, target, roll)
    camera = k_mat @ np.hstack([rotation, (-rotation @ center)[:, None]])

    plane_h = norm.matrix() @ camera[:, [0, 1, 3]]
    line = np.linalg.inv(plane_h).T @ np.array([0.0, 0.0, 1.0])
    if abs(line[2]) < 1e-12 * np.linalg.norm(line):
        return None
    line = line / line[2]
    model = RectifyModel(VanishingLine(float(line[0]), float(line[1])), DivisionModel(lam))

    frame_scale = PLANE_HALF_EXTENT * rng.uniform(*FRAME_SCALE_RANGE)
    spread = PLANE_HALF_EXTENT - 1.5 * frame_scale
    plane_frames, cluster_ids = [], []
    for c in range(n_clusters):
        local = _prototype(rng, frame_scale)
        for _ in range(frames_per_cluster):
            origin = rng.uniform(-spread, spread, size=2)
            if motion is MotionType.RIGID:
                pts = origin + local @ _rot2(rng.uniform(0, 2 * np.pi)).T
            else:
                pts = origin + local
            plane_frames.append(pts)
            cluster_ids.append(c)
    plane_frames = np.array(plane_frames)

    ticks = np.linspace(-PLANE_HALF_EXTENT, PLANE_HALF_EXTENT, GRID_SIZE)
    grid = np.array([[x, y] for y in ticks for x in ticks])

    def image(plane_xy: np.ndarray):
        homog = np.concatenate([plane_xy, np.ones(plane_xy.shape[:-1] + (1,))], axis=-1)
        u = homog @ plane_h.T
        if np.any(u[..., 2] <= 0):
            return None
        distorted, valid = distort_points(u, model.distortion, strict=False)
        if not np.all(valid):
            return None
        return distorted

    frames_img = image(plane_frames)
    grid_img = image(grid)
    if frames_img is None or grid_img is None:
        return None
    inside = np.all(np.abs(frames_img[..., :2]) <= norm.half_extent, axis=-1)
    if np.mean(inside) < MIN_VISIBLE:
        return None

    frame_set = FrameSet([AffineFrame(p[:, :2]) for p in frames_img], np.array(cluster_ids))
    return SyntheticScene(
        camera=camera,
        rotation=rotation,
        camera_center=center,
        focal_px=float(focal),
        gt_model=model,
        frames=frame_set,
        plane_frames=plane_frames,
        grid=grid,
        grid_distorted=grid_img,
        motion=motion,
        normalization=norm,
    )


def gen_scene(
    rng: np.random.Generator,
    motion: MotionType = MotionType.CONJUGATE_TRANSLATION,
    lambda_gt: Optional[float] = None,
    n_clusters: int = 5,
    frames_per_cluster: int = 4,
    fronto_parallel: bool = False,
    image_size: Tuple[int, int] = (1000, 1000),
    max_attempts: int = 100,
) -> SyntheticScene:
    """生成随机合成场景；λ* 未指定时在 [-8, 0.5] 内均匀采样"""
    motion = MotionType(motion)
    lam = float(rng.uniform(*LAMBDA_RANGE)) if lambda_gt is None else float(lambda_gt)
    norm = Normalization(*image_size)
    for attempt in range(max_attempts):
        scene = _try_scene(rng, motion, lam, n_clusters, frames_per_cluster, fronto_parallel, norm)
        if scene is not None:
            if attempt:
                logger.debug(f"场景生成重试 {attempt} 次")
            return scene
    raise RetryExhausted(f"{max_attempts} 次尝试后仍未生成可见场景 (λ={lam})")


def add_noise(frames, sigma_px: float, rng: np.random.Generator, normalization: Optional[Normalization] = None):
    """各帧点加独立同分布高斯噪声（像素单位）；接受 FrameSet 或帧列表"""
    if sigma_px < 0:
        raise ValueError("sigma 不能为负")
    normalization = normalization or Normalization()
    items = frames.frames if isinstance(frames, FrameSet) else list(frames)
    if sigma_px == 0 or not items:
        noisy = [AffineFrame(f.pts.copy()) for f in items]
    else:
        xy = np.stack([f.xy for f in items])
        xy = xy + rng.normal(0.0, sigma_px * normalization.scale, size=xy.shape)
        noisy = [AffineFrame(p) for p in xy]
    if isinstance(frames, FrameSet):
        return frames.with_frames(noisy)
    return noisy


def noisy_scene(scene: SyntheticScene, sigma_px: float, rng: np.random.Generator) -> SyntheticScene:
    return scene.with_frames(add_noise(scene.frames, sigma_px, rng, scene.normalization))


def warp_error(model: RectifyModel, scene: SyntheticScene, rectifier: Optional[np.ndarray] = None) -> WarpErrorReport:
    """往返 warp 误差

    网格点经真值成像得到 x̃，用估计模型去畸变并校正，拟合仿射 A 把估计的校正点映回平面，
    再经真值相机与真值畸变回到图像，报告与 x̃ 的 RMS 像素距离。
    rectifier 可替换估计模型的校正单应（例如预乘任意仿射）。
    """
    px_per_unit = 1.0 / scene.normalization.scale
    target = scene.grid_distorted
    h_est = model.homography() if rectifier is None else np.asarray(rectifier, dtype=float)
    rect = undistort_point(target, model.distortion) @ h_est.T
    flags: List[str] = []
    valid = np.abs(rect[:, 2]) > TOL_ALPHA * np.maximum(1.0, np.abs(rect[:, :2]).max(axis=1))
    residuals = np.full(len(target), np.nan)
    if np.count_nonzero(valid) < 3:
        flags.append(DegenerateAlpha.__name__)
        return WarpErrorReport(float("inf"), np.full((2, 3), np.nan), residuals, int(np.sum(~valid)), flags)

    rect_xy = rect[valid, :2] / rect[valid, 2:3]
    design = np.hstack([rect_xy, np.ones((len(rect_xy), 1))])
    affine0 = np.linalg.lstsq(design, scene.grid[valid], rcond=None)[0].T
    plane_h = scene.plane_homography
    gt_distortion = scene.gt_model.distortion
    observed = target[valid, :2]

    def round_trip(params: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        affine = np.vstack([params.reshape(2, 3), [0.0, 0.0, 1.0]])
        u = design @ (plane_h @ affine).T
        u[:, 2] = np.where(np.abs(u[:, 2]) < 1e-15, 1e-15, u[:, 2])
        distorted, ok = distort_points(u, gt_distortion, strict=False)
        return (distorted[:, :2] - observed) * px_per_unit, ok

    def fun(params: np.ndarray) -> np.ndarray:
        return round_trip(params)[0].ravel()

    diff0, ok0 = round_trip(affine0.ravel())
    rms0 = float(np.sqrt(np.mean(np.sum(diff0 ** 2, axis=1))))
    best, diff, ok = affine0.ravel(), diff0, ok0
    if rms0 > 0:
        fit = least_squares(fun, affine0.ravel(), method="lm", max_nfev=10 * 7, xtol=1e-15, ftol=1e-15, gtol=1e-15)
        diff1, ok1 = round_trip(fit.x)
        rms1 = float(np.sqrt(np.mean(np.sum(diff1 ** 2, axis=1))))
        if np.isfinite(rms1) and rms0 - rms1 >= 1e-10:
            best, diff, ok = fit.x, diff1, ok1

    point_err = np.hypot(diff[:, 0], diff[:, 1])
    if not np.all(valid):
        flags.append(DegenerateAlpha.__name__)
    if not np.all(ok):
        flags.append(PointOutsideInvertibleDomain.__name__)
        point_err = np.where(ok, point_err, np.nan)
    residuals[np.flatnonzero(valid)] = point_err
    used = residuals[np.isfinite(residuals)]
    rms = float(np.sqrt(np.mean(used ** 2))) if used.size else float("inf")
    return WarpErrorReport(rms, best.reshape(2, 3), residuals, int(len(target) - used.size), flags)
