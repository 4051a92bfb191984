"""齐次点几何：除法模型畸变/去畸变、仿射校正、仿射帧尺度与手性归一化

所有计算都在归一化坐标下进行：像素坐标先减去图像中心，再乘以 1/(width+height)。
畸变中心固定在图像中心，因此归一化后的畸变中心为原点。
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import CollinearFrame, DegenerateAlpha, NoRealRoot

TOL_ALPHA = 1e-12
TOL_COLLINEAR = 1e-12
LAMBDA_RANGE = (-8.0, 0.5)


@dataclass(frozen=True)
class DivisionModel:
    lam: float = 0.0
    center: Tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class VanishingLine:
    """消失线 (l1, l2, 1)，l3 固定为 1"""

    l1: float = 0.0
    l2: float = 0.0

    def homogeneous(self) -> np.ndarray:
        return np.array([self.l1, self.l2, 1.0])

    @property
    def norm(self) -> float:
        return float(np.hypot(self.l1, self.l2))


@dataclass(frozen=True)
class RectifyModel:
    line: VanishingLine = field(default_factory=VanishingLine)
    distortion: DivisionModel = field(default_factory=DivisionModel)

    @property
    def lam(self) -> float:
        return self.distortion.lam

    @property
    def l1(self) -> float:
        return self.line.l1

    @property
    def l2(self) -> float:
        return self.line.l2

    def homography(self) -> np.ndarray:
        """由消失线构造校正单应 H = [[1,0,0],[0,1,0],[l1,l2,1]]"""
        return np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [self.l1, self.l2, 1.0]])

    def as_vector(self) -> np.ndarray:
        return np.array([self.lam, self.l1, self.l2])

    @classmethod
    def from_vector(cls, vec: Sequence[float], center: Tuple[float, float] = (0.0, 0.0)) -> "RectifyModel":
        lam, l1, l2 = (float(v) for v in vec)
        return cls(VanishingLine(l1, l2), DivisionModel(lam, center))

    def is_feasible(self) -> bool:
        return LAMBDA_RANGE[0] <= self.lam <= LAMBDA_RANGE[1]


@dataclass(frozen=True, eq=False)
class AffineFrame:
    """仿射帧：三行齐次点 (y 点, 原点, x 点)，w = 1"""

    pts: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.pts, dtype=float)
        if pts.shape == (3, 2):
            pts = np.hstack([pts, np.ones((3, 1))])
        if pts.shape != (3, 3):
            raise ValueError(f"仿射帧需要 3 个点，得到形状 {pts.shape}")
        object.__setattr__(self, "pts", pts)

    @classmethod
    def from_points(cls, y_pt: Sequence[float], origin: Sequence[float], x_pt: Sequence[float]) -> "AffineFrame":
        return cls(np.array([y_pt[:2], origin[:2], x_pt[:2]], dtype=float))

    @property
    def xy(self) -> np.ndarray:
        return self.pts[:, :2] / self.pts[:, 2:3]

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.pts))

    def reversed(self) -> "AffineFrame":
        return AffineFrame(self.pts[::-1].copy())

    def __repr__(self) -> str:
        return f"AffineFrame({self.xy.tolist()})"


def _dehomogenize(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p[..., :2] / p[..., 2:3]


def undistort_point(p: np.ndarray, d: DivisionModel) -> np.ndarray:
    """除法模型：(x̃, ỹ) -> (x̃, ỹ, 1 + λ r²)，支持 (..., 3) 批量输入"""
    xy = _dehomogenize(p) - np.asarray(d.center)
    rsq = np.sum(xy * xy, axis=-1, keepdims=True)
    return np.concatenate([xy, 1.0 + d.lam * rsq], axis=-1)


def distort_points(u: np.ndarray, d: DivisionModel, strict: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """除法模型的逆映射

    选取 λ -> 0 时连续的根 r_d = 2 r_u / (1 + sqrt(1 - 4 λ r_u²))。
    strict=False 时判别式为负的点按判别式 0 处理，并在掩码中标记为 False。
    """
    xy = _dehomogenize(u)
    rsq = np.sum(xy * xy, axis=-1, keepdims=True)
    disc = 1.0 - 4.0 * d.lam * rsq
    valid = (disc >= 0.0)[..., 0] & np.all(np.isfinite(xy), axis=-1)
    if strict and not np.all(valid):
        raise NoRealRoot(f"除法模型无实根：λ={d.lam}，最大 r_u²={float(np.max(rsq)):.6g}")
    factor = 2.0 / (1.0 + np.sqrt(np.maximum(disc, 0.0)))
    out = xy * factor + np.asarray(d.center)
    return np.concatenate([out, np.ones(out.shape[:-1] + (1,))], axis=-1), valid


def distort_point(u: np.ndarray, d: DivisionModel) -> np.ndarray:
    return distort_points(u, d, strict=True)[0]


def rectify_point(p: np.ndarray, m: RectifyModel) -> np.ndarray:
    """去畸变后左乘 H：(x̃, ỹ, l1 x̃ + l2 ỹ + 1 + λ r²)"""
    return undistort_point(p, m.distortion) @ m.homography().T


def alpha(p: np.ndarray, m: RectifyModel) -> np.ndarray:
    return rectify_point(p, m)[..., 2]


def frame_scales(points: np.ndarray, m: RectifyModel) -> Tuple[np.ndarray, np.ndarray]:
    """批量计算校正尺度

    points: (n, 3, 3) 帧点；返回 (scales (n,), alphas (n, 3))。
    α 退化的帧尺度为 nan。
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3, 3)
    rect = rectify_point(points, m)
    alphas = rect[..., 2]
    dets = np.linalg.det(rect) if len(rect) else np.zeros(0)
    prod = np.prod(alphas, axis=-1)
    bad = np.any(np.abs(alphas) < TOL_ALPHA, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        scales = np.where(bad, np.nan, dets / np.where(bad, 1.0, prod))
    return scales, alphas


def rectified_scale(f: AffineFrame, m: RectifyModel) -> float:
    """校正尺度 s = (α1 M1 − α2 M2 + α3 M3) / (α1 α2 α3)"""
    alphas = alpha(f.pts, m)
    if np.any(np.abs(alphas) < TOL_ALPHA):
        raise DegenerateAlpha(f"帧点 α 过小: {alphas.tolist()}")
    (x1, y1), (x2, y2), (x3, y3) = f.xy
    m1 = x2 * y3 - x3 * y2
    m2 = x1 * y3 - x3 * y1
    m3 = x1 * y2 - x2 * y1
    a1, a2, a3 = alphas
    return float((a1 * m1 - a2 * m2 + a3 * m3) / (a1 * a2 * a3))


def orient_frame(f: AffineFrame) -> AffineFrame:
    """行列式为负时反转点序，使输出为右手帧"""
    det = f.det
    if abs(det) < TOL_COLLINEAR:
        raise CollinearFrame(f"帧点共线: det={det:.3e}")
    if det < 0:
        return f.reversed()
    return f


@dataclass(frozen=True)
class Normalization:
    """像素 <-> 归一化坐标：(p - center) / (width + height)，center = (width/2, height/2)"""

    width: int = 1000
    height: int = 1000

    @property
    def scale(self) -> float:
        return 1.0 / (self.width + self.height)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.width / 2.0, self.height / 2.0])

    @property
    def half_extent(self) -> np.ndarray:
        return self.center * self.scale

    def to_normalized(self, px: np.ndarray) -> np.ndarray:
        return (np.asarray(px, dtype=float) - self.center) * self.scale

    def to_pixels(self, xy: np.ndarray) -> np.ndarray:
        return np.asarray(xy, dtype=float) / self.scale + self.center

    def matrix(self) -> np.ndarray:
        """像素齐次坐标到归一化齐次坐标的 3x3 矩阵"""
        s = self.scale
        cx, cy = self.center
        return np.array([[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]])

    def lambda_to_pixels(self, lam: float) -> float:
        return lam * self.scale ** 2

    def line_to_pixels(self, line: VanishingLine) -> np.ndarray:
        """归一化坐标下的消失线转为像素坐标下的齐次直线"""
        return self.matrix().T @ line.homogeneous()


@dataclass(eq=False)
class FrameSet:
    """带外观聚类编号的帧集合；scene 在基准模式下指向合成场景"""

    frames: List[AffineFrame]
    cluster_ids: np.ndarray
    scene: Optional[Any] = None

    def __post_init__(self):
        self.frames = list(self.frames)
        self.cluster_ids = np.asarray(self.cluster_ids, dtype=int).reshape(-1)
        if len(self.cluster_ids) != len(self.frames):
            raise ValueError("cluster_ids 与帧数量不一致")

    def __len__(self) -> int:
        return len(self.frames)

    def clusters(self) -> Dict[int, List[int]]:
        groups: Dict[int, List[int]] = {}
        for idx, cid in enumerate(self.cluster_ids.tolist()):
            groups.setdefault(cid, []).append(idx)
        return {cid: groups[cid] for cid in sorted(groups)}

    def points(self) -> np.ndarray:
        if not self.frames:
            return np.zeros((0, 3, 3))
        return np.stack([f.pts for f in self.frames])

    def with_frames(self, frames: Sequence[AffineFrame]) -> "FrameSet":
        return FrameSet(list(frames), self.cluster_ids.copy(), self.scene)
