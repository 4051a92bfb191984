"""图像重映射：按估计模型去畸变或校正整幅图像（逆映射 + 双线性采样）"""

import logging
from enum import Enum
from pathlib import Path
from typing import Optional, Tuple

import cv2
import numpy as np

from src.errors import FrameFileError
from src.geometry import Normalization, RectifyModel, distort_points, rectify_point

logger = logging.getLogger(__name__)

SAMPLE_STEP = 8


class RemapMode(str, Enum):
    UNDISTORT = "undistort"
    RECTIFY = "rectify"


def _output_affine(model: RectifyModel, norm: Normalization, mode: RemapMode, size: Tuple[int, int]) -> np.ndarray:
    """输出像素 -> 目标平面坐标（去畸变或校正后的归一化坐标）的 3x3 仿射

    取源图像上稀疏网格的前向映射，用 1%~99% 分位包围盒铺满输出图像。
    """
    width, height = size
    xs, ys = np.meshgrid(np.arange(0, norm.width, SAMPLE_STEP), np.arange(0, norm.height, SAMPLE_STEP))
    src = norm.to_normalized(np.stack([xs.ravel(), ys.ravel()], axis=1))
    src_h = np.hstack([src, np.ones((len(src), 1))])
    if mode is RemapMode.UNDISTORT:
        fwd = rectify_point(src_h, RectifyModel(distortion=model.distortion))
    else:
        fwd = rectify_point(src_h, model)
    ok = np.abs(fwd[:, 2]) > 1e-9
    pts = fwd[ok, :2] / fwd[ok, 2:3]
    if mode is RemapMode.RECTIFY:
        # 消失线附近的点会被拉到极远处
        keep = fwd[ok, 2] > 0
        pts = pts[keep]
    if len(pts) < 4:
        raise ValueError("模型把整幅图像映射到无穷远")
    lo = np.percentile(pts, 1, axis=0)
    hi = np.percentile(pts, 99, axis=0)
    span = np.maximum(hi - lo, 1e-12)
    s = max(span[0] / width, span[1] / height)
    offset = (lo + hi) / 2.0 - s * np.array([width, height]) / 2.0
    return np.array([[s, 0.0, offset[0]], [0.0, s, offset[1]], [0.0, 0.0, 1.0]])


def build_maps(model: RectifyModel, norm: Normalization, mode: RemapMode = RemapMode.UNDISTORT,
               size: Optional[Tuple[int, int]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """返回 cv2.remap 所需的 (map_x, map_y)：每个输出像素对应的源像素坐标"""
    mode = RemapMode(mode)
    size = size or (norm.width, norm.height)
    width, height = size
    if mode is RemapMode.UNDISTORT and size == (norm.width, norm.height):
        out_to_plane = norm.matrix()
    else:
        out_to_plane = _output_affine(model, norm, mode, size)

    xs, ys = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    out_h = np.stack([xs.ravel(), ys.ravel(), np.ones(xs.size)], axis=1)
    plane = out_h @ out_to_plane.T
    if mode is RemapMode.RECTIFY:
        plane = plane @ np.linalg.inv(model.homography()).T
    distorted, valid = distort_points(plane, model.distortion, strict=False)
    src_px = norm.to_pixels(distorted[:, :2])
    src_px[~valid] = -1.0
    map_x = src_px[:, 0].reshape(height, width).astype(np.float32)
    map_y = src_px[:, 1].reshape(height, width).astype(np.float32)
    return map_x, map_y


def remap_image(image: np.ndarray, model: RectifyModel, mode: RemapMode = RemapMode.UNDISTORT,
                size: Optional[Tuple[int, int]] = None) -> np.ndarray:
    height, width = image.shape[:2]
    norm = Normalization(width, height)
    map_x, map_y = build_maps(model, norm, mode, size)
    return cv2.remap(image, map_x, map_y, interpolation=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT, borderValue=0)


def remap_file(src_path, dst_path, model: RectifyModel, mode: RemapMode = RemapMode.UNDISTORT) -> Path:
    image = cv2.imread(str(src_path), cv2.IMREAD_UNCHANGED)
    if image is None:
        raise FrameFileError(f"无法读取图像 {src_path}")
    out = remap_image(image, model, mode)
    dst_path = Path(dst_path)
    if not cv2.imwrite(str(dst_path), out):
        raise OSError(f"无法写入图像 {dst_path}")
    logger.info(f"已写出 {mode.value} 图像: {dst_path}")
    return dst_path
