"""帧文件与结果文件的 pydantic 模型

坐标约定写在文件头：像素坐标，归一化时减去图像中心并乘以 1/(width+height)。
浮点数按 JSON 最短往返表示写出，读回后逐位一致。
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.errors import DegenerateAlpha, FrameFileError, RectifyError
from src.geometry import (
    TOL_ALPHA,
    AffineFrame,
    DivisionModel,
    FrameSet,
    Normalization,
    RectifyModel,
    VanishingLine,
    rectify_point,
)

logger = logging.getLogger(__name__)

FRAME_FORMAT = "rr-frames"
RESULT_FORMAT = "rr-result"
FILE_VERSION = 1


class ImageInfo(BaseModel):
    width: int = Field(1000, gt=0)
    height: int = Field(1000, gt=0)

    def normalization(self) -> Normalization:
        return Normalization(self.width, self.height)


class Convention(BaseModel):
    units: Literal["pixels"] = "pixels"
    scale: Literal["1/(width+height)"] = "1/(width+height)"
    distortion_center: Literal["image_center"] = "image_center"


class FrameEntry(BaseModel):
    """一个仿射帧：三个像素点 (y 点, 原点, x 点) 与外观簇编号"""

    points: List[List[float]]
    cluster: int = Field(0, ge=0)

    @field_validator("points")
    @classmethod
    def _check_points(cls, value: List[List[float]]) -> List[List[float]]:
        if len(value) != 3 or any(len(p) != 2 for p in value):
            raise ValueError("每个帧需要 3 个二维点")
        if not np.all(np.isfinite(np.array(value, dtype=float))):
            raise ValueError("帧点坐标必须有限")
        return value


class ModelEntry(BaseModel):
    """同一模型的归一化与像素两种表示"""

    model_config = ConfigDict(populate_by_name=True)

    lambda_: float = Field(alias="lambda")
    l1: float
    l2: float
    lambda_px: Optional[float] = None
    line_px: Optional[List[float]] = None
    feasible: bool = True
    residual: Optional[float] = None

    @classmethod
    def from_model(
        cls,
        model: RectifyModel,
        norm: Normalization,
        feasible: bool = True,
        residual: Optional[float] = None,
    ) -> "ModelEntry":
        return cls(
            lambda_=model.lam,
            l1=model.l1,
            l2=model.l2,
            lambda_px=norm.lambda_to_pixels(model.lam),
            line_px=norm.line_to_pixels(model.line).tolist(),
            feasible=feasible,
            residual=residual,
        )

    def to_model(self) -> RectifyModel:
        return RectifyModel(VanishingLine(self.l1, self.l2), DivisionModel(self.lambda_))


class GroundTruth(ModelEntry):
    camera: Optional[List[List[float]]] = None
    focal_px: Optional[float] = None
    motion: Optional[str] = None


class FrameFile(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    format: Literal["rr-frames"] = FRAME_FORMAT
    version: Literal[1] = FILE_VERSION
    image: ImageInfo = Field(default_factory=ImageInfo)
    convention: Convention = Field(default_factory=Convention)
    frames: List[FrameEntry]
    ground_truth: Optional[GroundTruth] = None

    @model_validator(mode="after")
    def _check_clusters(self) -> "FrameFile":
        ids = sorted({f.cluster for f in self.frames})
        if ids != list(range(len(ids))):
            raise ValueError(f"簇编号必须从 0 开始连续，得到 {ids}")
        return self

    def normalization(self) -> Normalization:
        return self.image.normalization()

    def to_frameset(self) -> FrameSet:
        norm = self.normalization()
        frames = [AffineFrame(norm.to_normalized(np.array(f.points, dtype=float))) for f in self.frames]
        return FrameSet(frames, [f.cluster for f in self.frames])

    @classmethod
    def from_frameset(cls, fs: FrameSet, norm: Optional[Normalization] = None, ground_truth: Optional[GroundTruth] = None) -> "FrameFile":
        norm = norm or Normalization()
        entries = [
            FrameEntry(points=norm.to_pixels(f.xy).tolist(), cluster=int(cid))
            for f, cid in zip(fs.frames, fs.cluster_ids.tolist())
        ]
        return cls(image=ImageInfo(width=norm.width, height=norm.height), frames=entries, ground_truth=ground_truth)

    @classmethod
    def from_scene(cls, scene) -> "FrameFile":
        norm = scene.normalization
        base = ModelEntry.from_model(scene.gt_model, norm)
        truth = GroundTruth(
            **base.model_dump(),
            camera=np.asarray(scene.camera).tolist(),
            focal_px=float(scene.focal_px),
            motion=scene.motion.value,
        )
        return cls.from_frameset(scene.frames, norm, truth)

    @classmethod
    def load(cls, path) -> "FrameFile":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise FrameFileError(f"无法读取帧文件 {path}: {e}") from e
        try:
            return cls.model_validate_json(text)
        except ValidationError as e:
            raise FrameFileError(f"帧文件格式错误 {path}: {e.error_count()} 处问题\n{e}") from e

    def save(self, path) -> Path:
        return _write_json(self, path)


class RectifiedFrame(BaseModel):
    """校正后的帧点（非齐次）；α 退化的点为 null 并标记该行"""

    index: int
    cluster: int
    points: List[Optional[List[float]]]
    flagged: bool = False
    flags: List[str] = Field(default_factory=list)


class ResultFile(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    format: Literal["rr-result"] = RESULT_FORMAT
    version: Literal[1] = FILE_VERSION
    command: str
    config: Optional[str] = None
    image: ImageInfo = Field(default_factory=ImageInfo)
    models: List[ModelEntry] = Field(default_factory=list)
    score: Optional[float] = None
    inliers: List[int] = Field(default_factory=list)
    flags: List[str] = Field(default_factory=list)
    rectified: List[RectifiedFrame] = Field(default_factory=list)
    details: Dict[str, Any] = Field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "ResultFile":
        try:
            return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValidationError) as e:
            raise FrameFileError(f"无法读取结果文件 {path}: {e}") from e

    def save(self, path) -> Path:
        return _write_json(self, path)

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True, indent=2)


def _write_json(doc: BaseModel, path) -> Path:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(doc.model_dump_json(by_alias=True, indent=2) + "\n", encoding="utf-8")
    return path


def rectify_frames(fs: FrameSet, model: RectifyModel) -> List[RectifiedFrame]:
    """对所有帧点去畸变并校正；映到无穷远的点不中断处理，只标记"""
    rows = []
    for idx, (frame, cid) in enumerate(zip(fs.frames, fs.cluster_ids.tolist())):
        rect = rectify_point(frame.pts, model)
        points: List[Optional[List[float]]] = []
        flagged = False
        for p in rect:
            if abs(p[2]) < TOL_ALPHA:
                points.append(None)
                flagged = True
            else:
                points.append((p[:2] / p[2]).tolist())
        flags = [DegenerateAlpha.__name__] if flagged else []
        rows.append(RectifiedFrame(index=idx, cluster=int(cid), points=points, flagged=flagged, flags=flags))
    return rows


def model_entries(candidates: Sequence, norm: Normalization) -> List[ModelEntry]:
    return [ModelEntry.from_model(c.model, norm, c.feasible, c.residual) for c in candidates]


def error_payload(error: RectifyError) -> str:
    return json.dumps(error.to_dict(), ensure_ascii=False)
