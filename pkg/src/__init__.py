"""rectify-radial - 由共面重复仿射帧联合估计消失线与除法模型径向畸变"""

__version__ = "1.0.0"

# 导出主要类
from .constraints import Configuration
from .geometry import AffineFrame, DivisionModel, FrameSet, Normalization, RectifyModel, VanishingLine
from .ransac import RansacConfig, estimate
from .solvers import MinimalSample, TemplateStore, solve_minimal
