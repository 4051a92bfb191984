"""异常定义：每个异常带稳定的退出码，CLI 直接映射为进程返回值"""

from typing import Any, Dict, List, Optional


class RectifyError(Exception):
    """所有校正相关错误的基类"""

    code: int = 1

    @property
    def name(self) -> str:
        return type(self).__name__

    def to_dict(self) -> Dict[str, Any]:
        return {"error": self.name, "code": self.code, "message": str(self)}


class NoRealRoot(RectifyError):
    """除法模型逆映射无实根（判别式 < 0）"""

    code = 10


class PointOutsideInvertibleDomain(NoRealRoot):
    code = 11


class DegenerateAlpha(RectifyError):
    """齐次坐标 α 为 0，点被映射到无穷远"""

    code = 12


class CollinearFrame(RectifyError):
    code = 13


class AllZeroCoordinates(RectifyError):
    code = 14


class WrongSampleSize(RectifyError):
    code = 20


class DegenerateSample(RectifyError):
    """最小样本退化；flags 记录退化原因"""

    code = 21

    def __init__(self, message: str = "", flags: Optional[List[str]] = None):
        super().__init__(message)
        self.flags = list(flags or [])

    def to_dict(self) -> Dict[str, Any]:
        data = super().to_dict()
        data["flags"] = self.flags
        return data


class RankDeficientTemplate(RectifyError):
    """模板填充后秩不足（输入数据退化）"""

    code = 22


class InfeasibleBasis(RectifyError):
    code = 30


class TemplateFormatError(RectifyError):
    code = 31


class InsufficientData(RectifyError):
    code = 40


class NoValidModel(RectifyError):
    code = 41


class RetryExhausted(RectifyError):
    code = 50


class FrameFileError(RectifyError):
    code = 60


OUTPUT_NOT_WRITABLE = 70
