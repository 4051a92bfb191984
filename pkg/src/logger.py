"""运行记录模块 - 将每次命令执行情况追加为 MD 格式"""
import json
import logging
import os
from datetime import datetime
from typing import Any, Dict, Optional

logger = logging.getLogger(__name__)


def _json_block(data: Dict[str, Any]) -> str:
    return "```json\n" + json.dumps(data, ensure_ascii=False, indent=2, default=str) + "\n```\n\n"


def _fmt(value: float) -> str:
    return "-" if value != value else f"{value:.4g}"


class RunLogger:
    """运行记录器，按日期写入 run_log_YYYY-MM-DD.md"""

    def __init__(self, log_dir: str = "logs"):
        self.log_dir = log_dir
        self.enabled = True
        try:
            self._ensure_log_dir()
        except OSError as e:
            logger.warning(f"⚠️ 无法创建日志目录 {log_dir}，运行记录已关闭: {e}")
            self.enabled = False

    def _ensure_log_dir(self):
        if not os.path.exists(self.log_dir):
            os.makedirs(self.log_dir)

    def _get_log_filename(self) -> str:
        today = datetime.now().strftime("%Y-%m-%d")
        return os.path.join(self.log_dir, f"run_log_{today}.md")

    def _append(self, text: str):
        if not self.enabled:
            return
        with open(self._get_log_filename(), "a", encoding="utf-8") as f:
            f.write(text)

    def start_session(self, command: str = ""):
        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        entry = f"# 校正求解运行日志\n\n**会话开始时间**: {timestamp}\n\n"
        if command:
            entry += f"**命令**: `{command}`\n\n"
        self._append(entry + "---\n\n")

    def log_run(self, kind: str, status: str, details: Dict[str, Any], error: Optional[str] = None):
        """
        记录一次运行

        Args:
            kind: 运行类型（gen-templates, solve, ransac, bench, ...）
            status: 状态（success, failed）
            details: 运行参数与结果摘要
            error: 错误信息（如果有）
        """
        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        entry = f"## {kind.upper()} - {timestamp}\n\n**状态**: {status}\n\n"
        if status == "success":
            entry += "✅ **执行成功**\n\n"
        else:
            entry += f"❌ **执行失败**: {error}\n\n"
        entry += "**运行详情**:\n\n" + _json_block(details) + "---\n\n"
        self._append(entry)

    def log_error(self, message: str, error: Exception, context: Optional[Dict[str, Any]] = None):
        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        entry = f"### ❌ ERROR - {timestamp}\n\n"
        entry += f"**错误信息**: {message}\n\n"
        entry += f"**异常类型**: {type(error).__name__}\n\n"
        entry += f"**异常详情**: {str(error)}\n\n"
        code = getattr(error, "code", None)
        if code is not None:
            entry += f"**退出码**: {code}\n\n"
        if context:
            entry += "**上下文**:\n\n" + _json_block(context)
        self._append(entry + "---\n\n")

    def log_study(self, result):
        """以表格记录一项基准研究的分组汇总"""
        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        entry = f"## STUDY {result.tag.value.upper()} - {timestamp}\n\n"
        entry += f"**场景数**: {result.scenes}，**记录数**: {len(result.records)}\n\n"
        entry += "| 求解器 | σ | 数量 | warp 中位数 | Q1 | Q3 | 合格比例 | log10 λ 误差中位数 | 可行解直方图 |\n"
        entry += "|---|---|---|---|---|---|---|---|---|\n"
        for g in result.summary:
            hist = ", ".join(f"{k}:{v}" for k, v in g.feasible_histogram.items())
            entry += (
                f"| {g.solver} | {g.sigma:g} | {g.count} | {_fmt(g.warp_median)} | {_fmt(g.warp_q1)} | "
                f"{_fmt(g.warp_q3)} | {_fmt(g.good_fraction)} | {_fmt(g.log_lambda_median)} | {hist} |\n"
            )
        self._append(entry + "\n---\n\n")
