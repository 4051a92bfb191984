"""配置加载模块（支持环境变量和 config.yaml）"""

import os
from dataclasses import dataclass, field
from typing import Any, Dict, List

import yaml
from dotenv import load_dotenv

load_dotenv()


def _expand_env(value: Any) -> Any:
    """展开环境变量引用，如 ${VAR_NAME}；递归处理嵌套段"""
    if isinstance(value, str) and value.startswith("${") and value.endswith("}"):
        env_var = value[2:-1]
        return os.getenv(env_var, "")
    if isinstance(value, dict):
        return {k: _expand_env(v) for k, v in value.items()}
    return value


def _load_yaml(path: str) -> Dict[str, Any]:
    if not path or not os.path.exists(path):
        return {}
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    return {k: _expand_env(v) for k, v in data.items()}


@dataclass
class SolverConfig:
    tol_imag: float = 1e-6
    tol_residual: float = 1e-6
    newton_steps: int = 5
    damping: float = 0.5
    polish: bool = True
    rank_tol: float = 1e-13
    tol_radius: float = 1e-3  # 同心圆退化判定（归一化单位）
    max_line_norm: float = 1e4  # |l| 超过即视为消失线过原点


@dataclass
class TemplateConfig:
    directory: str = "templates"
    candidates: int = 20
    tests: int = 50
    seed: int = 0


@dataclass
class RansacSettings:
    iterations: int = 25
    tau_s: float = 0.1
    local_optimization: bool = True
    seed: int = 0


@dataclass
class BenchConfig:
    scenes: int = 100
    sigmas: List[float] = field(default_factory=lambda: [0.1, 0.5, 1.0, 2.0, 5.0])
    motion: str = "ct"
    workers: int = 1
    clusters: int = 5
    frames_per_cluster: int = 4
    threshold_px: float = 5.0


@dataclass
class LoggingConfig:
    level: str = "INFO"
    log_dir: str = "logs"


@dataclass
class AppSettings:
    solver: SolverConfig = field(default_factory=SolverConfig)
    templates: TemplateConfig = field(default_factory=TemplateConfig)
    ransac: RansacSettings = field(default_factory=RansacSettings)
    bench: BenchConfig = field(default_factory=BenchConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)


def load_settings(config_path: str = "config.yaml") -> AppSettings:
    """加载配置，优先环境变量"""
    cfg = _load_yaml(config_path)

    solver_cfg = cfg.get("solver", {}) or {}
    tpl_cfg = cfg.get("templates", {}) or {}
    ransac_cfg = cfg.get("ransac", {}) or {}
    bench_cfg = cfg.get("bench", {}) or {}
    log_cfg = cfg.get("logging", {}) or {}

    solver = SolverConfig(
        tol_imag=float(solver_cfg.get("tol_imag", 1e-6)),
        tol_residual=float(solver_cfg.get("tol_residual", 1e-6)),
        newton_steps=int(solver_cfg.get("newton_steps", 5)),
        damping=float(solver_cfg.get("damping", 0.5)),
        polish=bool(solver_cfg.get("polish", True)),
        rank_tol=float(solver_cfg.get("rank_tol", 1e-13)),
        tol_radius=float(solver_cfg.get("tol_radius", 1e-3)),
        max_line_norm=float(solver_cfg.get("max_line_norm", 1e4)),
    )

    templates = TemplateConfig(
        directory=os.getenv("RR_TEMPLATE_DIR") or tpl_cfg.get("directory", "templates"),
        candidates=int(tpl_cfg.get("candidates", 20)),
        tests=int(tpl_cfg.get("tests", 50)),
        seed=int(tpl_cfg.get("seed", 0)),
    )

    ransac = RansacSettings(
        iterations=int(ransac_cfg.get("iterations", 25)),
        tau_s=float(ransac_cfg.get("tau_s", 0.1)),
        local_optimization=bool(ransac_cfg.get("local_optimization", True)),
        seed=int(ransac_cfg.get("seed", 0)),
    )

    bench = BenchConfig(
        scenes=int(bench_cfg.get("scenes", 100)),
        sigmas=[float(s) for s in bench_cfg.get("sigmas", [0.1, 0.5, 1.0, 2.0, 5.0])],
        motion=bench_cfg.get("motion", "ct"),
        workers=int(bench_cfg.get("workers", 1)),
        clusters=int(bench_cfg.get("clusters", 5)),
        frames_per_cluster=int(bench_cfg.get("frames_per_cluster", 4)),
        threshold_px=float(bench_cfg.get("threshold_px", 5.0)),
    )

    logging = LoggingConfig(
        level=os.getenv("RR_LOG_LEVEL") or log_cfg.get("level", "INFO"),
        log_dir=os.getenv("RR_LOG_DIR") or log_cfg.get("log_dir", "logs"),
    )

    return AppSettings(solver=solver, templates=templates, ransac=ransac, bench=bench, logging=logging)
