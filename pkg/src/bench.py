"""合成基准：稳定性、提案质量、噪声敏感度、解数量四项研究

每个场景使用独立的 SeedSequence 子流，场景之间互不影响；
workers > 1 时按场景分发到进程池，结果按场景编号汇总，输出与 workers 无关。
"""

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config import SolverConfig
from src.constraints import Configuration
from src.errors import DegenerateSample, InsufficientData, NoValidModel, RetryExhausted
from src.ransac import WARP_MODE, RansacConfig, draw_sample, estimate
from src.solvers import TemplateStore, reference_template, solve_minimal
from src.synth import MotionType, gen_scene, noisy_scene, warp_error

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["scene_id", "solver", "sigma", "warp_rms_px", "rel_lambda_err", "n_real", "n_feasible", "runtime_ms"]
DISTORTION_CONFIGS = (Configuration.C222, Configuration.C32, Configuration.C4)
ALL_CONFIGS = DISTORTION_CONFIGS + (Configuration.C22_FIXED,)
TYPICAL_LAMBDA = -4.0
GREVLEX_SUFFIX = "-grevlex"


class StudyTag(str, Enum):
    STABILITY = "stability"
    PROPOSAL = "proposal"
    SENSITIVITY = "sensitivity"
    SOLUTIONS = "solutions"


@dataclass
class StudyParams:
    scenes: int = 100
    sigmas: Sequence[float] = (0.1, 0.5, 1.0, 2.0, 5.0)
    configs: Optional[Sequence[Configuration]] = None
    motion: MotionType = MotionType.CONJUGATE_TRANSLATION
    seed: int = 0
    iterations: int = 25
    lambda_gt: Optional[float] = None
    n_clusters: int = 5
    frames_per_cluster: int = 4
    threshold_px: float = 5.0
    workers: int = 1
    template_dir: Optional[str] = None
    compare_default: bool = True
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        self.motion = MotionType(self.motion)
        if self.scenes < 1:
            raise ValueError("scenes 至少为 1")
        if any(s < 0 for s in self.sigmas):
            raise ValueError("sigma 不能为负")
        if self.configs is not None:
            self.configs = tuple(Configuration(c) for c in self.configs)


@dataclass(frozen=True)
class StudyRecord:
    scene_id: int
    solver: str
    sigma: float
    warp_rms_px: float = float("nan")
    rel_lambda_err: float = float("nan")
    n_real: int = 0
    n_feasible: int = 0
    runtime_ms: float = float("nan")


@dataclass
class GroupSummary:
    solver: str
    sigma: float
    count: int
    warp_median: float
    warp_q1: float
    warp_q3: float
    good_fraction: float
    log_lambda_median: float
    feasible_histogram: Dict[int, int]
    real_histogram: Dict[int, int]
    warp_cdf: List[float]


@dataclass
class StudyResult:
    tag: StudyTag
    records: List[StudyRecord]
    summary: List[GroupSummary]
    scenes: int


# ---------------------------------------------------------------------------
# 单场景
# ---------------------------------------------------------------------------

_STORES: Dict[Optional[str], TemplateStore] = {}


def _store(directory: Optional[str]) -> TemplateStore:
    if directory not in _STORES:
        _STORES[directory] = TemplateStore(directory)
    return _STORES[directory]


def _grevlex_store() -> TemplateStore:
    key = GREVLEX_SUFFIX
    if key not in _STORES:
        store = TemplateStore(None)
        for config in ALL_CONFIGS:
            store.put(config, reference_template(config))
        _STORES[key] = store
    return _STORES[key]


def _relative_lambda_error(lam: float, lam_gt: float) -> float:
    return abs(lam - lam_gt) / max(abs(lam_gt), 1e-12)


def _timed_solve(sample, fixed_lambda, store, settings):
    start = time.perf_counter()
    try:
        candidates = solve_minimal(sample, fixed_lambda, store, settings)
    except DegenerateSample as e:
        logger.debug(f"退化样本: {e}")
        candidates = []
    return candidates, (time.perf_counter() - start) * 1000.0


def _configs(tag: StudyTag, params: StudyParams) -> Tuple[Configuration, ...]:
    if params.configs is not None:
        configs = tuple(params.configs)
    else:
        configs = ALL_CONFIGS
    if tag is StudyTag.STABILITY:
        # 固定 λ 的求解器不估计 λ，稳定性无从谈起
        configs = tuple(c for c in configs if c.estimates_distortion)
    return configs


def _scene_lambda(tag: StudyTag, params: StudyParams) -> Optional[float]:
    if params.lambda_gt is not None:
        return params.lambda_gt
    if tag in (StudyTag.PROPOSAL, StudyTag.SENSITIVITY):
        return TYPICAL_LAMBDA
    return None


def _stability(scene_id, scene, params, configs, rng) -> List[StudyRecord]:
    records = []
    lam_gt = scene.gt_model.lam
    variants = [("", _store(params.template_dir))]
    if params.compare_default:
        variants.append((GREVLEX_SUFFIX, _grevlex_store()))
    for config in configs:
        sample = draw_sample(scene.frames, config, rng)
        for suffix, store in variants:
            candidates, runtime = _timed_solve(sample, None, store, params.solver)
            errors = [_relative_lambda_error(c.model.lam, lam_gt) for c in candidates]
            records.append(StudyRecord(
                scene_id, config.solver_name + suffix, 0.0,
                rel_lambda_err=min(errors) if errors else float("inf"),
                n_real=len(candidates),
                n_feasible=sum(c.feasible for c in candidates),
                runtime_ms=runtime,
            ))
    return records


def _proposal(scene_id, scene, sigma, params, configs, rng) -> List[StudyRecord]:
    """单样本提案：取可行候选中 warp 误差最小者"""
    records = []
    store = _store(params.template_dir)
    noisy = noisy_scene(scene, sigma, rng)
    for config in configs:
        sample = draw_sample(noisy.frames, config, rng)
        fixed = None if config.estimates_distortion else 0.0
        candidates, runtime = _timed_solve(sample, fixed, store, params.solver)
        best_rms, best_lam = float("inf"), float("nan")
        for cand in candidates:
            if not cand.feasible:
                continue
            rms = warp_error(cand.model, scene).rms
            if rms < best_rms:
                best_rms, best_lam = rms, cand.model.lam
        records.append(StudyRecord(
            scene_id, config.solver_name, sigma,
            warp_rms_px=best_rms,
            rel_lambda_err=_relative_lambda_error(best_lam, scene.gt_model.lam) if np.isfinite(best_lam) else float("nan"),
            n_real=len(candidates),
            n_feasible=sum(c.feasible for c in candidates),
            runtime_ms=runtime,
        ))
    return records


def _sensitivity(scene_id, scene, sigma, params, configs, rng) -> List[StudyRecord]:
    records = []
    store = _store(params.template_dir)
    noisy = noisy_scene(scene, sigma, rng)
    for config in configs:
        cfg = RansacConfig(
            iterations=params.iterations,
            config=config,
            local_optimization=False,
            seed=int(rng.integers(2 ** 31)),
            mode=WARP_MODE,
            fixed_lambda=None if config.estimates_distortion else 0.0,
        )
        start = time.perf_counter()
        try:
            result = estimate(noisy.frames, cfg, store, params.solver)
            rms = float(result.warp_rms)
            rel = _relative_lambda_error(result.model.lam, scene.gt_model.lam)
        except (NoValidModel, InsufficientData) as e:
            logger.debug(f"场景 {scene_id} {config.solver_name}: {e}")
            rms, rel = float("inf"), float("nan")
        runtime = (time.perf_counter() - start) * 1000.0
        records.append(StudyRecord(scene_id, config.solver_name, sigma, rms, rel, runtime_ms=runtime))
    return records


def _solutions(scene_id, scene, params, configs, rng) -> List[StudyRecord]:
    records = []
    store = _store(params.template_dir)
    for config in configs:
        sample = draw_sample(scene.frames, config, rng)
        fixed = None if config.estimates_distortion else scene.gt_model.lam
        candidates, runtime = _timed_solve(sample, fixed, store, params.solver)
        records.append(StudyRecord(
            scene_id, config.solver_name, 0.0,
            n_real=len(candidates),
            n_feasible=sum(c.feasible for c in candidates),
            runtime_ms=runtime,
        ))
    return records


def run_scene(tag: StudyTag, params: StudyParams, scene_id: int, seed: np.random.SeedSequence) -> List[StudyRecord]:
    """一个场景的全部记录；进程池的工作单元"""
    tag = StudyTag(tag)
    rng = np.random.default_rng(seed)
    configs = _configs(tag, params)
    try:
        scene = gen_scene(
            rng,
            params.motion,
            _scene_lambda(tag, params),
            n_clusters=params.n_clusters,
            frames_per_cluster=params.frames_per_cluster,
        )
    except RetryExhausted as e:
        logger.warning(f"⚠️ 场景 {scene_id} 生成失败: {e}")
        return []

    if tag is StudyTag.STABILITY:
        return _stability(scene_id, scene, params, configs, rng)
    if tag is StudyTag.SOLUTIONS:
        return _solutions(scene_id, scene, params, configs, rng)

    records = []
    sigmas = params.sigmas
    if tag is StudyTag.PROPOSAL and len(sigmas) != 1:
        sigmas = (1.0,)
    for sigma in sigmas:
        if tag is StudyTag.PROPOSAL:
            records.extend(_proposal(scene_id, scene, float(sigma), params, configs, rng))
        else:
            records.extend(_sensitivity(scene_id, scene, float(sigma), params, configs, rng))
    return records


# ---------------------------------------------------------------------------
# 汇总
# ---------------------------------------------------------------------------

def _histogram(values: Sequence[int]) -> Dict[int, int]:
    counts: Dict[int, int] = {}
    for v in values:
        counts[int(v)] = counts.get(int(v), 0) + 1
    return dict(sorted(counts.items()))


def summarize(records: Sequence[StudyRecord], threshold_px: float = 5.0) -> List[GroupSummary]:
    groups: Dict[Tuple[str, float], List[StudyRecord]] = {}
    for rec in records:
        groups.setdefault((rec.solver, rec.sigma), []).append(rec)

    summary = []
    for (solver, sigma), recs in groups.items():
        warp = np.array([r.warp_rms_px for r in recs], dtype=float)
        warp = warp[~np.isnan(warp)]
        rel = np.array([r.rel_lambda_err for r in recs], dtype=float)
        rel = rel[np.isfinite(rel)]
        log_rel = np.log10(np.maximum(rel, 1e-300)) if rel.size else rel
        if warp.size:
            q1, med, q3 = (float(v) for v in np.percentile(warp, [25, 50, 75]))
            good = float(np.mean(warp < threshold_px))
        else:
            q1 = med = q3 = good = float("nan")
        summary.append(GroupSummary(
            solver=solver,
            sigma=sigma,
            count=len(recs),
            warp_median=med,
            warp_q1=q1,
            warp_q3=q3,
            good_fraction=good,
            log_lambda_median=float(np.median(log_rel)) if log_rel.size else float("nan"),
            feasible_histogram=_histogram(r.n_feasible for r in recs),
            real_histogram=_histogram(r.n_real for r in recs),
            warp_cdf=sorted(float(v) for v in warp),
        ))
    return summary


def run_study(tag: StudyTag, params: StudyParams) -> StudyResult:
    tag = StudyTag(tag)
    seeds = np.random.SeedSequence(params.seed).spawn(params.scenes)
    logger.info(f"开始 {tag.value} 研究: {params.scenes} 个场景，workers={params.workers}")

    if params.workers > 1:
        with ProcessPoolExecutor(max_workers=params.workers) as pool:
            futures = [pool.submit(run_scene, tag, params, i, s) for i, s in enumerate(seeds)]
            per_scene = [f.result() for f in futures]
    else:
        per_scene = []
        for i, s in enumerate(seeds):
            per_scene.append(run_scene(tag, params, i, s))
            if (i + 1) % 50 == 0:
                logger.info(f"  已完成 {i + 1}/{params.scenes} 个场景")

    records = [rec for scene_records in per_scene for rec in scene_records]
    return StudyResult(tag, records, summarize(records, params.threshold_px), params.scenes)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _fmt(value: float) -> str:
    return repr(float(value))


def write_csv(result: StudyResult, path, include_runtime: bool = True) -> Path:
    """固定列顺序写 CSV；include_runtime=False 时 runtime 列留空以保证逐字节可复现"""
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in result.records:
            writer.writerow([
                r.scene_id,
                r.solver,
                _fmt(r.sigma),
                _fmt(r.warp_rms_px),
                _fmt(r.rel_lambda_err),
                r.n_real,
                r.n_feasible,
                _fmt(r.runtime_ms) if include_runtime else "",
            ])
    return path


def read_csv(path) -> List[StudyRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            records.append(StudyRecord(
                scene_id=int(row["scene_id"]),
                solver=row["solver"],
                sigma=float(row["sigma"]),
                warp_rms_px=float(row["warp_rms_px"]),
                rel_lambda_err=float(row["rel_lambda_err"]),
                n_real=int(row["n_real"]),
                n_feasible=int(row["n_feasible"]),
                runtime_ms=float(row["runtime_ms"]) if row["runtime_ms"] else float("nan"),
            ))
    return records
