#!/usr/bin/env python3
"""rectify-radial 命令行入口

子命令：gen-templates / gen-scene / solve / ransac / bench / rectify-points / remap-image
所有 RectifyError 以 JSON 写到 stderr，退出码即异常的 code。
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from src.bench import StudyParams, StudyTag, run_study, write_csv
from src.config import AppSettings, load_settings
from src.constraints import Configuration
from src.errors import OUTPUT_NOT_WRITABLE, DegenerateAlpha, RectifyError, WrongSampleSize
from src.files import FrameFile, ModelEntry, ResultFile, error_payload, model_entries, rectify_frames
from src.geometry import DivisionModel, FrameSet, RectifyModel, VanishingLine
from src.logger import RunLogger
from src.polysolve import CandidateScore, sample_and_select
from src.ransac import RansacConfig, estimate
from src.remap import RemapMode, remap_file
from src.solvers import MinimalSample, TemplateStore, check_degeneracy, solve_minimal, system_shape
from src.synth import MotionType, gen_scene, noisy_scene

logger = logging.getLogger(__name__)

CONFIG_CHOICES = [c.value for c in Configuration]


def setup_logging(level: str = "INFO"):
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s - %(levelname)s - %(message)s"
    )


def _emit(doc: ResultFile, out: Optional[str]):
    if out:
        doc.save(out)
        logger.info(f"结果已写入 {out}")
    else:
        print(doc.to_json())


def _model_from_args(args) -> RectifyModel:
    if args.model:
        result = ResultFile.load(args.model)
        if not result.models:
            raise WrongSampleSize(f"结果文件 {args.model} 中没有模型")
        feasible = [m for m in result.models if m.feasible]
        return (feasible or result.models)[0].to_model()
    return RectifyModel(VanishingLine(args.l1, args.l2), DivisionModel(args.lam))


def _pick_sample(fs: FrameSet, config: Configuration) -> MinimalSample:
    """帧数恰好等于配置所需时按文件顺序切分；否则按簇顺序从各簇取前几帧"""
    if len(fs) == config.frame_count:
        return MinimalSample.from_frames(config, fs.frames)
    if len(fs) < config.frame_count:
        raise WrongSampleSize(f"配置 {config.value} 需要 {config.frame_count} 个帧，文件只有 {len(fs)} 个")
    clusters = [idx for idx in fs.clusters().values()]
    groups, indices = [], []
    for size in config.group_sizes:
        pos = next((k for k, idx in enumerate(clusters) if len(idx) >= size), None)
        if pos is None:
            raise WrongSampleSize(f"没有足够大的簇组成 {size} 帧分组")
        members = clusters.pop(pos)[:size]
        groups.append(tuple(fs.frames[i] for i in members))
        indices.append(tuple(members))
    return MinimalSample(config, tuple(groups), tuple(indices))


# ---------------------------------------------------------------------------
# 子命令
# ---------------------------------------------------------------------------

def cmd_gen_templates(args, settings: AppSettings, run_log: RunLogger) -> int:
    out_dir = Path(args.out or settings.templates.directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    configs = [Configuration(args.config)] if args.config else list(Configuration)
    store = TemplateStore(str(out_dir))
    report = {"candidates": args.candidates, "tests": args.tests, "seed": args.seed, "solvers": {}}

    for config in configs:
        scores: List[CandidateScore] = []
        template = sample_and_select(
            system_shape(config),
            args.candidates,
            args.tests,
            seed=args.seed,
            include_default=True,
            settings=settings.solver,
            on_candidate=scores.append,
        )
        path = store.save(config, template)
        default = next((s for s in scores if s.basis_seed is None), None)
        report["solvers"][config.solver_name] = {
            "file": path.name,
            "selected_seed": template.basis_seed,
            "selected_median": template.median_residual,
            "default_median": default.median_log_residual if default else None,
            "template_shape": list(template.shape),
            "candidates": [
                {"seed": s.basis_seed, "median": s.median_log_residual, "shape": s.template_shape, "error": s.error}
                for s in scores
            ],
        }
        logger.info(f"✅ {config.solver_name}: 模板 {template.shape}，中位 log10 残差 {template.median_residual:.2f}")

    report_path = out_dir / "selection_report.json"
    report_path.write_text(json.dumps(report, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    run_log.log_run("gen-templates", "success", {"out": str(out_dir), "configs": [c.value for c in configs]})
    return 0


def cmd_gen_scene(args, settings: AppSettings, run_log: RunLogger) -> int:
    rng = np.random.default_rng(args.seed)
    scene = gen_scene(
        rng,
        MotionType(args.motion or settings.bench.motion),
        args.lam,
        n_clusters=args.clusters or settings.bench.clusters,
        frames_per_cluster=args.frames_per_cluster or settings.bench.frames_per_cluster,
        fronto_parallel=args.fronto_parallel,
    )
    if args.sigma:
        scene = noisy_scene(scene, args.sigma, rng)
    doc = FrameFile.from_scene(scene)
    if args.out:
        doc.save(args.out)
        logger.info(f"场景已写入 {args.out}（λ*={scene.gt_model.lam:.6g}）")
    else:
        print(doc.model_dump_json(by_alias=True, indent=2))
    run_log.log_run("gen-scene", "success", {"seed": args.seed, "lambda": scene.gt_model.lam, "out": args.out})
    return 0


def cmd_solve(args, settings: AppSettings, run_log: RunLogger) -> int:
    doc = FrameFile.load(args.frames)
    config = Configuration(args.config)
    sample = _pick_sample(doc.to_frameset(), config)
    fixed = None if config.estimates_distortion else args.lam
    store = TemplateStore(args.templates or settings.templates.directory)
    candidates = solve_minimal(sample, fixed, store, settings.solver)
    flags = check_degeneracy(sample, candidates, settings.solver)
    result = ResultFile(
        command="solve",
        config=config.value,
        image=doc.image,
        models=model_entries([c for c in candidates if c.feasible], doc.normalization()),
        flags=[f.value for f in flags],
        details={"n_real": len(candidates), "n_feasible": sum(c.feasible for c in candidates)},
    )
    _emit(result, args.out)
    run_log.log_run("solve", "success", {"frames": args.frames, "config": config.value, **result.details})
    return 0


def cmd_ransac(args, settings: AppSettings, run_log: RunLogger) -> int:
    doc = FrameFile.load(args.frames)
    config = Configuration(args.config)
    cfg = RansacConfig(
        iterations=args.iterations or settings.ransac.iterations,
        config=config,
        tau_s=args.tau or settings.ransac.tau_s,
        local_optimization=settings.ransac.local_optimization and not args.no_lo,
        seed=settings.ransac.seed if args.seed is None else args.seed,
        fixed_lambda=None if config.estimates_distortion else args.lam,
    )
    store = TemplateStore(args.templates or settings.templates.directory)
    fs = doc.to_frameset()
    est = estimate(fs, cfg, store, settings.solver)
    details = {"iteration": est.iteration, "n_degenerate_samples": est.n_degenerate_samples, "history": est.history}
    if est.refinement is not None:
        details["refinement"] = {
            "accepted": est.refinement.accepted,
            "initial_cost": est.refinement.initial_cost,
            "final_cost": est.refinement.final_cost,
            "n_pairs": est.refinement.n_pairs,
        }
    result = ResultFile(
        command="ransac",
        config=config.value,
        image=doc.image,
        models=[ModelEntry.from_model(est.model, doc.normalization(), est.model.is_feasible())],
        score=est.score,
        inliers=sorted(est.inliers),
        details=details,
    )
    _emit(result, args.out)
    run_log.log_run("ransac", "success", {"frames": args.frames, "config": config.value, "score": est.score,
                                          "inliers": len(est.inliers)})
    return 0


def cmd_bench(args, settings: AppSettings, run_log: RunLogger) -> int:
    params = StudyParams(
        scenes=args.scenes or settings.bench.scenes,
        sigmas=args.sigma or settings.bench.sigmas,
        configs=args.config,
        motion=MotionType(args.motion or settings.bench.motion),
        seed=args.seed,
        iterations=args.iterations or settings.ransac.iterations,
        lambda_gt=args.lam,
        n_clusters=settings.bench.clusters,
        frames_per_cluster=settings.bench.frames_per_cluster,
        threshold_px=settings.bench.threshold_px,
        workers=args.workers or settings.bench.workers,
        template_dir=args.templates or settings.templates.directory,
        solver=settings.solver,
    )
    result = run_study(StudyTag(args.study), params)
    path = write_csv(result, args.out, include_runtime=not args.omit_runtime)
    for g in result.summary:
        logger.info(f"{g.solver} σ={g.sigma:g}: warp 中位数 {g.warp_median:.3g}px，合格 {g.good_fraction:.2f}，"
                    f"log10 λ 误差中位数 {g.log_lambda_median:.2f}")
    run_log.log_study(result)
    run_log.log_run("bench", "success", {"study": args.study, "scenes": params.scenes, "out": str(path)})
    return 0


def cmd_rectify_points(args, settings: AppSettings, run_log: RunLogger) -> int:
    doc = FrameFile.load(args.frames)
    model = _model_from_args(args)
    rows = rectify_frames(doc.to_frameset(), model)
    flagged = sum(r.flagged for r in rows)
    if flagged:
        logger.warning(f"⚠️ {flagged} 个帧含映射到无穷远的点")
    result = ResultFile(
        command="rectify-points",
        image=doc.image,
        models=[ModelEntry.from_model(model, doc.normalization(), model.is_feasible())],
        rectified=rows,
        flags=[DegenerateAlpha.__name__] if flagged else [],
    )
    _emit(result, args.out)
    run_log.log_run("rectify-points", "success", {"frames": args.frames, "flagged": flagged})
    return 0


def cmd_remap_image(args, settings: AppSettings, run_log: RunLogger) -> int:
    model = _model_from_args(args)
    path = remap_file(args.image, args.out, model, RemapMode(args.mode))
    run_log.log_run("remap-image", "success", {"image": args.image, "mode": args.mode, "out": str(path)})
    return 0


# ---------------------------------------------------------------------------
# 参数解析
# ---------------------------------------------------------------------------

def _add_model_args(p: argparse.ArgumentParser):
    p.add_argument("--model", help="结果文件（取第一个可行模型）")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0, help="归一化 λ")
    p.add_argument("--l1", type=float, default=0.0)
    p.add_argument("--l2", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rectify-radial", description="联合估计消失线与除法模型径向畸变")
    parser.add_argument("--settings", default="config.yaml", help="配置文件路径")
    parser.add_argument("--log-level", help="日志级别（覆盖配置）")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-templates", help="离线生成并选择求解模板")
    p.add_argument("--out", help="模板输出目录")
    p.add_argument("--config", choices=CONFIG_CHOICES, help="只生成一种配置")
    p.add_argument("--candidates", type=int, default=20)
    p.add_argument("--tests", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_gen_templates)

    p = sub.add_parser("gen-scene", help="生成合成场景帧文件")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--motion", choices=[m.value for m in MotionType])
    p.add_argument("--sigma", type=float, default=0.0, help="像素噪声标准差")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--clusters", type=int)
    p.add_argument("--frames-per-cluster", type=int)
    p.add_argument("--fronto-parallel", action="store_true")
    p.set_defaults(handler=cmd_gen_scene)

    p = sub.add_parser("solve", help="求解一个最小样本")
    p.add_argument("frames")
    p.add_argument("--config", choices=CONFIG_CHOICES, default="222")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0, help="H22l 的固定 λ")
    p.add_argument("--templates")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser("ransac", help="鲁棒估计")
    p.add_argument("frames")
    p.add_argument("--config", choices=CONFIG_CHOICES, default="222")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--tau", type=float, help="尺度一致性阈值 τ_s")
    p.add_argument("--no-lo", action="store_true", help="关闭局部优化")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0, help="H22l 的固定 λ")
    p.add_argument("--templates")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_ransac)

    p = sub.add_parser("bench", help="运行合成基准研究")
    p.add_argument("study", choices=[t.value for t in StudyTag])
    p.add_argument("--out", required=True, help="CSV 输出路径")
    p.add_argument("--scenes", type=int)
    p.add_argument("--sigma", type=float, nargs="+")
    p.add_argument("--config", choices=CONFIG_CHOICES, nargs="+")
    p.add_argument("--motion", choices=[m.value for m in MotionType])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--workers", type=int)
    p.add_argument("--templates")
    p.add_argument("--omit-runtime", action="store_true", help="runtime 列留空，输出逐字节可复现")
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("rectify-points", help="对帧点去畸变并校正")
    p.add_argument("frames")
    _add_model_args(p)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_rectify_points)

    p = sub.add_parser("remap-image", help="去畸变或校正整幅图像")
    p.add_argument("image")
    _add_model_args(p)
    p.add_argument("--mode", choices=[m.value for m in RemapMode], default=RemapMode.UNDISTORT.value)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_remap_image)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = load_settings(args.settings)
    setup_logging(args.log_level or settings.logging.level)

    run_log = RunLogger(settings.logging.log_dir)
    run_log.start_session(args.command)

    try:
        return args.handler(args, settings, run_log)
    except RectifyError as e:
        print(error_payload(e), file=sys.stderr)
        _safe_log(run_log, args.command, e)
        return e.code
    except OSError as e:
        print(json.dumps({"error": "OutputNotWritable", "code": OUTPUT_NOT_WRITABLE, "message": str(e)},
                         ensure_ascii=False), file=sys.stderr)
        _safe_log(run_log, args.command, e)
        return OUTPUT_NOT_WRITABLE
    except KeyboardInterrupt:
        logger.info("程序已停止")
        return 130


def _safe_log(run_log: RunLogger, command: str, error: Exception):
    try:
        run_log.log_error(f"{command} 失败", error)
    except OSError:
        logger.debug("运行日志写入失败")


if __name__ == "__main__":
    sys.exit(main())
