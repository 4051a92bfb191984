"""动作矩阵法求解小型多项式方程组

离线阶段：用随机整数实例在有限域 Z_p 上做 Macaulay 展开与消元，
确定工作次数、商环基和消元模板（哪一行由哪个方程乘以哪个单项式得到）。
基可以按 grevlex 默认顺序选取，也可以随机采样单项式顺序后选取。

在线阶段：纯双精度。按模板填充系数矩阵，用带列主元的 QR 消去高次列，
求出可约单项式在基上的表示，构造动作矩阵并做特征分解，从特征向量读出解。
"""

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from src.config import SolverConfig
from src.errors import InfeasibleBasis, RankDeficientTemplate, TemplateFormatError
from src.polynomial import Monomial, Poly, add_monomials, grevlex_key, monomial_values, monomials_up_to, unit_monomial

logger = logging.getLogger(__name__)

PRIME = 32003
TEMPLATE_FORMAT = "rr-template"
TEMPLATE_VERSION = 1
MAX_WORKING_DEGREE = 16
INSTANCE_SEED = 7919
SUPPORT_INSTANCES = 3


@dataclass(frozen=True)
class SystemShape:
    """一类方程组的形状：变量、方程数、次数、期望解数及实例生成器

    integer_instance 生成整数系数方程（供有限域消元）；
    test_instance 返回 (浮点方程组, 条件化真值) 供模板评估。
    """

    tag: str
    variables: Tuple[str, ...]
    n_equations: int
    max_degree: int
    expected_solutions: int
    integer_instance: Callable[[np.random.Generator], List[Poly]] = field(repr=False, compare=False)
    test_instance: Optional[Callable[[np.random.Generator], Tuple[Any, np.ndarray]]] = field(
        default=None, repr=False, compare=False
    )
    action_variable: int = 0

    @property
    def nvars(self) -> int:
        return len(self.variables)


@dataclass(frozen=True)
class SolverTemplate:
    tag: str
    variables: Tuple[str, ...]
    degree: int
    truncation: int
    support: Tuple[Monomial, ...]
    rows: Tuple[Tuple[int, Monomial], ...]
    columns: Tuple[Monomial, ...]  # 顺序为 [E | R | B]
    n_excess: int
    n_reducible: int
    excess_rank: int
    action_variable: int
    expected_solutions: int
    n_equations: int
    basis_seed: Optional[int] = None
    median_residual: Optional[float] = None
    prime: int = PRIME
    version: int = TEMPLATE_VERSION

    @property
    def nvars(self) -> int:
        return len(self.variables)

    @property
    def shape(self) -> Tuple[int, int]:
        return len(self.rows), len(self.columns)

    @property
    def reducible(self) -> Tuple[Monomial, ...]:
        return self.columns[self.n_excess:self.n_excess + self.n_reducible]

    @property
    def basis(self) -> Tuple[Monomial, ...]:
        return self.columns[self.n_excess + self.n_reducible:]

    @cached_property
    def fill_index(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        col_of = {m: k for k, m in enumerate(self.columns)}
        n_sup = len(self.support)
        row_idx = np.repeat(np.arange(len(self.rows)), n_sup)
        eq_idx = np.repeat(np.array([k for k, _ in self.rows], dtype=int), n_sup)
        sup_idx = np.tile(np.arange(n_sup), len(self.rows))
        col_idx = np.array(
            [col_of[add_monomials(mult, mono)] for _, mult in self.rows for mono in self.support], dtype=int
        )
        return row_idx, col_idx, eq_idx, sup_idx

    def _locate(self, monomial: Monomial) -> Tuple[str, int]:
        basis = self.basis
        if monomial in basis:
            return "B", basis.index(monomial)
        reducible = self.reducible
        if monomial in reducible:
            return "R", reducible.index(monomial)
        raise TemplateFormatError(f"单项式 {monomial} 不在模板的基或可约集合中")

    @cached_property
    def action_index(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """动作矩阵的来源：x_a·b 落在基内（单位行）或可约集合内（约化行）"""
        shift = unit_monomial(self.nvars, self.action_variable)
        b_rows, b_cols, r_rows, r_src = [], [], [], []
        for i, b in enumerate(self.basis):
            kind, idx = self._locate(add_monomials(b, shift))
            if kind == "B":
                b_rows.append(i)
                b_cols.append(idx)
            else:
                r_rows.append(i)
                r_src.append(idx)
        as_int = lambda v: np.array(v, dtype=int)  # noqa: E731
        return as_int(b_rows), as_int(b_cols), as_int(r_rows), as_int(r_src)

    @cached_property
    def readout(self) -> List[Tuple[str, int]]:
        """读解用单项式 1, x_0, ..., x_{n-1} 的位置"""
        needed = [(0,) * self.nvars] + [unit_monomial(self.nvars, v) for v in range(self.nvars)]
        return [self._locate(m) for m in needed]


@dataclass
class SolutionSet:
    solutions: np.ndarray
    residuals: np.ndarray
    n_complex: int
    n_infinite: int  # 特征向量读不出有限解（无穷远解）的个数

    def __len__(self) -> int:
        return len(self.solutions)

    def __iter__(self):
        return iter(zip(self.solutions, self.residuals))


@dataclass
class CandidateScore:
    basis_seed: Optional[int]
    median_log_residual: Optional[float] = None
    template_shape: Optional[Tuple[int, int]] = None
    error: Optional[str] = None


# ---------------------------------------------------------------------------
# 有限域消元
# ---------------------------------------------------------------------------

def _rref_mod_p(matrix: np.ndarray, p: int = PRIME) -> Tuple[np.ndarray, List[int], np.ndarray]:
    """Z_p 上的 Gauss-Jordan 消元

    返回 (非零行的 RREF, 主元列, 对应的原始行号)；原始行号给出行空间的一组基。
    """
    a = np.array(matrix, dtype=np.int64) % p
    m, n = a.shape
    perm = np.arange(m)
    pivots: List[int] = []
    r = 0
    for c in range(n):
        if r == m:
            break
        nz = np.flatnonzero(a[r:, c])
        if nz.size == 0:
            continue
        k = r + int(nz[0])
        if k != r:
            a[[r, k]] = a[[k, r]]
            perm[[r, k]] = perm[[k, r]]
        inv = pow(int(a[r, c]), p - 2, p)
        a[r, c:] = (a[r, c:] * inv) % p
        col = a[:, c].copy()
        col[r] = 0
        rows = np.flatnonzero(col)
        if rows.size:
            a[rows, c:] = (a[rows, c:] - np.outer(col[rows], a[r, c:])) % p
        pivots.append(c)
        r += 1
    return a[:r], pivots, perm[:r]


@dataclass
class _Expansion:
    degree: int
    rows: List[Tuple[int, Monomial]]
    columns: List[Monomial]
    matrix: np.ndarray


@dataclass
class _Analysis:
    degree: int
    truncation: int
    support: Tuple[Monomial, ...]
    expansion: _Expansion
    row_basis: np.ndarray
    low: List[Monomial]
    remainder: np.ndarray
    default_basis: List[Monomial]


_ANALYSES: Dict[str, _Analysis] = {}


def _expand(coeffs: np.ndarray, support: Sequence[Monomial], nvars: int, eq_degree: int, degree: int) -> _Expansion:
    """Macaulay 展开：每个方程乘以次数 ≤ degree - eq_degree 的全部单项式"""
    columns = monomials_up_to(nvars, degree)[::-1]
    col_of = {m: k for k, m in enumerate(columns)}
    multipliers = monomials_up_to(nvars, degree - eq_degree)
    rows = [(k, mult) for k in range(coeffs.shape[0]) for mult in multipliers]
    matrix = np.zeros((len(rows), len(columns)), dtype=np.int64)
    for r, (k, mult) in enumerate(rows):
        cols = [col_of[add_monomials(mult, s)] for s in support]
        matrix[r, cols] = coeffs[k]
    return _Expansion(degree, rows, columns, matrix)


def _standard_counts(columns: Sequence[Monomial], pivots: Sequence[int]) -> Dict[int, int]:
    pivset = set(pivots)
    counts: Dict[int, int] = {}
    for k, m in enumerate(columns):
        if k not in pivset:
            counts[sum(m)] = counts.get(sum(m), 0) + 1
    return counts


def _find_gap(counts: Dict[int, int], expected: int, degree: int) -> Optional[int]:
    """最小的截断次数 t：次数 < t 的标准单项式恰为 expected 个，且次数 t 处没有标准单项式"""
    below = 0
    for t in range(1, degree + 1):
        below += counts.get(t - 1, 0)
        if below > expected:
            return None
        if below == expected and counts.get(t, 0) == 0:
            return t
    return None


def _analyze(shape: SystemShape) -> _Analysis:
    if shape.tag in _ANALYSES:
        return _ANALYSES[shape.tag]

    rng = np.random.default_rng(INSTANCE_SEED)
    instances = [shape.integer_instance(rng) for _ in range(SUPPORT_INSTANCES)]
    monos = set()
    for inst in instances:
        for eq in inst:
            monos.update(eq.terms)
    support = tuple(sorted(monos, key=grevlex_key, reverse=True))
    eq_degree = max(sum(m) for m in support)
    coeffs = np.array(
        [[int(c) % PRIME for c in eq.coefficients(support)] for eq in instances[0]], dtype=np.int64
    )

    previous = None
    for degree in range(eq_degree + 1, MAX_WORKING_DEGREE + 1):
        expansion = _expand(coeffs, support, shape.nvars, eq_degree, degree)
        reduced, pivots, row_basis = _rref_mod_p(expansion.matrix)
        counts = _standard_counts(expansion.columns, pivots)
        truncation = _find_gap(counts, shape.expected_solutions, degree)
        logger.debug(f"[{shape.tag}] 展开次数 {degree}: 矩阵 {expansion.matrix.shape}, 秩 {len(pivots)}, "
                     f"标准单项式分布 {dict(sorted(counts.items()))}, 截断 {truncation}")
        if truncation is not None and previous is not None and previous[0] == truncation:
            analysis = _make_analysis(support, *previous[1:], truncation)
            logger.info(f"[{shape.tag}] 工作次数 {analysis.degree}，截断次数 {truncation}")
            _ANALYSES[shape.tag] = analysis
            return analysis
        previous = (truncation, expansion, reduced, pivots, row_basis) if truncation is not None else None

    raise InfeasibleBasis(f"[{shape.tag}] 在次数 {MAX_WORKING_DEGREE} 以内未找到 {shape.expected_solutions} 维商空间")


def _make_analysis(support, expansion, reduced, pivots, row_basis, truncation) -> _Analysis:
    low_start = next(k for k, m in enumerate(expansion.columns) if sum(m) <= truncation)
    low = expansion.columns[low_start:]
    low_rows = [i for i, c in enumerate(pivots) if c >= low_start]
    remainder = reduced[low_rows, low_start:]
    pivset = set(pivots)
    default_basis = [m for k, m in enumerate(expansion.columns) if k >= low_start and k not in pivset]
    return _Analysis(expansion.degree, truncation, support, expansion, row_basis, low, remainder, default_basis)


def _sampled_order(low: Sequence[Monomial], truncation: int, nvars: int, rng: np.random.Generator) -> List[Monomial]:
    """随机单项式顺序：次数 t 的单项式在最前，1 与各变量在最后，中间按随机权重排序"""
    tail = [unit_monomial(nvars, v) for v in range(nvars)] + [(0,) * nvars]
    top = [m for m in low if sum(m) == truncation and m not in tail]
    rest = [m for m in low if sum(m) < truncation and m not in tail]
    weights = rng.uniform(0.5, 1.5, size=nvars)
    keys = np.array([float(np.dot(weights, m)) for m in rest]) + rng.uniform(0.0, 2.0, size=len(rest))
    ordered = [rest[k] for k in np.argsort(-keys, kind="stable")]
    return top + ordered + tail


def _basis_for_order(analysis: _Analysis, order: Sequence[Monomial]) -> List[Monomial]:
    col_of = {m: k for k, m in enumerate(analysis.low)}
    perm = [col_of[m] for m in order]
    _, pivots, _ = _rref_mod_p(analysis.remainder[:, perm])
    pivset = set(pivots)
    return [order[j] for j in range(len(order)) if j not in pivset]


def _build_template(shape: SystemShape, analysis: _Analysis, basis: Sequence[Monomial],
                    basis_seed: Optional[int]) -> SolverTemplate:
    nvars = shape.nvars
    basis = list(basis)
    basis_set = set(basis)
    one = (0,) * nvars
    if len(basis) != shape.expected_solutions:
        raise InfeasibleBasis(f"基大小 {len(basis)} 与期望解数 {shape.expected_solutions} 不符")
    if one not in basis_set:
        raise InfeasibleBasis("常数单项式不在基内")

    shift = unit_monomial(nvars, shape.action_variable)
    low_set = set(analysis.low)
    images = [add_monomials(b, shift) for b in basis]
    if any(m not in low_set for m in images):
        raise InfeasibleBasis("x_a·B 超出截断次数")
    needed = [unit_monomial(nvars, v) for v in range(nvars)]
    reducible_set = ({*images, *needed}) - basis_set
    reducible = sorted(reducible_set, key=grevlex_key, reverse=True)

    expansion = analysis.expansion
    kept_rows = [expansion.rows[i] for i in analysis.row_basis]
    used = {add_monomials(mult, s) for _, mult in kept_rows for s in analysis.support}
    if not reducible_set <= used:
        raise InfeasibleBasis("部分可约单项式不出现在模板中")
    excess = [m for m in expansion.columns if m in used and m not in reducible_set and m not in basis_set]

    col_of = {m: k for k, m in enumerate(expansion.columns)}
    sub = expansion.matrix[np.ix_(analysis.row_basis, [col_of[m] for m in excess])]
    excess_rank = len(_rref_mod_p(sub)[1]) if len(excess) else 0
    if excess_rank + len(reducible) != len(kept_rows):
        raise InfeasibleBasis(f"模板秩不一致: rank(E)={excess_rank}, |R|={len(reducible)}, 行数={len(kept_rows)}")

    return SolverTemplate(
        tag=shape.tag,
        variables=tuple(shape.variables),
        degree=analysis.degree,
        truncation=analysis.truncation,
        support=tuple(analysis.support),
        rows=tuple(kept_rows),
        columns=tuple(excess + reducible + basis),
        n_excess=len(excess),
        n_reducible=len(reducible),
        excess_rank=excess_rank,
        action_variable=shape.action_variable,
        expected_solutions=shape.expected_solutions,
        n_equations=shape.n_equations,
        basis_seed=basis_seed,
    )


def generate_template(shape: SystemShape, basis_seed: Optional[int] = None) -> SolverTemplate:
    """生成消元模板；basis_seed 为 None 时使用 grevlex 默认基"""
    analysis = _analyze(shape)
    if basis_seed is None:
        basis = analysis.default_basis
    else:
        rng = np.random.default_rng(basis_seed)
        order = _sampled_order(analysis.low, analysis.truncation, shape.nvars, rng)
        basis = _basis_for_order(analysis, order)
    template = _build_template(shape, analysis, basis, basis_seed)
    logger.debug(f"[{shape.tag}] 模板 seed={basis_seed}: {template.shape[0]}x{template.shape[1]}")
    return template


# ---------------------------------------------------------------------------
# 在线求解
# ---------------------------------------------------------------------------

class _Evaluator:
    """方程组的向量化求值、雅可比和相对残差"""

    def __init__(self, system):
        monos = set()
        for eq in system.equations:
            monos.update(eq.terms)
        self.monomials = sorted(monos, key=grevlex_key)
        self.exps = np.array(self.monomials, dtype=int).reshape(len(self.monomials), system.nvars)
        self.coeffs = np.array([eq.coefficients(self.monomials) for eq in system.equations], dtype=float)

    def values(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        mv = np.prod(x[None, :] ** self.exps, axis=1)
        f = self.coeffs @ mv
        jac = np.empty((len(f), len(x)), dtype=np.result_type(x, float))
        for v in range(len(x)):
            lowered = self.exps.copy()
            lowered[:, v] = np.maximum(lowered[:, v] - 1, 0)
            dmv = self.exps[:, v] * np.prod(x[None, :] ** lowered, axis=1)
            jac[:, v] = self.coeffs @ dmv
        return f, jac

    def relative(self, points: np.ndarray) -> np.ndarray:
        if len(points) == 0:
            return np.zeros(0)
        mv = monomial_values(points, self.monomials)
        num = np.abs(mv @ self.coeffs.T)
        den = np.abs(mv) @ np.abs(self.coeffs).T
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        return np.max(rel, axis=1)

    def polish(self, x: np.ndarray, steps: int, damping: float) -> np.ndarray:
        """阻尼 Newton/Gauss-Newton：残差上升时步长乘以 damping"""
        f, jac = self.values(x)
        norm = float(np.linalg.norm(f))
        for _ in range(steps):
            if norm == 0.0:
                break
            dx = np.linalg.lstsq(jac, -f, rcond=None)[0]
            t = 1.0
            accepted = False
            for _ in range(5):
                candidate = x + t * dx
                fc, jc = self.values(candidate)
                nc = float(np.linalg.norm(fc))
                if np.isfinite(nc) and nc < norm:
                    x, f, jac, norm = candidate, fc, jc, nc
                    accepted = True
                    break
                t *= damping
            if not accepted:
                break
        return x


def _fill(template: SolverTemplate, system) -> np.ndarray:
    if system.nvars != template.nvars or system.n_equations != template.n_equations:
        raise ValueError(f"方程组形状与模板 {template.tag} 不符")
    coeffs = system.coefficient_matrix(template.support)
    if np.any(np.all(coeffs == 0.0, axis=1)):
        raise RankDeficientTemplate(f"[{template.tag}] 存在恒为零的方程（重复帧？）")
    matrix = np.zeros(template.shape)
    row_idx, col_idx, eq_idx, sup_idx = template.fill_index
    matrix[row_idx, col_idx] = coeffs[eq_idx, sup_idx]
    return matrix


def _reductions(template: SolverTemplate, matrix: np.ndarray, settings: SolverConfig) -> np.ndarray:
    """求可约单项式在基上的表示：r_k ≡ Σ_j red[k, j] b_j"""
    ne, nr, rank = template.n_excess, template.n_reducible, template.excess_rank
    if ne:
        q, r_fac, _ = scipy.linalg.qr(matrix[:, :ne], pivoting=True)
        diag = np.abs(np.diag(r_fac))
        if rank > 0 and (diag[0] == 0.0 or diag[rank - 1] <= settings.rank_tol * diag[0]):
            raise RankDeficientTemplate(f"[{template.tag}] 高次列秩不足")
        reduced = q[:, rank:].T @ matrix[:, ne:]
    else:
        reduced = matrix
    if reduced.shape[0] != nr:
        raise RankDeficientTemplate(f"[{template.tag}] 约化块形状 {reduced.shape} 与可约单项式数 {nr} 不符")
    a_r, a_b = reduced[:, :nr], reduced[:, nr:]
    if not np.all(np.isfinite(reduced)):
        raise RankDeficientTemplate(f"[{template.tag}] 约化块含非有限值")
    # 消元后条件数可达 1e15 以上属正常；只拒绝主元为零的块，病态解交给残差筛选
    if nr == 0:
        return np.zeros_like(a_b)
    q, r_fac, piv = scipy.linalg.qr(a_r, pivoting=True)
    diag = np.abs(np.diag(r_fac))
    if diag[-1] == 0.0:
        raise RankDeficientTemplate(f"[{template.tag}] 约化块奇异")
    red = np.empty_like(a_b)
    red[piv] = scipy.linalg.solve_triangular(r_fac, q.T @ a_b)
    if not np.all(np.isfinite(red)):
        raise RankDeficientTemplate(f"[{template.tag}] 约化结果含非有限值")
    return -red


def eigen_solutions(template: SolverTemplate, system, settings: Optional[SolverConfig] = None) -> np.ndarray:
    """返回动作矩阵全部特征向量读出的（复数）解，形状 (k, nvars)，k ≤ 基大小"""
    settings = settings or SolverConfig()
    red = _reductions(template, _fill(template, system), settings)
    nb = len(template.basis)

    action = np.zeros((nb, nb))
    b_rows, b_cols, r_rows, r_src = template.action_index
    action[b_rows, b_cols] = 1.0
    action[r_rows] = red[r_src]

    eigvals, eigvecs = scipy.linalg.eig(action)
    funcs = np.zeros((template.nvars + 1, nb))
    for k, (kind, idx) in enumerate(template.readout):
        if kind == "B":
            funcs[k, idx] = 1.0
        else:
            funcs[k] = red[idx]
    vals = funcs @ eigvecs
    scale = np.max(np.abs(eigvecs), axis=0)
    ok = (np.abs(vals[0]) > 1e-12 * scale) & np.isfinite(eigvals)
    sols = (vals[1:] / np.where(ok, vals[0], 1.0)).T.astype(complex)
    sols[:, template.action_variable] = eigvals
    return sols[ok]


def _dedupe(solutions: np.ndarray, residuals: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    order = np.argsort(residuals, kind="stable")
    kept: List[int] = []
    for i in order:
        x = solutions[i]
        tol = 1e-8 * (1.0 + np.linalg.norm(x))
        if all(np.linalg.norm(x - solutions[j]) > tol for j in kept):
            kept.append(i)
    kept_idx = np.array(kept, dtype=int)
    return solutions[kept_idx], residuals[kept_idx]


def solve(template: SolverTemplate, system, settings: Optional[SolverConfig] = None) -> SolutionSet:
    """求解单个实例：特征分解 -> 实解筛选 -> Newton 打磨 -> 残差筛选 -> 去重"""
    settings = settings or SolverConfig()
    if not 0.0 < settings.damping < 1.0:
        raise ValueError("damping 需在 (0, 1) 内")
    nb = len(template.basis)
    raw = eigen_solutions(template, system, settings)
    is_real = np.all(np.abs(raw.imag) <= settings.tol_imag * (1.0 + np.abs(raw.real)), axis=1)
    n_complex = int(len(raw) - np.count_nonzero(is_real))
    real = raw[is_real].real.reshape(-1, template.nvars)

    evaluator = _Evaluator(system)
    if settings.polish and len(real):
        real = np.array([evaluator.polish(x, settings.newton_steps, settings.damping) for x in real])
    residuals = evaluator.relative(real)
    keep = np.isfinite(residuals) & (residuals < settings.tol_residual)
    if not np.all(keep):
        logger.debug(f"[{template.tag}] 丢弃 {int(np.sum(~keep))} 个残差过大的实解")
    solutions, residuals = _dedupe(real[keep], residuals[keep])
    return SolutionSet(solutions, residuals, n_complex, nb - len(raw))


# ---------------------------------------------------------------------------
# 基采样与选择
# ---------------------------------------------------------------------------

def evaluate_template(template: SolverTemplate, instances: Sequence[Tuple[Any, np.ndarray]],
                      settings: Optional[SolverConfig] = None) -> float:
    """各实例全部特征解的 log10 相对残差取中位数，再对实例取中位数；失败实例记为 0"""
    scores = []
    for system, _truth in instances:
        try:
            sols = eigen_solutions(template, system, settings)
        except RankDeficientTemplate:
            scores.append(0.0)
            continue
        res = _Evaluator(system).relative(sols)
        res = res[np.isfinite(res)]
        if res.size == 0:
            scores.append(0.0)
            continue
        scores.append(float(np.median(np.log10(np.maximum(res, 1e-300)))))
    return float(np.median(scores)) if scores else 0.0


def sample_and_select(
    shape: SystemShape,
    n_candidates: int,
    n_tests: int,
    seed: int = 0,
    include_default: bool = False,
    settings: Optional[SolverConfig] = None,
    on_candidate: Optional[Callable[[CandidateScore], None]] = None,
) -> SolverTemplate:
    """生成 n_candidates 个随机基模板，在 n_tests 个无噪实例上评估，返回中位残差最小者"""
    if n_candidates < 1:
        raise ValueError("n_candidates 至少为 1")
    if shape.test_instance is None:
        raise ValueError(f"[{shape.tag}] 缺少测试实例生成器")

    rng = np.random.default_rng(seed)
    instances = [shape.test_instance(rng) for _ in range(n_tests)]
    seeds: List[Optional[int]] = ([None] if include_default else []) + [seed + k for k in range(n_candidates)]

    best: Optional[Tuple[float, SolverTemplate]] = None
    for basis_seed in seeds:
        try:
            template = generate_template(shape, basis_seed)
        except InfeasibleBasis as e:
            logger.warning(f"[{shape.tag}] 候选 seed={basis_seed} 不可行: {e}")
            if on_candidate:
                on_candidate(CandidateScore(basis_seed, error=str(e)))
            continue
        score = evaluate_template(template, instances, settings)
        logger.info(f"[{shape.tag}] 候选 seed={basis_seed}: 模板 {template.shape}, 中位 log10 残差 {score:.2f}")
        if on_candidate:
            on_candidate(CandidateScore(basis_seed, score, template.shape))
        if best is None or score < best[0]:
            best = (score, template)

    if best is None:
        raise InfeasibleBasis(f"[{shape.tag}] 所有候选模板均不可行")
    return replace(best[1], median_residual=best[0])


# ---------------------------------------------------------------------------
# 序列化
# ---------------------------------------------------------------------------

def template_to_dict(template: SolverTemplate) -> Dict[str, Any]:
    data = asdict(template)
    data["support"] = [list(m) for m in template.support]
    data["rows"] = [[k, list(m)] for k, m in template.rows]
    data["columns"] = [list(m) for m in template.columns]
    data["variables"] = list(template.variables)
    return {"format": TEMPLATE_FORMAT, **data}


def template_from_dict(data: Dict[str, Any]) -> SolverTemplate:
    if data.get("format") != TEMPLATE_FORMAT:
        raise TemplateFormatError(f"未知模板格式: {data.get('format')}")
    if data.get("version") != TEMPLATE_VERSION:
        raise TemplateFormatError(f"不支持的模板版本: {data.get('version')}")
    try:
        return SolverTemplate(
            tag=str(data["tag"]),
            variables=tuple(data["variables"]),
            degree=int(data["degree"]),
            truncation=int(data["truncation"]),
            support=tuple(tuple(m) for m in data["support"]),
            rows=tuple((int(k), tuple(m)) for k, m in data["rows"]),
            columns=tuple(tuple(m) for m in data["columns"]),
            n_excess=int(data["n_excess"]),
            n_reducible=int(data["n_reducible"]),
            excess_rank=int(data["excess_rank"]),
            action_variable=int(data["action_variable"]),
            expected_solutions=int(data["expected_solutions"]),
            n_equations=int(data["n_equations"]),
            basis_seed=data.get("basis_seed"),
            median_residual=data.get("median_residual"),
            prime=int(data.get("prime", PRIME)),
            version=int(data["version"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise TemplateFormatError(f"模板字段缺失或非法: {e}") from e


def save_template(template: SolverTemplate, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(template_to_dict(template), f, ensure_ascii=False)
    return path


def load_template(path) -> SolverTemplate:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise TemplateFormatError(f"模板文件不是合法 JSON: {path}") from e
    return template_from_dict(data)
