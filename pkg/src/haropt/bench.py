"""Benchmark orchestration: run matrices, trace files, SGM tables and performance profiles.

Run specs are INI files read with :mod:`configparser`::

    [defaults]          ; solver-config overrides shared by every cell
    alpha = 2
    H0 = 1.0
    eps_g = 1e-8
    max_iters = 1000
    time_limit = 300

    [matrix]            ; full cross product of solvers and problems
    solvers = HAR, HAR-C(15), HAR-S(5), HAR-A, LSAR, ARC
    problems = rosenbrock_2d, quartic_10, synthetic:seed=7,N=200,n=20
    repetitions = 1

    [cell extra]        ; optional single cells with their own overrides
    solver = HAR-S(3)
    problem = libsvm:data/a1a.txt,gamma=1e-4
    H0 = 1e-3

Problem selectors are catalog names, ``synthetic:key=value,...`` (keys seed,
N, n, separability, gamma) or ``libsvm:PATH[,gamma=value]``.
"""
from __future__ import annotations

import configparser
import csv
import json
import math
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import __version__
from .accel import run_har_a
from .oracles import OracleError, UnsupportedMeasureError
from .problems import LibsvmParseError, catalog_by_name, logistic_problem, parse_libsvm, synthetic_logistic
from .solvers import (
    TRACE_COLUMNS,
    HistoryPolicy,
    RunResult,
    RunStatus,
    SolverConfig,
    record_row,
    run_arc_baseline,
    run_har,
    run_lsar_baseline,
)

FAILURE_SENTINEL = 20000.0
TIME_SHIFT = 1.0
ITER_SHIFT = 50.0
SOLVED_STATUSES = {str(RunStatus.GRADIENT_TOLERANCE), str(RunStatus.SECOND_ORDER_TOLERANCE)}


class SpecError(ValueError):
    pass


class ResolveError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Run specs
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {
    "p": int, "alpha": float, "H0": float, "eps_g": float, "eps_H": float, "max_iters": int,
    "tol_sub": float, "step_floor": float, "lipschitz_upper_hint": float, "time_limit": float,
}
_SOLVER_RE = re.compile(r"^(HAR|HAR-C|HAR-S|HAR-A|LSAR|ARC)(?:\((\d+|inf)\))?$")


@dataclass(frozen=True)
class Cell:
    solver: str
    problem: str
    repetition: int = 0
    overrides: tuple = ()

    @property
    def cell_id(self):
        raw = f"{self.problem}__{self.solver}__r{self.repetition}"
        return re.sub(r"[^A-Za-z0-9_.=-]+", "_", raw)


@dataclass
class RunSpec:
    cells: list
    defaults: dict = field(default_factory=dict)
    seed: int = 42
    source: Optional[str] = None


def _split_list(text):
    # commas inside selectors (e.g. synthetic:seed=7,N=200) are kept by splitting on
    # commas that start a new solver/problem token
    parts, depth, cur = [], 0, ""
    for ch in text.replace("\n", ","):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    parts.append(cur)
    out = []
    for tok in (t.strip() for t in parts):
        if not tok:
            continue
        if "=" in tok and ":" not in tok and out and ":" in out[-1]:
            out[-1] += "," + tok
        else:
            out.append(tok)
    return out


def _parse_overrides(section, where):
    out = {}
    for key, raw in section.items():
        if key in ("solver", "problem", "solvers", "problems", "repetitions"):
            continue
        match = {k.lower(): k for k in _CONFIG_KEYS}.get(key.lower())
        if match is None:
            raise SpecError(f"[{where}] unknown key {key!r}")
        try:
            out[match] = _CONFIG_KEYS[match](float(raw)) if _CONFIG_KEYS[match] is int else float(raw)
        except ValueError as exc:
            raise SpecError(f"[{where}] bad value for {key!r}: {raw!r}") from exc
    return out


def parse_spec(text: str, seed: int = 42, source: Optional[str] = None) -> RunSpec:
    """Expand an INI run spec into cells. The expansion is deterministic."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source or "<spec>")
    except configparser.Error as exc:
        raise SpecError(str(exc)) from exc
    defaults = _parse_overrides(cp["defaults"], "defaults") if cp.has_section("defaults") else {}
    cells = []
    if cp.has_section("matrix"):
        m = cp["matrix"]
        solvers = _split_list(m.get("solvers", ""))
        problems = _split_list(m.get("problems", ""))
        reps = int(m.get("repetitions", "1"))
        if reps < 1:
            raise SpecError("repetitions must be >= 1")
        local = _parse_overrides(m, "matrix")
        for prob in problems:
            for solver in solvers:
                for r in range(reps):
                    cells.append(Cell(solver, prob, r, tuple(sorted(local.items()))))
    for name in cp.sections():
        if not name.startswith("cell"):
            continue
        sec = cp[name]
        if "solver" not in sec or "problem" not in sec:
            raise SpecError(f"[{name}] needs 'solver' and 'problem'")
        reps = int(sec.get("repetitions", "1"))
        local = _parse_overrides(sec, name)
        for r in range(reps):
            cells.append(Cell(sec["solver"].strip(), sec["problem"].strip(), r, tuple(sorted(local.items()))))
    if not cells:
        raise SpecError("spec defines no runs")
    for c in cells:
        if not _SOLVER_RE.match(c.solver):
            raise SpecError(f"unknown solver {c.solver!r}")
    return RunSpec(cells, defaults, seed, source)


def load_spec(path, seed: int = 42) -> RunSpec:
    path = Path(path)
    return parse_spec(path.read_text(), seed=seed, source=str(path))


# ---------------------------------------------------------------------------
# Resolution
# ---------------------------------------------------------------------------


def _kv(text):
    out = {}
    for part in filter(None, (t.strip() for t in text.split(","))):
        if "=" not in part:
            raise ResolveError(f"expected key=value, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve_problem(selector: str, seed: int = 42, base_dir: Optional[Path] = None):
    """Turn a problem selector into a ProblemInstance."""
    if selector.startswith("synthetic:") or selector == "synthetic":
        kv = _kv(selector.partition(":")[2])
        data = synthetic_logistic(
            int(kv.get("seed", seed)), int(kv.get("N", 200)), int(kv.get("n", 20)),
            float(kv.get("separability", 0.8)),
        )
        return logistic_problem(data, float(kv.get("gamma", 1e-5)), name=f"synthetic({selector.partition(':')[2]})")
    if selector.startswith("libsvm:"):
        path_text, _, rest = selector[len("libsvm:"):].partition(",")
        path = Path(path_text)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        kv = _kv(rest)
        try:
            with open(path, encoding="utf-8") as fh:
                data = parse_libsvm(fh)
        except OSError as exc:
            raise ResolveError(f"cannot read {path}: {exc.strerror}") from exc
        except LibsvmParseError as exc:
            raise ResolveError(f"{path}: {exc}") from exc
        return logistic_problem(data, float(kv.get("gamma", 1e-5)), name=f"libsvm({path.name})")
    cat = catalog_by_name()
    if selector in cat:
        return cat[selector].as_problem()
    raise ResolveError(f"unknown problem {selector!r}")


def policy_from_label(label: str) -> HistoryPolicy:
    m = _SOLVER_RE.match(label)
    if not m or m.group(1) not in ("HAR", "HAR-C", "HAR-S"):
        raise ValueError(f"not a history-aware solver label: {label!r}")
    if m.group(1) == "HAR":
        return HistoryPolicy.full()
    budget = math.inf if m.group(2) in (None, "inf") else int(m.group(2))
    return HistoryPolicy("cyclic" if m.group(1) == "HAR-C" else "sliding", budget)


def run_solver(label: str, problem, config: SolverConfig) -> RunResult:
    """Dispatch a solver label to its driver."""
    m = _SOLVER_RE.match(label)
    if not m:
        raise ValueError(f"unknown solver {label!r}")
    kind = m.group(1)
    if kind == "HAR-A":
        return run_har_a(problem, config)
    if kind == "LSAR":
        return run_lsar_baseline(problem, config)
    if kind == "ARC":
        return run_arc_baseline(problem, config)
    cfg = SolverConfig(**{**_config_fields(config), "policy": policy_from_label(label)})
    result = run_har(problem, cfg)
    result.method = label
    return result


def _config_fields(config):
    return {k: getattr(config, k) for k in config.__dataclass_fields__}


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trace_csv_text(result: RunResult) -> str:
    lines = [",".join(TRACE_COLUMNS)]
    for rec in result.trace:
        lines.append(",".join(_fmt(v) for v in record_row(rec)))
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items() if k != "state"}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def summary_dict(result: RunResult, problem, cell: Cell) -> dict:
    n_f, n_g, n_H = result.counts
    return _jsonable({
        "status": str(result.status),
        "solved": str(result.status) in SOLVED_STATUSES,
        "iters": result.iterations,
        "n_f": n_f,
        "n_g": n_g,
        "n_H": n_H,
        "final_F": result.final_F,
        "final_stationarity": result.final_stationarity,
        "wall_time_s": result.wall_time,
        "unsuccessful_count": result.unsuccessful_count,
        "measured_H_max": result.measured_H_max,
        "message": result.message,
        "solver": cell.solver,
        "repetition": cell.repetition,
        "config": result.extras.get("config", {}),
        "problem": {"name": problem.name, "selector": cell.problem, "dim": problem.dim,
                    "metadata": problem.metadata, "known_optimum": problem.known_optimum},
        "code_version": __version__,
    })


@dataclass
class CellOutcome:
    cell: Cell
    result: Optional[RunResult] = None
    error: Optional[str] = None

    @property
    def status(self):
        return str(self.result.status) if self.result is not None else "Error"


def run_matrix(spec: RunSpec, out_dir, base_dir: Optional[Path] = None, progress=None) -> list:
    """Run every cell and write traces, summaries and an index under ``out_dir``.

    Cells that fail to resolve or raise are recorded in the index; the matrix
    always continues.
    """
    out_dir = Path(out_dir)
    (out_dir / "traces").mkdir(parents=True, exist_ok=True)
    (out_dir / "summaries").mkdir(parents=True, exist_ok=True)
    outcomes, index = [], []
    for cell in spec.cells:
        entry = {"id": cell.cell_id, "solver": cell.solver, "problem": cell.problem, "repetition": cell.repetition}
        try:
            problem = resolve_problem(cell.problem, seed=spec.seed, base_dir=base_dir)
            config = SolverConfig(**{**spec.defaults, **dict(cell.overrides)})
            result = run_solver(cell.solver, problem, config)
        except (ResolveError, UnsupportedMeasureError, OracleError, ValueError) as exc:
            outcomes.append(CellOutcome(cell, error=str(exc)))
            index.append({**entry, "status": "Error", "error": str(exc)})
            if progress:
                progress(cell, None, str(exc))
            continue
        _atomic_write(out_dir / "traces" / f"{cell.cell_id}.csv", trace_csv_text(result))
        summary = summary_dict(result, problem, cell)
        _atomic_write(out_dir / "summaries" / f"{cell.cell_id}.json", json.dumps(summary, indent=2))
        outcomes.append(CellOutcome(cell, result))
        index.append({**entry, "status": summary["status"], "solved": summary["solved"],
                      "summary": f"summaries/{cell.cell_id}.json", "trace": f"traces/{cell.cell_id}.csv"})
        if progress:
            progress(cell, result, None)
    _atomic_write(out_dir / "index.json", json.dumps({"seed": spec.seed, "runs": index}, indent=2))
    return outcomes


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchRecord:
    method: str
    problem: str
    solved: bool
    n_f: float
    n_g: float
    n_H: float
    wall_time: float
    iters: float = 0.0

    def metric(self, name):
        key = {"wall_time_s": "wall_time", "time": "wall_time"}.get(name, name)
        if key not in ("n_f", "n_g", "n_H", "wall_time", "iters"):
            raise ValueError(f"unknown metric {name!r}")
        return getattr(self, key)


def record_from_result(result: RunResult, problem_name: str) -> BenchRecord:
    n_f, n_g, n_H = result.counts
    return BenchRecord(result.method, problem_name, result.status.solved, n_f, n_g, n_H,
                       result.wall_time, result.iterations)


def load_records(out_dir) -> list:
    """Read every run summary under ``out_dir``."""
    out_dir = Path(out_dir)
    records = []
    for path in sorted((out_dir / "summaries").glob("*.json")):
        d = json.loads(path.read_text())
        records.append(BenchRecord(
            d["solver"], d["problem"]["selector"], bool(d["solved"]), d["n_f"], d["n_g"], d["n_H"],
            float(d["wall_time_s"]), d["iters"],
        ))
    return records


def shifted_geometric_mean(values, shift: float) -> float:
    """exp(mean(log(x + s))) - s."""
    x = np.asarray(list(values), dtype=float)
    if x.size == 0:
        raise ValueError("empty value set")
    if shift < 0 or np.any(x + shift <= 0):
        raise ValueError("values + shift must be positive")
    return float(np.exp(np.mean(np.log(x + shift))) - shift)


@dataclass(frozen=True)
class SGMRow:
    method: str
    K: int
    total: int
    t_G: float
    k_f: float
    k_g: float
    k_H: float


def scaled_geometric_means(results: Iterable[BenchRecord], time_shift: float = TIME_SHIFT,
                           iter_shift: float = ITER_SHIFT, sentinel: float = FAILURE_SENTINEL) -> list:
    """One SGM row per method; failed runs count as ``sentinel`` in every column."""
    if time_shift < 0 or iter_shift < 0:
        raise ValueError("shifts must be nonnegative")
    by_method: dict = {}
    for r in results:
        by_method.setdefault(r.method, []).append(r)
    if not by_method:
        raise ValueError("empty result set")
    rows = []
    for method, recs in by_method.items():
        def col(name, s):
            return shifted_geometric_mean([r.metric(name) if r.solved else sentinel for r in recs], s)
        rows.append(SGMRow(method, sum(r.solved for r in recs), len(recs), col("wall_time", time_shift),
                           col("n_f", iter_shift), col("n_g", iter_shift), col("n_H", iter_shift)))
    return rows


def format_sgm_table(rows) -> str:
    header = ("method", "K", "t_G", "k_G^f", "k_G^g", "k_G^H")
    body = [(r.method, f"{r.K}/{r.total}", f"{r.t_G:.4f}", f"{r.k_f:.2f}", f"{r.k_g:.2f}", f"{r.k_H:.2f}")
            for r in rows]
    widths = [max(len(str(x)) for x in column) for column in zip(header, *body)]
    lines = ["  ".join(str(x).rjust(w) if i else str(x).ljust(w) for i, (x, w) in enumerate(zip(line, widths)))
             for line in (header, *body)]
    return "\n".join(lines)


def sgm_csv_text(rows) -> str:
    lines = ["method,K,total,t_G,k_G_f,k_G_g,k_G_H"]
    for r in rows:
        lines.append(f"{r.method},{r.K},{r.total},{r.t_G!r},{r.k_f!r},{r.k_g!r},{r.k_H!r}")
    return "\n".join(lines) + "\n"


@dataclass
class ProfileTable:
    """Per-method step curves of the fraction of problems solved within 2^a of the best."""

    metric: str
    curves: dict
    problems: list
    ratios: dict
    sentinel: float = FAILURE_SENTINEL

    def fraction(self, method: str, a: float) -> float:
        r = self.ratios[method]
        return float(np.sum(r <= 2.0 ** a * (1 + 1e-12))) / len(self.problems)

    def to_tsv(self) -> str:
        lines = ["method\texponent\tfraction"]
        for method, pts in self.curves.items():
            lines.extend(f"{method}\t{a!r}\t{frac!r}" for a, frac in pts)
        return "\n".join(lines) + "\n"


def performance_profile(results: Iterable[BenchRecord], metric: str = "n_H", a_max: Optional[float] = None) -> ProfileTable:
    """Performance profile over the problems seen in ``results``.

    Problems no method solves stay in the denominator, so such curves top out
    below 1. When a method has several repetitions of a problem the first is used.
    """
    table: dict = {}
    for r in results:
        table.setdefault(r.method, {}).setdefault(r.problem, r)
    if not table:
        raise ValueError("empty result set")
    methods = list(table)
    problems = sorted({p for m in methods for p in table[m]})
    cost = np.full((len(methods), len(problems)), np.inf)
    for i, m in enumerate(methods):
        for j, p in enumerate(problems):
            rec = table[m].get(p)
            if rec is not None and rec.solved:
                cost[i, j] = float(rec.metric(metric))
    best = cost.min(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(np.isfinite(cost), cost / np.where(best > 0, best, 1.0), np.inf)
        # a zero best cost makes every solver with zero cost tie at ratio 1
        ratio = np.where((best == 0) & np.isfinite(cost), np.where(cost == 0, 1.0, np.inf), ratio)
    finite = np.log2(ratio[np.isfinite(ratio)]) if np.isfinite(ratio).any() else np.array([0.0])
    top = float(np.max(finite)) if a_max is None else a_max
    grid = sorted({0.0, *(float(a) for a in finite if a <= top), max(top, 0.0)})
    ratios = {m: ratio[i] for i, m in enumerate(methods)}
    prof = ProfileTable(metric, {}, problems, ratios)
    for m in methods:
        prof.curves[m] = [(a, prof.fraction(m, a)) for a in grid]
    return prof
