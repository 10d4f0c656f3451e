"""Experiment drivers: the BO loop, the gradient-vanishing diagnostic and CSV I/O."""

from __future__ import annotations

import csv
import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import qmc

from .acq_analytic import ANALYTIC_NAMES, AnalyticAcquisition, IncumbentState
from .acq_mc import MC_NAMES, MCAcquisition, Temperatures
from .acq_mohv import MOHV_NAMES, MOHVAcquisition, box_decompose, hypervolume, objective_upper_bound, pareto_filter
from .acq_opt import OptimConfig, optimize_acq
from .surrogate import NOISE_FLOOR, DataSet, FitError, GPHyperparams, GPModel
from .testbed import Problem, bilog, get_problem
from . import testbed

ACQUISITIONS = ANALYTIC_NAMES + MC_NAMES + MOHV_NAMES


@dataclass
class RunConfig:
    problem: str
    acquisition: str
    q: int = 1
    iterations: int = 10
    n_init: Optional[int] = None  # None -> 2 * dim
    replicates: int = 1
    seed: int = 0
    noise_fraction: float = 0.0
    temperatures: Temperatures = field(default_factory=Temperatures)
    optim: OptimConfig = field(default_factory=OptimConfig)
    fat: bool = True
    num_samples: Optional[int] = None
    timing: bool = False
    output: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.temperatures, dict):
            self.temperatures = Temperatures(**self.temperatures)
        if isinstance(self.optim, dict):
            self.optim = OptimConfig(**self.optim)
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if self.n_init is not None and self.n_init < 1:
            raise ValueError("n_init must be at least 1")
        if self.q < 1 or self.iterations < 0:
            raise ValueError("q must be >= 1 and iterations >= 0")
        if self.acquisition not in ACQUISITIONS:
            raise ValueError(f"unknown acquisition {self.acquisition!r}; known: {', '.join(ACQUISITIONS)}")
        if self.acquisition in ANALYTIC_NAMES and self.q != 1:
            raise ValueError("analytic acquisitions only support q = 1")

    def resolved_n_init(self, problem: Problem) -> int:
        return self.n_init if self.n_init is not None else 2 * problem.dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["temperatures"] = asdict(self.temperatures)
        d["optim"] = asdict(self.optim)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))


@dataclass
class TrialRecord:
    replicate: int
    iteration: int
    phase: str  # init | bo | failed
    x: list
    y: list  # observed objectives (maximization sense) then constraint values
    best: float
    acq_value: float = math.nan
    zero_grad_restarts: int = 0
    wall_ms: float = 0.0
    seed: int = 0


# --- CSV -------------------------------------------------------------------------


def _fmt(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def csv_header(dim: int, n_y: int) -> list[str]:
    return (["replicate", "iteration", "phase"] + [f"x{i}" for i in range(dim)] + [f"y{i}" for i in range(n_y)]
            + ["best", "acq_value", "zero_grad_restarts", "wall_ms", "seed"])


def write_results(records: list[TrialRecord], path, dim: Optional[int] = None, n_y: Optional[int] = None) -> None:
    """Write records as CSV; full round-trip decimal for every float."""
    path = Path(path)
    if records:
        dim = len(records[0].x) if dim is None else dim
        n_y = len(records[0].y) if n_y is None else n_y
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(csv_header(dim or 0, n_y or 0))
            for r in records:
                xs = list(r.x) + [math.nan] * (dim - len(r.x))
                ys = list(r.y) + [math.nan] * (n_y - len(r.y))
                w.writerow([r.replicate, r.iteration, r.phase] + [_fmt(v) for v in xs] + [_fmt(v) for v in ys]
                           + [_fmt(r.best), _fmt(r.acq_value), r.zero_grad_restarts, _fmt(r.wall_ms), r.seed])
    except OSError as err:
        raise OSError(f"cannot write results to {path}: {err}") from err


def read_results(path) -> list[TrialRecord]:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as err:
        raise OSError(f"cannot read results from {path}: {err}") from err
    header, body = rows[0], rows[1:]
    xi = [i for i, h in enumerate(header) if h.startswith("x")]
    yi = [i for i, h in enumerate(header) if h.startswith("y")]
    col = {h: i for i, h in enumerate(header)}
    out = []
    for row in body:
        out.append(TrialRecord(
            replicate=int(row[col["replicate"]]), iteration=int(row[col["iteration"]]), phase=row[col["phase"]],
            x=[float(row[i]) for i in xi], y=[float(row[i]) for i in yi], best=float(row[col["best"]]),
            acq_value=float(row[col["acq_value"]]), zero_grad_restarts=int(row[col["zero_grad_restarts"]]),
            wall_ms=float(row[col["wall_ms"]]), seed=int(row[col["seed"]]),
        ))
    return out


def merge_shards(paths, out) -> list[TrialRecord]:
    """Concatenate shard files, stably ordered by (replicate, iteration)."""
    records = [r for p in paths for r in read_results(p)]
    records.sort(key=lambda r: (r.replicate, r.iteration))
    dims = None
    if not records:
        with Path(paths[0]).open(encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
        dims = (sum(h.startswith("x") for h in header), sum(h.startswith("y") for h in header))
    write_results(records, out, *(dims or (None, None)))
    return records


# --- BO loop -----------------------------------------------------------------------


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def initial_design(dim: int, n: int, seed) -> np.ndarray:
    """Scrambled Sobol points in the unit cube."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # non power-of-two sample sizes
        return qmc.Sobol(dim, scramble=True, seed=np.random.default_rng(seed)).random(n)


class _State:
    """Observation history of one replicate."""

    def __init__(self, problem: Problem):
        self.p = problem
        self.X: list[np.ndarray] = []
        self.Y_obs: list[np.ndarray] = []  # maximization sense, noisy
        self.Y_true: list[np.ndarray] = []
        self.C: list[np.ndarray] = []

    def add(self, u, y_obs, y_true, c):
        self.X.append(np.asarray(u, float))
        self.Y_obs.append(y_obs)
        self.Y_true.append(y_true)
        self.C.append(c)

    def best(self) -> float:
        if self.p.num_objectives > 1:
            return hypervolume(pareto_filter(np.array(self.Y_true), self.p.ref_point))
        vals = [y[0] for y, c in zip(self.Y_true, self.C) if np.all(c <= 0)]
        return float(max(vals)) if vals else -math.inf


def _fit(X, y, seed):
    try:
        return GPModel.fit(X, y, seed=seed)
    except FitError:
        # one retry with a fresh stream and a larger fixed noise
        return GPModel.fit(X, y, seed=np.random.default_rng([_seed_int(np.random.SeedSequence(seed)), 1]),
                           fixed_noise=1e-4)


def _make_factory(cfg: RunConfig, problem: Problem, st: _State, seed: int):
    X = np.array(st.X)
    Y = np.array(st.Y_obs)
    C = np.array(st.C).reshape(len(X), -1)
    Cb = bilog(C)
    ss = np.random.SeedSequence([seed])
    fit_seeds = ss.spawn(Y.shape[1] + Cb.shape[1] + 1)
    ydata = DataSet.from_raw(X, Y)
    models = [_fit(X, ydata.column(m), fit_seeds[m]) for m in range(Y.shape[1])]
    cons_models, thresholds = [], []
    if Cb.shape[1]:
        cdata = DataSet.from_raw(X, Cb)
        for k in range(Cb.shape[1]):
            cons_models.append(_fit(X, cdata.column(k), fit_seeds[Y.shape[1] + k]))
            thresholds.append(float(cdata.standardize(0.0, k)))
    acq_seed = _seed_int(fit_seeds[-1])
    name = cfg.acquisition
    feasible = np.all(C <= 0, axis=1) if C.shape[1] else np.ones(len(X), bool)

    if name in MOHV_NAMES:
        Ys = ydata.outputs
        ref = (problem.ref_point - ydata.y_mean) / ydata.y_std
        P = pareto_filter(Ys, ref)
        upper = np.maximum(objective_upper_bound(Ys), ref + 1e-6)
        decomp = box_decompose(P, upper)

        def make(q, pending):
            return MOHVAcquisition(name, models, decomp, q=q, temps=cfg.temperatures,
                                   num_samples=cfg.num_samples, seed=acq_seed, pending=pending)
        return make

    y_std = ydata.outputs[:, 0]
    y_star = float(y_std[feasible].max()) if feasible.any() else None
    if name in ANALYTIC_NAMES:
        inc = IncumbentState(y_star)
        if name in ("cei", "logcei"):
            return lambda q, pending: AnalyticAcquisition(name, models[0], inc, cons_models, thresholds)
        if y_star is None:
            inc = IncumbentState(float(y_std.max()))
        return lambda q, pending: AnalyticAcquisition(name, models[0], inc)

    if name != "qlogcei":
        cons_models, thresholds = [], None
        if y_star is None:
            y_star = float(y_std.max())

    def make(q, pending):
        return MCAcquisition(name, models[0], y_star, q=q, temps=cfg.temperatures, fat=cfg.fat,
                             num_samples=cfg.num_samples, seed=acq_seed, pending=pending,
                             constraint_models=cons_models, thresholds=thresholds)
    return make


def _observe(problem: Problem, u, noise_std: float, rng):
    y_true = problem.objectives(u)
    y_obs = y_true + noise_std * rng.standard_normal(y_true.shape) if noise_std > 0 else y_true.copy()
    return y_obs, y_true, problem.constraints(u)


def run_replicate(cfg: RunConfig, rep: int) -> list[TrialRecord]:
    """Records of one replicate; depends only on (config, master seed, rep)."""
    problem = get_problem(cfg.problem)
    d = problem.dim
    n_init = cfg.resolved_n_init(problem)
    rep_ss = np.random.SeedSequence([cfg.seed, rep])
    init_ss, noise_ss = rep_ss.spawn(2)
    noise_rng = np.random.default_rng(noise_ss)
    noise_std = cfg.noise_fraction * (problem.value_range or 1.0)
    st = _State(problem)
    records: list[TrialRecord] = []

    def emit(u, y_obs, c, phase, it, acq_value=math.nan, zero=0, wall=0.0, seed=0):
        records.append(TrialRecord(rep, it, phase, [float(v) for v in u],
                                   [float(v) for v in np.concatenate([y_obs, c])], st.best(),
                                   float(acq_value), int(zero), float(wall), int(seed)))

    init_seed = _seed_int(init_ss)
    for u in initial_design(d, n_init, init_ss):
        y_obs, y_true, c = _observe(problem, u, noise_std, noise_rng)
        st.add(u, y_obs, y_true, c)
        emit(u, y_obs, c, "init", 0, seed=init_seed)

    for it in range(1, cfg.iterations + 1):
        it_ss = np.random.SeedSequence([cfg.seed, rep, it])
        it_seed = _seed_int(it_ss)
        t0 = time.perf_counter()
        try:
            make = _make_factory(cfg, problem, st, it_seed)
            ocfg = OptimConfig(**{**asdict(cfg.optim), "seed": it_seed})
            rep_ = optimize_acq(make, d, cfg.q, ocfg)
        except (FitError, RuntimeError, np.linalg.LinAlgError) as err:
            records.append(TrialRecord(rep, it, "failed", [math.nan] * d,
                                       [math.nan] * (problem.num_objectives + problem.num_constraints),
                                       st.best(), math.nan, 0, 0.0, it_seed))
            warnings.warn(f"replicate {rep} failed at iteration {it}: {err}")
            break
        wall = (time.perf_counter() - t0) * 1e3 if cfg.timing else 0.0
        for u in np.clip(rep_.best_x, 0.0, 1.0):
            y_obs, y_true, c = _observe(problem, u, noise_std, noise_rng)
            st.add(u, y_obs, y_true, c)
            emit(u, y_obs, c, "bo", it, rep_.best_value, rep_.n_zero_grad, wall, it_seed)
    return records


def _run_rep_args(args):
    cfg, rep = args
    return run_replicate(cfg, rep)


def run_bo(cfg: RunConfig, jobs: int = 1) -> list[TrialRecord]:
    """All replicates, ordered by replicate index; writes CSV + JSON when configured."""
    get_problem(cfg.problem)
    if jobs > 1 and cfg.replicates > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_run_rep_args, [(cfg, r) for r in range(cfg.replicates)]))
        if cfg.output:
            out = Path(cfg.output)
            shards = []
            for r, recs in enumerate(parts):
                shard = out.with_name(f"{out.stem}.rep{r}{out.suffix}")
                write_results(recs, shard, *_dims(cfg))
                shards.append(shard)
            merge_shards(shards, out)
            for s in shards:
                s.unlink()
            Path(str(out) + ".config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
        return [r for part in parts for r in part]
    records = [r for rep in range(cfg.replicates) for r in run_replicate(cfg, rep)]
    if cfg.output:
        write_results(records, cfg.output, *_dims(cfg))
        Path(str(cfg.output) + ".config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
    return records


def _dims(cfg: RunConfig):
    p = get_problem(cfg.problem)
    return p.dim, p.num_objectives + p.num_constraints


def final_best(records: list[TrialRecord]) -> dict[int, float]:
    out: dict[int, float] = {}
    for r in records:
        out[r.replicate] = r.best
    return out


def summarize(records: list[TrialRecord]) -> list[dict]:
    """Per-iteration mean, median and 2-standard-error band of ``best`` over replicates."""
    by_it: dict[int, dict[int, float]] = {}
    for r in records:
        if r.phase == "failed":
            continue
        by_it.setdefault(r.iteration, {})[r.replicate] = r.best
    rows = []
    for it in sorted(by_it):
        v = np.array(list(by_it[it].values()), float)
        fin = v[np.isfinite(v)]
        se = float(fin.std(ddof=1) / np.sqrt(len(fin))) if len(fin) > 1 else 0.0
        rows.append({
            "iteration": it, "n": len(v),
            "mean": float(fin.mean()) if len(fin) else -math.inf,
            "median": float(np.median(v)),
            "lo": float(fin.mean() - 2 * se) if len(fin) else -math.inf,
            "hi": float(fin.mean() + 2 * se) if len(fin) else -math.inf,
        })
    return rows


# --- vanishing-gradient diagnostic -----------------------------------------------------

PRIOR_HP_LENGTHSCALE = 0.5


def ackley_dgp(d: int, n: int, rng, frac_uniform: float = 0.8, cluster_sd: float = 0.25):
    """Training inputs for the diagnostic: uniform draws plus a Gaussian cluster at the optimum.

    Cluster draws are clamped to the unit cube. Returns (X, n_clamped).
    """
    n_uni = int(round(frac_uniform * n))
    Xu = rng.uniform(size=(n_uni, d))
    Xg = 0.5 + cluster_sd * rng.standard_normal((n - n_uni, d))
    n_clamped = int(np.sum(np.any((Xg < 0) | (Xg > 1), axis=1)))
    return np.vstack([Xu, np.clip(Xg, 0.0, 1.0)]), n_clamped


def grad_vanish_experiment(d_list, n_list, replicates: int = 1, seed: int = 0, n_test: int = 2000,
                           threshold: float = 1e-10) -> list[dict]:
    """Fraction of uniform test points where |grad EI| and |grad LogEI| fall below ``threshold``.

    Rows are sorted by (d, n, acq); fractions are averaged over replicates.
    """
    rows = []
    for d in sorted(d_list):
        problem = testbed.ackley(d)
        for n in sorted(n_list):
            fr = {"ei": [], "logei": []}
            clamped = 0
            for rep in range(replicates):
                ss = np.random.SeedSequence([seed, d, n, rep])
                data_ss, fit_ss, test_ss = ss.spawn(3)
                rng = np.random.default_rng(data_ss)
                X, nc = ackley_dgp(d, n, rng)
                clamped += nc
                if n:
                    y = np.array([problem.objectives(u)[0] for u in X])
                    data = DataSet.from_raw(X, y)
                    model = GPModel.fit(X, data.column(0), seed=np.random.default_rng(fit_ss))
                    inc = IncumbentState(float(data.column(0).max()))
                else:
                    hp = GPHyperparams(np.full(d, PRIOR_HP_LENGTHSCALE), 1.0, NOISE_FLOOR, 0.0)
                    model = GPModel(hp, np.zeros((0, d)), np.zeros(0))
                    inc = IncumbentState(0.0)
                T = np.random.default_rng(test_ss).uniform(size=(n_test, d))
                for name in fr:
                    _, g = AnalyticAcquisition(name, model, inc).evaluate(T)
                    fr[name].append(float(np.mean(np.linalg.norm(g, axis=1) < threshold)))
            for name in ("ei", "logei"):
                rows.append({"d": d, "n": n, "acq": name, "fraction": float(np.mean(fr[name])),
                             "threshold": threshold, "replicates": replicates, "clamped_points": clamped})
    return rows
