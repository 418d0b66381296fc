"""Experiment orchestration: the (lambda, M) estimation schedule, Monte Carlo
replication loops, and CSV / summary / table output.

A replication is fully determined by its config and ``base_seed + rep``; the
worker pool only changes which process runs it, so CSV rows are identical
for any thread count (apart from the wall-time column).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources

import jsonschema
import numpy as np

from . import auxiliary as aux
from . import criterion as crit_mod
from . import inference as inf
from . import optimize as opt
from .models import (MODEL_INFO, ModelError, ObservedData, StructuralConfig, default_bounds,
                     draw_shocks, generate_observed)
from .smoothing import jackknife_weights


class ConfigError(ValueError):
    pass


def load_schema():
    text = resources.files("gii").joinpath("schema/experiment.schema.json").read_text()
    return json.loads(text)


@dataclass
class ExperimentConfig:
    model: str
    beta0: list
    n: int
    T: int = 1
    s: int = 0
    aux_variant: str = "#3"
    tie_after: int | None = None
    criterion: str = "LR"
    step_schedule: list = field(default_factory=lambda: [(0.03, 10), (0.003, 300)])
    second_step: str = "full"      # or "newton": one Newton-Raphson step per later step
    jackknife: dict = field(default_factory=dict)
    dyn_mode: str = "product"
    kernel: str = "logistic"
    optimizer: dict = field(default_factory=dict)
    replications: int = 200
    base_seed: int = 0
    start_at_truth: bool = True
    exclude_flagged: bool = False
    output: str | None = None
    name: str = ""
    targets: dict = field(default_factory=dict)

    def __post_init__(self):
        self.step_schedule = [(float(l), int(m)) for l, m in self.step_schedule]
        if not self.step_schedule:
            raise ConfigError("step_schedule must be nonempty")
        lams = [l for l, _ in self.step_schedule]
        Ms = [m for _, m in self.step_schedule]
        if any(b >= a for a, b in zip(lams, lams[1:])):
            raise ConfigError("step_schedule: lambda must be strictly decreasing")
        if any(b < a for a, b in zip(Ms, Ms[1:])):
            raise ConfigError("step_schedule: M must be nondecreasing")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        try:
            self.structural()
            self.optimizer_config()
            self.aux_spec()
        except (ModelError, ValueError) as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def from_dict(cls, d):
        try:
            jsonschema.validate(d, load_schema())
        except jsonschema.ValidationError as e:
            path = "/".join(str(p) for p in e.absolute_path) or "<root>"
            raise ConfigError(f"config error at {path}: {e.message}") from None
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(d)

    def to_dict(self):
        d = asdict(self)
        d["step_schedule"] = [list(p) for p in self.step_schedule]
        return d

    def digest(self):
        """Hash of everything that affects the estimates (not output paths or R)."""
        d = self.to_dict()
        for k in ("output", "replications", "name", "targets", "exclude_flagged"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    @property
    def params(self):
        return MODEL_INFO[self.model].params

    def structural(self):
        return StructuralConfig(self.model, self.beta0, self.n, self.T, self.s)

    def aux_spec(self):
        return aux.make_spec(self.model, self.aux_variant, self.T, self.s, self.tie_after)

    def optimizer_config(self):
        return opt.OptimizerConfig(**self.optimizer)

    def criterion_config(self, lam, M):
        return crit_mod.CriterionConfig(self.criterion, lam, M, jackknife_weights(**self.jackknife),
                                        dyn_mode=self.dyn_mode, kernel=self.kernel)


def resolve_config_path(path):
    """Return ``path`` if it exists, else the bundled config of that name."""
    if os.path.exists(path):
        return path
    name = os.path.basename(path)
    if not name.endswith(".json"):
        name += ".json"
    bundled = resources.files("gii").joinpath("configs", name)
    if bundled.is_file():
        return str(bundled)
    raise ConfigError(f"config file {path} not found")


# ---------------------------------------------------------------------------
# single estimation

NUMERICAL_ERRORS = (ValueError, ArithmeticError, np.linalg.LinAlgError, opt.LineSearchError)


@dataclass
class StepRecord:
    lam: float
    M: int
    start: list
    beta: list
    value: float
    reason: str
    n_iter: int
    n_binding: int


@dataclass
class EstimateResult:
    params: tuple
    beta_hat: np.ndarray
    se: np.ndarray
    status: str
    seconds: float
    steps: list = field(default_factory=list)
    inference: dict | None = None
    error: str | None = None

    @property
    def flagged(self):
        return self.status not in ("near_root", "near_root_second_order", "newton_step")

    def to_dict(self):
        return {"beta_hat": dict(zip(self.params, map(float, self.beta_hat))),
                "se": dict(zip(self.params, map(float, self.se))),
                "status": self.status, "flagged": self.flagged, "seconds": self.seconds,
                "steps": [asdict(s) for s in self.steps], "inference": self.inference,
                "error": self.error}


def newton_step(crit, beta):
    """One Newton-Raphson step on ``crit`` from ``beta``, kept inside the box."""
    g = crit.grad(beta)
    H = crit.hess(beta)
    p = -np.linalg.solve(H, g)
    lo, hi = crit.feasible_box()
    return np.clip(beta + p, lo, hi)


def _run_schedule(xcfg: ExperimentConfig, cfg, shocks, spec, design, data_Y, starts):
    ocfg = xcfg.optimizer_config()
    steps = []
    beta, hess, crit = None, None, None
    for k, (lam, M) in enumerate(xcfg.step_schedule):
        crit = crit_mod.make_criterion(cfg, shocks, spec, data_Y, xcfg.criterion_config(lam, M),
                                       design=design)
        if k == 0:
            lo, hi = crit.feasible_box()
            starts = [np.clip(b, lo, hi) for b in starts]
            if len(starts) == 1:
                res = opt.minimize(crit, starts[0], ocfg)
            else:
                res = opt.minimize_multistart(crit, starts, ocfg)
            start = res.trace.iterates[0]
        elif xcfg.second_step == "newton":
            start = beta
            b = newton_step(crit, beta)
            res = opt.OptResult(b, crit.value(b), crit.grad(b), "newton_step", 1, opt.OptTrace())
        else:
            start = beta
            res = opt.minimize(crit, beta, ocfg, init_hess=hess)
        steps.append(StepRecord(lam, M, [float(v) for v in start], [float(v) for v in res.beta],
                                float(res.value), res.reason, res.n_iter, crit.n_binding))
        beta, hess = res.beta, res.hess_approx
    return crit, beta, steps


def estimate_data(xcfg: ExperimentConfig, data: ObservedData, seed, starts=None) -> EstimateResult:
    """GII estimate on one observed dataset using simulation shocks from ``seed``.

    ``starts`` defaults to ``xcfg.beta0``.  Failures are returned as a flagged
    result, never raised.
    """
    t0 = time.perf_counter()
    params = xcfg.params
    nan = np.full(len(params), np.nan)
    steps = []
    try:
        cfg = xcfg.structural()
        M_max = max(m for _, m in xcfg.step_schedule)
        shocks = draw_shocks(cfg, M_max, seed, x=data.covariates())
        spec = xcfg.aux_spec()
        design = aux.AuxiliaryDesign(spec, shocks.x)
        data_Y = data.outcome_batch()
        starts = [np.asarray(xcfg.beta0, dtype=float)] if starts is None else starts
        crit, beta, steps = _run_schedule(xcfg, cfg, shocks, spec, design, data_Y, starts)
    except NUMERICAL_ERRORS as e:
        return EstimateResult(params, nan, nan, "failed", time.perf_counter() - t0, steps,
                              error=f"{type(e).__name__}: {e}")
    status = steps[-1].reason
    try:
        ir = inf.criterion_inference(crit, beta, data_Y[0])
        se, report = ir.se, ir.report(beta, list(params))
    except NUMERICAL_ERRORS as e:
        return EstimateResult(params, beta, nan, "inference_failed", time.perf_counter() - t0,
                              steps, error=f"{type(e).__name__}: {e}")
    return EstimateResult(params, beta, se, status, time.perf_counter() - t0, steps, report)


def replication_seed(xcfg: ExperimentConfig, rep):
    return xcfg.base_seed + rep


def estimate_once(xcfg: ExperimentConfig, rep) -> EstimateResult:
    """Simulate dataset ``rep`` at ``beta0`` and estimate it.

    The observed data come from shock panel 0 and the simulations from panels
    1..M of the same seed, so data and simulation draws never overlap.
    """
    seed = replication_seed(xcfg, rep)
    cfg = xcfg.structural()
    shocks = draw_shocks(cfg, 0, seed)
    data = generate_observed(cfg, shocks)
    starts = None if xcfg.start_at_truth else default_starts(xcfg, seed)
    return estimate_data(xcfg, data, seed, starts)


def default_starts(xcfg: ExperimentConfig, seed, k=4):
    """Multi-start grid for data with no known truth: a neutral point plus
    ``k`` uniform draws over a moderate sub-box of the parameter space."""
    lo, hi = default_bounds(xcfg.model)
    is_r = np.array(xcfg.params) == "r"
    lo = np.where(is_r, -0.8, np.maximum(lo, -2.0))
    hi = np.where(is_r, 0.8, np.minimum(hi, 2.0))
    neutral = np.where(is_r, 0.0, 0.5)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(99,)))
    return [neutral] + [rng.uniform(lo, hi) for _ in range(k)]


# ---------------------------------------------------------------------------
# Monte Carlo

def _mean_sd(x):
    """Two-pass mean and sample standard deviation."""
    x = [float(v) for v in x]
    if not x:
        return math.nan, math.nan
    mu = math.fsum(x) / len(x)
    if len(x) < 2:
        return mu, math.nan
    return mu, math.sqrt(math.fsum((v - mu) ** 2 for v in x) / (len(x) - 1))


@dataclass
class MCResult:
    params: tuple
    rows: list                      # dicts with rep, beta_hat, se, status, seconds
    config: dict | None = None
    exclude_flagged: bool = False

    def _used(self):
        return [r for r in self.rows if np.all(np.isfinite(r["beta_hat"]))
                and not (self.exclude_flagged and r["flagged"])]

    @property
    def n_flagged(self):
        return sum(r["flagged"] for r in self.rows)

    @property
    def converged_share(self):
        return 1.0 - self.n_flagged / len(self.rows)

    def aggregates(self):
        used = self._used()
        out = {"R": len(self.rows), "used": len(used), "flagged": self.n_flagged,
               "converged_share": self.converged_share, "mean": {}, "sd": {}, "mean_se": {},
               "se_ratio": {}}
        for j, p in enumerate(self.params):
            mu, sd = _mean_sd(r["beta_hat"][j] for r in used)
            se = [r["se"][j] for r in used if np.isfinite(r["se"][j])]
            mse, _ = _mean_sd(se)
            out["mean"][p], out["sd"][p], out["mean_se"][p] = mu, sd, mse
            out["se_ratio"][p] = mse / sd if sd > 0 else math.nan
        out["time"] = _mean_sd(r["seconds"] for r in self.rows)[0]
        return out

    def flagged_rows(self):
        return [r for r in self.rows if r["flagged"]]

    # -- serialization --------------------------------------------------------

    def columns(self):
        return (["rep"] + [f"{p}_hat" for p in self.params] + [f"se_{p}" for p in self.params]
                + ["status", "seconds"])

    def to_csv(self, fh=None):
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for r in self.rows:
            w.writerow([r["rep"]] + [repr(float(v)) for v in r["beta_hat"]]
                       + [repr(float(v)) for v in r["se"]] + [r["status"], repr(r["seconds"])])
        return buf.getvalue() if fh is None else None

    @classmethod
    def from_csv(cls, fh, exclude_flagged=False):
        rd = csv.reader(fh)
        head = next(rd)
        params = tuple(c[:-4] for c in head if c.endswith("_hat"))
        d = len(params)
        rows = []
        for line in rd:
            if not line:
                continue
            rows.append({"rep": int(line[0]),
                         "beta_hat": np.array([float(v) for v in line[1:1 + d]]),
                         "se": np.array([float(v) for v in line[1 + d:1 + 2 * d]]),
                         "status": line[1 + 2 * d], "seconds": float(line[2 + 2 * d]),
                         "flagged": line[1 + 2 * d] not in ("near_root", "near_root_second_order",
                                                            "newton_step")})
        return cls(params, rows, None, exclude_flagged)

    def summary(self):
        return {"config": self.config, "aggregates": self.aggregates(),
                "flagged_reps": [{"rep": r["rep"], "status": r["status"]}
                                 for r in self.flagged_rows()]}


def _row(rep, res: EstimateResult):
    return {"rep": rep, "beta_hat": np.asarray(res.beta_hat, dtype=float),
            "se": np.asarray(res.se, dtype=float), "status": res.status,
            "seconds": float(res.seconds), "flagged": res.flagged}


def _mc_task(args):
    d, rep = args
    xcfg = ExperimentConfig(**d)
    return _row(rep, estimate_once(xcfg, rep))


def run_mc(xcfg: ExperimentConfig, R=None, threads=1, progress=None) -> MCResult:
    """Run ``R`` independent replications (seeds ``base_seed + rep``).

    ``threads > 1`` uses a process pool; rows come back ordered by rep.
    ``progress`` is an optional callback receiving each finished row.
    """
    R = xcfg.replications if R is None else R
    d = xcfg.to_dict()
    tasks = [(d, rep) for rep in range(R)]
    if threads <= 1:
        rows = []
        for t in tasks:
            rows.append(_mc_task(t))
            if progress:
                progress(rows[-1])
    else:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            rows = []
            for row in ex.map(_mc_task, tasks):
                rows.append(row)
                if progress:
                    progress(row)
    rows.sort(key=lambda r: r["rep"])
    return MCResult(xcfg.params, rows, d, xcfg.exclude_flagged)


def check_targets(mc: MCResult, targets):
    """Compare aggregates with ``targets``; returns a list of (label, ok, detail)."""
    agg = mc.aggregates()
    out = []
    for p, (target, tol) in targets.get("mean", {}).items():
        v = agg["mean"][p]
        out.append((f"mean({p})", abs(v - target) <= tol, f"{v:.4f} vs {target} +/- {tol}"))
    for p, (target, rel) in targets.get("sd", {}).items():
        v = agg["sd"][p]
        out.append((f"sd({p})", abs(v - target) <= rel * target,
                    f"{v:.4f} vs {target} +/- {100 * rel:.0f}%"))
    if "se_ratio" in targets:
        lo, hi = targets["se_ratio"]
        for p in mc.params:
            v = agg["se_ratio"][p]
            out.append((f"se_ratio({p})", lo <= v <= hi, f"{v:.3f} in [{lo}, {hi}]"))
    if "min_converged" in targets:
        v = agg["converged_share"]
        out.append(("converged", v >= targets["min_converged"],
                    f"{v:.3f} >= {targets['min_converged']}"))
    return out


# ---------------------------------------------------------------------------
# tables

def render_table(mc: MCResult, label="GII", fmt="text"):
    """Mean | Std.dev | Time layout, one row per result."""
    agg = mc.aggregates()
    ps = mc.params
    head = ["", *(f"mean {p}" for p in ps), *(f"sd {p}" for p in ps), "time (s)"]
    row = [label, *(f"{agg['mean'][p]:.3f}" for p in ps), *(f"{agg['sd'][p]:.4f}" for p in ps),
           f"{agg['time']:.2f}"]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", *(f"mean_{p}" for p in ps), *(f"sd_{p}" for p in ps), "time"])
        w.writerow(row)
        return buf.getvalue()
    k = len(ps)
    widths = [max(len(h), len(c)) for h, c in zip(head, row)]
    group = ["".ljust(widths[0]),
             "Mean".center(sum(widths[1:1 + k]) + 3 * (k - 1)),
             "Std.dev".center(sum(widths[1 + k:1 + 2 * k]) + 3 * (k - 1)),
             "Time".center(widths[-1])]
    line = lambda cells: " | ".join(c.rjust(w) for c, w in zip(cells, widths))
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([" | ".join(group), line(head), sep, line(row)]) + "\n"


# ---------------------------------------------------------------------------
# dataset interchange

def _names(prefix, k):
    return [prefix] if k == 1 else [f"{prefix}{j + 1}" for j in range(k)]


def write_dataset(data: ObservedData, fh):
    """Flat CSV with header i, t, y..., x...; unobserved outcomes are empty."""
    n, T, d_y = data.y.shape
    d_x = data.x.shape[2]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["i", "t", *_names("y", d_y), *_names("x", d_x)])
    for i in range(n):
        for t in range(T):
            ys = ["" if np.isnan(v) else repr(float(v)) for v in data.y[i, t]]
            w.writerow([i, t, *ys, *(repr(float(v)) for v in data.x[i, t])])


def read_dataset(fh, model_id, s=0) -> ObservedData:
    info = MODEL_INFO[model_id]
    rd = csv.reader(fh)
    head = next(rd)
    want = ["i", "t", *_names("y", info.d_y), *_names("x", info.d_x)]
    if head != want:
        raise ConfigError(f"dataset header {head} does not match {model_id}: expected {want}")
    recs = [r for r in rd if r]
    if not recs:
        raise ConfigError("dataset has no rows")
    ii = np.array([int(r[0]) for r in recs])
    tt = np.array([int(r[1]) for r in recs])
    n, T = ii.max() + 1, tt.max() + 1
    if len(recs) != n * T:
        raise ConfigError(f"dataset is not a balanced panel ({len(recs)} rows for n={n}, T={T})")
    vals = np.array([[math.nan if v == "" else float(v) for v in r[2:]] for r in recs])
    y = np.full((n, T, info.d_y), np.nan)
    x = np.full((n, T, info.d_x), np.nan)
    y[ii, tt] = vals[:, :info.d_y]
    x[ii, tt] = vals[:, info.d_y:]
    if np.isnan(x).any():
        raise ConfigError("covariates must not be missing")
    return ObservedData(model_id, y, x, s)
