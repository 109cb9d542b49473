"""Single-task ElasticNet and multi-task L2/1 regression with grouped
cross-validation.

Both solvers minimise, on internally standardised data,

    1/(2n) ||Y - XW||_F^2 + alpha*rho * P(W) + alpha*(1 - rho)/2 * ||W||_F^2

where ``P`` is the L1 norm for a single task and the sum of row L2 norms
(one row per feature, across tasks) in the multi-task case.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from . import _kernels
from .errors import ConfigError, ConvergenceError, InvalidInputError, SchemaError, StandardizationError

logger = logging.getLogger(__name__)

DEFAULT_ALPHAS = np.logspace(-4, 1, 15)
DEFAULT_RHOS = (0.1, 0.5, 0.9)
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 10_000
KKT_FACTOR = 10.0


# --- core solvers on raw arrays ----------------------------------------------------

def objective(X, Y, W, alpha, rho, group=True) -> float:
    X, Y, W = np.asarray(X, float), _as_2d(Y), _as_2d(W)
    n = X.shape[0]
    R = Y - X @ W
    pen = np.linalg.norm(W, axis=1).sum() if group else np.abs(W).sum()
    return 0.5 * float((R * R).sum()) / n + alpha * rho * pen + 0.5 * alpha * (1 - rho) * float((W * W).sum())


def kkt_residual(X, Y, W, alpha, rho, group=True) -> float:
    """Largest violation of the optimality conditions of the penalised
    least-squares problem (row norms in the group case)."""
    X, Y, W = np.asarray(X, float), _as_2d(Y), _as_2d(W)
    n = X.shape[0]
    l1, l2 = alpha * rho, alpha * (1 - rho)
    G = X.T @ (Y - X @ W) / n  # negative gradient of the loss
    worst = 0.0
    for j in range(W.shape[0]):
        wj, gj = W[j], G[j]
        if group:
            nrm = np.linalg.norm(wj)
            if nrm > 0:
                v = np.linalg.norm(-gj + l2 * wj + l1 * wj / nrm)
            else:
                v = max(np.linalg.norm(gj) - l1, 0.0)
        else:
            active = wj != 0
            v_act = np.abs(-gj + l2 * wj + l1 * np.sign(wj))[active]
            v_in = np.maximum(np.abs(gj) - l1, 0.0)[~active]
            v = max(v_act.max(initial=0.0), v_in.max(initial=0.0))
        worst = max(worst, float(v))
    return worst


def _as_2d(a):
    a = np.asarray(a, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def solve(X, Y, alpha, rho, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, group=None,
          W0=None, debug=False):
    """Cyclic coordinate descent on raw (unstandardised, no intercept) data.

    ``group=False`` uses scalar soft-thresholding per coefficient (ElasticNet,
    each column of ``Y`` solved independently); ``group=True`` uses the
    row-wise group update. Defaults to group mode when ``Y`` has several
    columns. Stops once the largest coefficient change is below ``tol`` and
    the KKT residual is at most ``10 * tol``.

    Returns ``(W, n_sweeps, kkt)``.
    """
    if alpha < 0 or not 0 <= rho <= 1:
        raise ConfigError("need alpha >= 0 and rho in [0, 1]")
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = _as_2d(Y)
    n, p = X.shape
    T = Y.shape[1]
    if group is None:
        group = T > 1
    l1, l2 = alpha * rho, alpha * (1 - rho)
    colsq = (X * X).sum(axis=0) / n
    W = np.zeros((p, T)) if W0 is None else np.array(_as_2d(W0), dtype=np.float64)
    if W0 is None and l1 > 0:
        # zero already optimal: |x_j.Y| / n within l1 for every row (up to rounding)
        G = X.T @ Y / n
        G = np.linalg.norm(G, axis=1) if group else np.abs(G).max(axis=1)
        if G.max() <= l1 * (1 + 1e-12):
            return W, 0, float(max(G.max() - l1, 0.0))
    R = np.ascontiguousarray(Y - X @ W)
    W = np.ascontiguousarray(W)

    prev_obj = objective(X, Y, W, alpha, rho, group) if debug else None
    kkt = math.inf
    for sweep in range(1, max_iter + 1):
        if group:
            change = _kernels.group_sweep(X, R, W, colsq, l1, l2)
        else:
            change = 0.0
            for t in range(T):
                wt = np.ascontiguousarray(W[:, t])
                rt = np.ascontiguousarray(R[:, t])
                change = max(change, _kernels.enet_sweep(X, rt, wt, colsq, l1, l2))
                W[:, t] = wt
                R[:, t] = rt
        if debug:
            obj = objective(X, Y, W, alpha, rho, group)
            assert obj <= prev_obj + 1e-12 * max(1.0, abs(prev_obj)), (sweep, prev_obj, obj)
            prev_obj = obj
        if change < tol:
            R = np.ascontiguousarray(Y - X @ W)  # drop accumulated drift
            kkt = kkt_residual(X, Y, W, alpha, rho, group)
            if kkt <= KKT_FACTOR * tol:
                break
    else:
        raise ConvergenceError(
            "coordinate descent did not converge in %d sweeps (KKT residual %.3g)" % (max_iter, kkt),
            kkt_residual=kkt, n_iter=max_iter)

    if alpha == 0:
        # penalty-free: any least-squares solution; report the minimum-norm one
        U, s, Vt = np.linalg.svd(X, full_matrices=False)
        V = Vt[s > s.max(initial=0.0) * max(n, p) * np.finfo(float).eps].T
        W = V @ (V.T @ W)
    return W, sweep, kkt


def alpha_max(X, Y, rho) -> float:
    """Smallest ``alpha`` whose solution is identically zero (raw data)."""
    X, Y = np.asarray(X, float), _as_2d(Y)
    G = X.T @ Y / X.shape[0]
    if rho <= 0:
        return math.inf
    return float(np.linalg.norm(G, axis=1).max() / rho)


# --- models ----------------------------------------------------------------------------

@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    def apply(self, A):
        return (A - self.mean) / self.scale


def standardizer(A, names, strict=True, what="column") -> Standardizer:
    """Population mean/sd per column. Zero-variance columns raise when
    ``strict``; otherwise they get unit scale (and thus stay all-zero)."""
    mean = A.mean(axis=0)
    sd = A.std(axis=0)
    flat = np.ptp(A, axis=0) == 0
    if flat.any():
        if strict:
            bad = [names[i] for i in np.flatnonzero(flat)]
            raise StandardizationError("zero-variance %s(s): %s" % (what, ", ".join(map(str, bad))), bad)
        sd = np.where(flat, 1.0, sd)
    return Standardizer(mean, sd)


@dataclass
class RegressionModel:
    columns: list
    tasks: list
    coef: np.ndarray  # (n_features, n_tasks), standardised units
    intercept: np.ndarray  # per task, target units
    x_std: Standardizer
    y_std: Standardizer
    alpha: float
    rho: float
    multitask: bool
    n_iter: int = 0
    kkt: float = 0.0
    seed: Optional[int] = None

    @property
    def n_nonzero(self) -> int:
        return int(np.count_nonzero(np.any(self.coef != 0, axis=1)))

    def raw_coef(self):
        """Coefficients and intercepts on the original feature/target scale."""
        B = self.coef / self.x_std.scale[:, None] * self.y_std.scale[None, :]
        b0 = self.y_std.mean - self.x_std.mean @ B
        return B, b0

    def to_json(self) -> str:
        return json.dumps({
            "columns": list(map(str, self.columns)),
            "tasks": list(map(str, self.tasks)),
            "coef": self.coef.tolist(),
            "intercept": self.intercept.tolist(),
            "x_mean": self.x_std.mean.tolist(), "x_scale": self.x_std.scale.tolist(),
            "y_mean": self.y_std.mean.tolist(), "y_scale": self.y_std.scale.tolist(),
            "alpha": self.alpha, "rho": self.rho, "multitask": self.multitask,
            "n_iter": self.n_iter, "kkt": self.kkt, "seed": self.seed,
        }, indent=1)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        arr = lambda k: np.asarray(d[k], dtype=np.float64)  # noqa: E731
        return cls(
            columns=d["columns"], tasks=d["tasks"], coef=arr("coef").reshape(len(d["columns"]), len(d["tasks"])),
            intercept=arr("intercept"), x_std=Standardizer(arr("x_mean"), arr("x_scale")),
            y_std=Standardizer(arr("y_mean"), arr("y_scale")), alpha=d["alpha"], rho=d["rho"],
            multitask=d["multitask"], n_iter=d.get("n_iter", 0), kkt=d.get("kkt", 0.0), seed=d.get("seed"),
        )


def _design(X, columns=None):
    if isinstance(X, pd.DataFrame):
        return X.to_numpy(dtype=np.float64), list(X.columns)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidInputError("design matrix must be 2-D")
    return X, list(columns) if columns is not None else ["x%d" % j for j in range(X.shape[1])]


def _targets(Y, tasks=None):
    if isinstance(Y, pd.Series):
        return Y.to_numpy(dtype=np.float64)[:, None], [Y.name or "y"]
    if isinstance(Y, pd.DataFrame):
        return Y.to_numpy(dtype=np.float64), list(Y.columns)
    Y = _as_2d(Y)
    return Y, list(tasks) if tasks is not None else ["y%d" % t for t in range(Y.shape[1])]


def _fit(X, Y, alpha, rho, multitask, tol, max_iter, columns, tasks, strict=True, debug=False):
    X, columns = _design(X, columns)
    Y, tasks = _targets(Y, tasks)
    if X.shape[0] != Y.shape[0]:
        raise InvalidInputError("X has %d rows but Y has %d" % (X.shape[0], Y.shape[0]))
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise InvalidInputError("design and targets must be finite (impute upstream)")
    xs = standardizer(X, columns, strict)
    ys = standardizer(Y, tasks, strict, what="target")
    W, it, kkt = solve(xs.apply(X), ys.apply(Y), alpha, rho, tol, max_iter, group=multitask, debug=debug)
    return RegressionModel(columns, tasks, W, ys.mean.copy(), xs, ys, float(alpha), float(rho),
                           multitask, it, kkt)


def elasticnet_fit(X, y, alpha, rho, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, columns=None,
                   debug=False) -> RegressionModel:
    """ElasticNet linear regression for one target.

    Features are standardised to zero mean and unit population sd and the
    target is centred and scaled; the statistics are stored on the model.
    """
    Y, tasks = _targets(y)
    if Y.shape[1] != 1:
        raise InvalidInputError("elasticnet_fit takes a single target; use multitask_fit")
    return _fit(X, Y, alpha, rho, False, tol, max_iter, columns, tasks, debug=debug)


def multitask_fit(X, Y, alpha, rho, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, columns=None,
                  tasks=None, debug=False) -> RegressionModel:
    """Multi-task regression with the L2/1 mixed norm: each feature's weights
    across tasks are kept or dropped together."""
    return _fit(X, Y, alpha, rho, True, tol, max_iter, columns, tasks, debug=debug)


def predict(model: RegressionModel, X_new) -> np.ndarray:
    """Predictions of shape ``(n_rows, n_tasks)`` in target units."""
    if isinstance(X_new, pd.DataFrame):
        if set(X_new.columns) != set(model.columns):
            missing = sorted(set(model.columns) - set(X_new.columns))
            extra = sorted(set(X_new.columns) - set(model.columns))
            raise SchemaError("column mismatch: missing %s, unexpected %s" % (missing, extra))
        X = X_new[model.columns].to_numpy(dtype=np.float64)
    else:
        X = np.asarray(X_new, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(model.columns):
            raise SchemaError("expected %d columns, got shape %r" % (len(model.columns), X.shape))
    Z = model.x_std.apply(X) @ model.coef
    return Z * model.y_std.scale + model.intercept


# --- cross-validation ------------------------------------------------------------------

def grouped_kfold(user_ids, k=10, seed=0) -> np.ndarray:
    """Fold index per row; every row of a user shares one fold and fold user
    counts differ by at most one."""
    user_ids = np.asarray(user_ids)
    users = np.unique(user_ids)
    if k < 2:
        raise ConfigError("need at least 2 folds")
    if users.size < k:
        raise ConfigError("%d distinct users cannot fill %d folds" % (users.size, k))
    rng = np.random.default_rng(seed)
    shuffled = users[rng.permutation(users.size)]
    fold_of = {}
    for f, chunk in enumerate(np.array_split(shuffled, k)):
        for u in chunk:
            fold_of[u] = f
    return np.array([fold_of[u] for u in user_ids], dtype=np.int64)


def pearson(a, b) -> float:
    a = np.asarray(a, float) - np.mean(a)
    b = np.asarray(b, float) - np.mean(b)
    den = math.sqrt(float(a @ a) * float(b @ b))
    return float(a @ b) / den if den > 0 else float("nan")


@dataclass
class FoldResult:
    fold: int
    task: str
    r: float
    mse: float
    n_test: int
    alpha: float
    rho: float
    skipped: bool = False
    note: str = ""


@dataclass
class CvReport:
    mode: str
    tasks: list
    folds: list
    fold_of_row: np.ndarray
    groups: np.ndarray
    predictions: np.ndarray  # held-out predictions, (n_rows, n_tasks)
    targets: np.ndarray
    train_oof: dict = field(default_factory=dict, repr=False)  # fold -> (train idx, inner OOF preds)
    feature_set: str = ""

    def _task_folds(self, task):
        return [f for f in self.folds if f.task == task and not f.skipped]

    def mean_r(self, task) -> float:
        return float(np.mean([f.r for f in self._task_folds(task)]))

    def mean_mse(self, task) -> float:
        return float(np.mean([f.mse for f in self._task_folds(task)]))

    def pooled_r(self, task) -> float:
        t = self.tasks.index(task)
        return pearson(self.predictions[:, t], self.targets[:, t])

    def pooled_mse(self, task) -> float:
        t = self.tasks.index(task)
        return float(np.mean((self.predictions[:, t] - self.targets[:, t]) ** 2))

    def fold_users(self) -> list:
        k = int(self.fold_of_row.max()) + 1
        return [set(self.groups[self.fold_of_row == f].tolist()) for f in range(k)]

    def check_disjoint(self):
        sets = self.fold_users()
        for i in range(len(sets)):
            for j in range(i + 1, len(sets)):
                if sets[i] & sets[j]:
                    raise AssertionError("folds %d and %d share users" % (i, j))
        if set().union(*sets) != set(self.groups.tolist()):
            raise AssertionError("folds do not cover every user")

    def fold_frame(self) -> pd.DataFrame:
        rows = [dict(feature_set=self.feature_set, mode=self.mode, task=f.task, fold=f.fold, r=f.r,
                     mse=f.mse, n_test=f.n_test, alpha=f.alpha, rho=f.rho, skipped=f.skipped, note=f.note)
                for f in self.folds]
        for task in self.tasks:
            rows.append(dict(feature_set=self.feature_set, mode=self.mode, task=task, fold="mean",
                             r=self.mean_r(task), mse=self.mean_mse(task), n_test=len(self.targets),
                             alpha=float("nan"), rho=float("nan"), skipped=False, note=""))
        return pd.DataFrame(rows)


def _select(scores):
    """Pick ``(alpha, rho)`` with the lowest MSE; ties go to larger alpha,
    then larger rho."""
    best = min(s for s, _, _ in scores)
    tied = [(a, r) for s, a, r in scores if s <= best + 1e-12 * max(1.0, abs(best))]
    return max(tied)


def _grid_search(X, Y, groups, multitask, alphas, rhos, inner_k, seed, tol, max_iter, score_cols):
    """Inner grouped CV over the grid. Returns the chosen ``(alpha, rho)`` and
    the inner out-of-fold predictions at that choice."""
    folds = grouped_kfold(groups, inner_k, seed)
    alphas = sorted(alphas, reverse=True)
    n, T = Y.shape
    oof = {}
    sse = {}
    for f in range(inner_k):
        tr, te = folds != f, folds == f
        xs = standardizer(X[tr], None, strict=False)
        ys = standardizer(Y[tr], None, strict=False)
        Xtr, Xte = xs.apply(X[tr]), xs.apply(X[te])
        Ytr = ys.apply(Y[tr])
        for rho in rhos:
            W = None
            for alpha in alphas:  # warm-started path from the sparse end
                W, _, _ = solve(Xtr, Ytr, alpha, rho, tol, max_iter, group=multitask, W0=W)
                pred = (Xte @ W) * ys.scale + ys.mean
                key = (alpha, rho)
                oof.setdefault(key, np.zeros((n, T)))[te] = pred
                err = ((pred - Y[te])[:, score_cols] ** 2).sum()
                sse[key] = sse.get(key, 0.0) + err
    scores = [(sse[k] / (n * len(score_cols)), k[0], k[1]) for k in sse]
    choice = _select(scores)
    return choice, oof[choice]


def cross_validate(X, Y, groups=None, mode="single", k=10, alphas=DEFAULT_ALPHAS, rhos=DEFAULT_RHOS,
                   seed=0, report_tasks=None, inner_k=3, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                   tasks=None, feature_set="") -> CvReport:
    """Grouped k-fold evaluation with nested hyper-parameter search.

    Targets are z-scaled once over all rows, so held-out MSE is on unit
    scale (a mean predictor scores about 1). Per outer fold, ``(alpha,
    rho)`` is chosen by ``inner_k``-fold grouped search on the training
    users alone. ``mode="single"`` fits each reported task on its own;
    ``mode="multi"`` fits all tasks jointly and selects hyper-parameters by
    the mean inner MSE over ``report_tasks``.
    """
    if mode not in ("single", "multi"):
        raise ConfigError("mode must be 'single' or 'multi'")
    X, _ = _design(X)
    Y, tasks = _targets(Y, tasks)
    n = X.shape[0]
    if groups is None:
        groups = np.arange(n)
    groups = np.asarray(groups)
    report_tasks = list(report_tasks) if report_tasks is not None else list(tasks)
    rep_idx = [tasks.index(t) for t in report_tasks]
    if mode == "multi" and Y.shape[1] < 2:
        raise ConfigError("multi-task mode needs at least two tasks")

    # one global z-scaling of the targets, never repeated per fold
    sd = Y.std(axis=0, ddof=1)
    if np.any(sd == 0):
        raise StandardizationError("constant target", [tasks[i] for i in np.flatnonzero(sd == 0)])
    Yz = (Y - Y.mean(axis=0)) / sd

    fold_of = grouped_kfold(groups, k, seed)
    preds = np.full((n, len(report_tasks)), np.nan)
    results, train_oof = [], {}
    for f in range(k):
        tr, te = np.flatnonzero(fold_of != f), np.flatnonzero(fold_of == f)
        inner_seed = seed + 1 + f
        if mode == "multi":
            jobs = [(rep_idx, list(range(Y.shape[1])))]
        else:
            jobs = [([t], [t]) for t in rep_idx]
        fold_oof = np.zeros((tr.size, len(report_tasks)))
        for reported, cols in jobs:
            Ytr = Yz[np.ix_(tr, cols)]
            score_cols = [cols.index(t) for t in reported]
            (alpha, rho), oof = _grid_search(X[tr], Ytr, groups[tr], mode == "multi", alphas, rhos,
                                             inner_k, inner_seed, tol, max_iter, score_cols)
            xs = standardizer(X[tr], None, strict=False)
            ys = standardizer(Ytr, None, strict=False)
            W, _, _ = solve(xs.apply(X[tr]), ys.apply(Ytr), alpha, rho, tol, max_iter, group=mode == "multi")
            pred = (xs.apply(X[te]) @ W) * ys.scale + ys.mean
            for t in reported:
                out = report_tasks.index(tasks[t])
                c = cols.index(t)
                preds[te, out] = pred[:, c]
                fold_oof[:, out] = oof[:, c]
                results.append(_fold_result(f, tasks[t], pred[:, c], Yz[te, t], alpha, rho))
        train_oof[f] = (tr, fold_oof)
    report = CvReport(mode, report_tasks, results, fold_of, groups, preds, Yz[:, rep_idx], train_oof,
                      feature_set)
    report.check_disjoint()
    return report


def _fold_result(f, task, pred, truth, alpha, rho) -> FoldResult:
    mse = float(np.mean((pred - truth) ** 2))
    if np.ptp(truth) == 0:
        warnings.warn("fold %d: constant target for %s; fold skipped" % (f, task))
        return FoldResult(f, task, float("nan"), mse, truth.size, alpha, rho, True, "constant target")
    if np.ptp(pred) == 0:
        # intercept-only model: no linear association is expressed
        return FoldResult(f, task, 0.0, mse, truth.size, alpha, rho, False, "constant prediction")
    return FoldResult(f, task, pearson(pred, truth), mse, truth.size, alpha, rho)


def stack_reports(reports: Sequence[CvReport], meta_alpha=0.1, feature_set="combination") -> CvReport:
    """Combine per-feature-set CV runs with a second-level ridge fitted, fold
    by fold, on the inner out-of-fold predictions of the training users."""
    if not reports:
        raise ConfigError("nothing to stack")
    base = reports[0]
    for rep in reports[1:]:
        if not np.array_equal(rep.fold_of_row, base.fold_of_row) or rep.tasks != base.tasks:
            raise ConfigError("stacked reports must share folds and tasks")
    k = int(base.fold_of_row.max()) + 1
    preds = np.full_like(base.predictions, np.nan)
    results = []
    for f in range(k):
        tr = base.train_oof[f][0]
        te = np.flatnonzero(base.fold_of_row == f)
        for t, task in enumerate(base.tasks):
            Mtr = np.column_stack([rep.train_oof[f][1][:, t] for rep in reports])
            Mte = np.column_stack([rep.predictions[te, t] for rep in reports])
            ytr = base.targets[tr, t]
            xs = standardizer(Mtr, None, strict=False)
            mu = ytr.mean()
            W, _, _ = solve(xs.apply(Mtr), ytr - mu, meta_alpha, 0.0)
            pred = xs.apply(Mte) @ W[:, 0] + mu
            preds[te, t] = pred
            results.append(_fold_result(f, task, pred, base.targets[te, t], meta_alpha, 0.0))
    return CvReport(base.mode, list(base.tasks), results, base.fold_of_row, base.groups, preds,
                    base.targets, {}, feature_set)
