"""Least-squares SVM forecaster over delay embeddings.

The regression problem per output coordinate is

    minimise  lam * ||f||_H^2 + (1/n) * sum_i (y_i - f(x_i))^2

over the RKHS of the Gaussian RBF kernel ``k(u, v) = exp(-sigma^2 ||u - v||^2)``.
Its minimiser is ``f = sum_i alpha_i k(x_i, .)`` with ``(K + n lam I) alpha = y``.

Hyperparameters follow a fixed protocol: scale inputs to [-1, 1], 4-fold
contiguous cross-validation over a 10x10 geometric (lam, sigma) grid, a
greedy search over embedding length M with a 1.02 early-stop rule, and a
final retrain on all data at (4/3 lam*, sigma*).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from os import PathLike
from typing import Callable

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .dynamics import ObservationSeries

N_FOLDS = 4
GRID_POINTS = 10
STOP_RATIO = 1.02
STOP_AFTER_M = 5
RETRAIN_FACTOR = 4.0 / 3.0
MODEL_FORMAT = "chaoscast.lssvm/1"
MAX_EMBEDDING = 20


@dataclass(frozen=True)
class SvmConfig:
    """Tunables of the hyperparameter protocol."""

    max_embedding: int = MAX_EMBEDDING
    n_folds: int = N_FOLDS
    grid_points: int = GRID_POINTS
    stop_ratio: float = STOP_RATIO
    stop_after: int = STOP_AFTER_M
    retrain_factor: float = RETRAIN_FACTOR

    def __post_init__(self):
        if self.max_embedding < 1 or self.n_folds < 2 or self.grid_points < 1:
            raise ValueError("max_embedding >= 1, n_folds >= 2 and grid_points >= 1 required")
        if self.stop_ratio <= 0 or self.retrain_factor <= 0:
            raise ValueError("stop_ratio and retrain_factor must be positive")


# -- kernel ------------------------------------------------------------------


def rbf_kernel(u, v, sigma: float) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    d = u - v
    return float(np.exp(-(sigma**2) * np.dot(d.ravel(), d.ravel())))


def kernel_matrix(X, sigma: float, Y=None) -> np.ndarray:
    """Gram matrix ``exp(-sigma^2 ||x_i - y_j||^2)``; ``Y`` defaults to ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("empty input set")
    if Y is None:
        d2 = cdist(X, X, "sqeuclidean")
        np.fill_diagonal(d2, 0.0)
        K = np.exp(-(sigma**2) * d2)
        return 0.5 * (K + K.T)
    return np.exp(-(sigma**2) * cdist(X, np.atleast_2d(np.asarray(Y, dtype=float)), "sqeuclidean"))


# -- data --------------------------------------------------------------------


@dataclass(frozen=True)
class EmbeddedDataset:
    """Delay-embedded regression pairs.

    ``inputs[i]`` concatenates observations ``t-M+1 .. t`` (oldest first) for
    ``t = anchors[i]``; ``targets[i]`` is the observation at ``t + T_f``.
    """

    inputs: np.ndarray = field(repr=False)
    targets: np.ndarray = field(repr=False)
    M: int
    T_f: int
    anchors: np.ndarray = field(repr=False)

    def __len__(self):
        return self.inputs.shape[0]


def _obs_array(obs) -> np.ndarray:
    if isinstance(obs, ObservationSeries):
        return obs.observations
    a = np.asarray(obs, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected an (n, d) observation array, got shape {a.shape}")
    return a


def embed_windows(obs, ends, M: int) -> np.ndarray:
    """Rows ``concat(obs[e-M+1], ..., obs[e])`` for each index ``e`` in ``ends``."""
    a = _obs_array(obs)
    ends = np.asarray(ends, dtype=np.int64)
    if np.any(ends < M - 1) or np.any(ends >= a.shape[0]):
        raise ValueError("window extends outside the series")
    offs = np.arange(-M + 1, 1)
    return a[ends[:, None] + offs[None, :]].reshape(len(ends), M * a.shape[1])


def delay_embed(obs, M: int, T_f: int) -> EmbeddedDataset:
    a = _obs_array(obs)
    if M < 1 or T_f < 0:
        raise ValueError(f"need M >= 1 and T_f >= 0, got M={M}, T_f={T_f}")
    n = a.shape[0]
    if n < M + T_f:
        raise ValueError(f"series of length {n} too short for M={M}, T_f={T_f}")
    anchors = np.arange(M - 1, n - T_f)
    return EmbeddedDataset(embed_windows(a, anchors, M), a[anchors + T_f].copy(), M, T_f, anchors)


@dataclass(frozen=True)
class ScalingTransform:
    """Per-dimension affine map sending ``[low, low + span]`` onto ``[-1, 1]``.

    Zero-span dimensions map to 0.
    """

    low: np.ndarray
    span: np.ndarray

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        ok = self.span > 0
        safe = np.where(ok, self.span, 1.0)
        return np.where(ok, 2.0 * (X - self.low) / safe - 1.0, 0.0)

    def inverse(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        return np.where(self.span > 0, self.low + (Z + 1.0) * self.span / 2.0, self.low)


def fit_scaling(data) -> ScalingTransform:
    X = data.inputs if isinstance(data, EmbeddedDataset) else np.asarray(data, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a non-empty 2-d input array")
    lo = X.min(axis=0)
    return ScalingTransform(lo, X.max(axis=0) - lo)


# -- solver ------------------------------------------------------------------


def solve_ls_svm(K, y, lam: float) -> np.ndarray:
    """Coefficients of the regularised least-squares minimiser: ``(K + n lam I) alpha = y``.

    ``y`` may hold several right-hand sides as columns.
    """
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    if not lam > 0:
        raise ValueError("lam must be positive")
    A = K + (n * lam) * np.eye(n)
    try:
        factor = linalg.cho_factor(A, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:  # pragma: no cover - K PSD and lam > 0 make A PD
        raise AssertionError("K + n*lam*I not positive definite") from exc
    return linalg.cho_solve(factor, np.asarray(y, dtype=float), check_finite=False)


def ls_svm_objective(alpha, K, y, lam: float) -> float:
    """``lam * a'Ka + (1/n) ||Ka - y||^2``, summed over output columns."""
    alpha = np.asarray(alpha, dtype=float)
    Ka = K @ alpha
    n = K.shape[0]
    return float(lam * np.sum(alpha * Ka) + np.sum((Ka - y) ** 2) / n)


@dataclass(frozen=True)
class Hyperparams:
    lam: float
    sigma: float
    M: int

    def __post_init__(self):
        if not (self.lam > 0 and self.sigma > 0 and self.M >= 1):
            raise ValueError(f"hyperparameters must be positive: {self}")


@dataclass(frozen=True)
class TrainedLsSvm:
    """Kernel expansion per output coordinate over shared stored inputs."""

    inputs: np.ndarray = field(repr=False)  # scaled
    alpha: np.ndarray = field(repr=False)  # (n, n_outputs)
    scaling: ScalingTransform = field(repr=False)
    hyperparams: Hyperparams
    horizon: int

    def __post_init__(self):
        if self.alpha.shape[0] != self.inputs.shape[0]:
            raise ValueError("alpha length must equal the number of stored inputs")

    def predict_embedded(self, X) -> np.ndarray:
        Z = self.scaling.transform(np.atleast_2d(X))
        return kernel_matrix(Z, self.hyperparams.sigma, self.inputs) @ self.alpha


def predict(model: TrainedLsSvm, recent) -> np.ndarray:
    """Forecast ``horizon`` steps past the last row of ``recent`` (needs >= M rows)."""
    recent = np.asarray(recent, dtype=float)
    M = model.hyperparams.M
    if recent.ndim != 2 or recent.shape[0] < M:
        raise ValueError(f"need at least M={M} observations, got {recent.shape[0] if recent.ndim == 2 else 0}")
    x = recent[-M:].reshape(1, -1)
    return model.predict_embedded(x)[0]


def predict_at(model: TrainedLsSvm, obs, ends) -> np.ndarray:
    """Forecasts for windows of ``obs`` ending at each index in ``ends``."""
    return model.predict_embedded(embed_windows(obs, ends, model.hyperparams.M))


# -- hyperparameter protocol -------------------------------------------------


@dataclass(frozen=True)
class CvGrid:
    lambda_grid: np.ndarray
    sigma_grid: np.ndarray


def cv_grid(n_train: int, M: int, points: int = GRID_POINTS) -> CvGrid:
    """Geometric grids with lam in [10 (3n/4)^-2, 1] and sigma in [0.1, 2 (3n/4)^(1/(3M))]."""
    if n_train < 2 or M < 1:
        raise ValueError(f"need n_train >= 2 and M >= 1, got {n_train}, {M}")
    m = 0.75 * n_train
    lam_min = 10.0 * m**-2
    sig_max = 2.0 * m ** (1.0 / (3 * M))
    return CvGrid(np.geomspace(lam_min, 1.0, points), np.geomspace(0.1, sig_max, points))


def fold_slices(n: int, k: int = N_FOLDS) -> list[np.ndarray]:
    """Contiguous, near-equal index blocks in temporal order."""
    return np.array_split(np.arange(n), k)


@dataclass(frozen=True)
class CvResult:
    lam: float
    sigma: float
    error: float
    errors: np.ndarray = field(repr=False)  # (len(lambda_grid), len(sigma_grid))
    grid: CvGrid = field(repr=False)


def _argmin_tiebreak(errors: np.ndarray, lams: np.ndarray, sigmas: np.ndarray) -> tuple[int, int]:
    L, S = np.meshgrid(lams, sigmas, indexing="ij")
    order = np.lexsort((S.ravel(), L.ravel(), errors.ravel()))
    return np.unravel_index(order[0], errors.shape)


def cross_validate(
    dataset: EmbeddedDataset, grid: CvGrid | None = None, n_folds: int = N_FOLDS, grid_points: int = GRID_POINTS
) -> CvResult:
    """Grid search by k-fold CV; error is the fold-averaged mean summed squared error.

    Inputs are scaled to [-1, 1] on the whole dataset before splitting. Ties go
    to the smaller lam, then the smaller sigma.
    """
    n = len(dataset)
    if n < 2 * n_folds:
        raise ValueError(f"need at least {2 * n_folds} samples for {n_folds}-fold CV, got {n}")
    if grid is None:
        grid = cv_grid(n, dataset.M, grid_points)
    X = fit_scaling(dataset).transform(dataset.inputs)
    Y = dataset.targets
    d2 = cdist(X, X, "sqeuclidean")
    folds = fold_slices(n, n_folds)
    errors = np.zeros((len(grid.lambda_grid), len(grid.sigma_grid)))
    for j, sigma in enumerate(grid.sigma_grid):
        K = np.exp(-(sigma**2) * d2)
        for val in folds:
            train = np.setdiff1d(np.arange(n), val, assume_unique=True)
            K_tt = K[np.ix_(train, train)]
            K_vt = K[np.ix_(val, train)]
            for i, lam in enumerate(grid.lambda_grid):
                alpha = solve_ls_svm(K_tt, Y[train], lam)
                resid = K_vt @ alpha - Y[val]
                errors[i, j] += np.mean(np.sum(resid**2, axis=1))
    errors /= n_folds
    i, j = _argmin_tiebreak(errors, grid.lambda_grid, grid.sigma_grid)
    return CvResult(float(grid.lambda_grid[i]), float(grid.sigma_grid[j]), float(errors[i, j]), errors, grid)


@dataclass
class EmbeddingSelection:
    """Outcome of the embedding-length search.

    ``trace[m-1]`` is the CV result for embedding length ``m``; the trace stops
    where the early-stop rule fired.
    """

    M: int
    hyperparams: Hyperparams
    cv_error: float
    trace: list = field(repr=False, default_factory=list)

    def best_up_to(self, cap: int) -> "EmbeddingSelection":
        """Selection restricted to M <= cap.

        The stop rule only looks backwards, so the search with a smaller cap
        evaluates exactly a prefix of this trace.
        """
        sub = self.trace[: max(1, min(cap, len(self.trace)))]
        return _pick(sub)

    def __iter__(self):
        yield self.M
        yield self.hyperparams


def _pick(trace) -> EmbeddingSelection:
    errs = [r.error for r in trace]
    m = int(np.argmin(errs)) + 1  # first minimum -> smallest M on ties
    r = trace[m - 1]
    return EmbeddingSelection(m, Hyperparams(r.lam, r.sigma, m), r.error, list(trace))


def search_embedding(
    evaluate: Callable[[int], CvResult], max_M: int, stop_ratio: float = STOP_RATIO, stop_after: int = STOP_AFTER_M
) -> EmbeddingSelection:
    """Greedy M = 1, 2, ... search; for M > 5 stop once error > 1.02 x best so far."""
    if max_M < 1:
        raise ValueError("max_M must be >= 1")
    trace = []
    best = np.inf
    for M in range(1, max_M + 1):
        res = evaluate(M)
        trace.append(res)
        if M > stop_after and res.error > stop_ratio * best:
            break
        best = min(best, res.error)
    return _pick(trace)


def select_embedding(obs, T_f: int, max_M: int | None = None, cfg: SvmConfig = SvmConfig()) -> EmbeddingSelection:
    """Run the embedding search on a historical series (``max_M`` defaults to ``cfg.max_embedding``)."""
    a = _obs_array(obs)
    cap = cfg.max_embedding if max_M is None else max_M
    usable = min(cap, a.shape[0] - T_f - 2 * cfg.n_folds + 1)
    if usable < 1:
        raise ValueError("observation series too short for cross-validation")

    def evaluate(M):
        return cross_validate(delay_embed(a, M, T_f), n_folds=cfg.n_folds, grid_points=cfg.grid_points)

    return search_embedding(evaluate, usable, cfg.stop_ratio, cfg.stop_after)


def train_final(obs, M: int, lam: float, sigma: float, T_f: int, retrain_factor: float = RETRAIN_FACTOR) -> TrainedLsSvm:
    """Retrain on the whole historical set at ``(4/3 lam, sigma)``."""
    data = delay_embed(obs, M, T_f)
    scaling = fit_scaling(data)
    X = scaling.transform(data.inputs)
    lam_eff = retrain_factor * lam
    alpha = solve_ls_svm(kernel_matrix(X, sigma), data.targets, lam_eff)
    return TrainedLsSvm(X, alpha, scaling, Hyperparams(lam_eff, sigma, M), T_f)


def fit_forecaster(obs, T_f: int, max_M: int | None = None, cfg: SvmConfig = SvmConfig()) -> tuple[TrainedLsSvm, EmbeddingSelection]:
    """Full protocol: embedding search, CV, retrain."""
    sel = select_embedding(obs, T_f, max_M, cfg)
    hp = sel.hyperparams
    return train_final(obs, hp.M, hp.lam, hp.sigma, T_f, cfg.retrain_factor), sel


# -- persistence -------------------------------------------------------------


def save_model(path: str | PathLike, model: TrainedLsSvm) -> None:
    """Write a model as JSON; floats use ``repr`` so values round-trip exactly."""
    hp = model.hyperparams
    doc = {
        "format": MODEL_FORMAT,
        "M": hp.M,
        "lambda": hp.lam,
        "sigma": hp.sigma,
        "T_f": model.horizon,
        "scaling": {"low": model.scaling.low.tolist(), "span": model.scaling.span.tolist()},
        "inputs": model.inputs.tolist(),
        "alpha": model.alpha.T.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path: str | PathLike) -> TrainedLsSvm:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a {MODEL_FORMAT} file")
    scaling = ScalingTransform(np.array(doc["scaling"]["low"]), np.array(doc["scaling"]["span"]))
    inputs = np.array(doc["inputs"], dtype=float)
    alpha = np.array(doc["alpha"], dtype=float).T
    return TrainedLsSvm(inputs, alpha, scaling, Hyperparams(doc["lambda"], doc["sigma"], doc["M"]), doc["T_f"])
