"""
Gaussian-process uncertainty quantification

A zero-mean Gaussian process with a squared-exponential kernel is fitted to a set of responses,
either exactly or with the fully independent conditional (FIC) sparse approximation built on an
active subset of the training states. The predictive standard deviations feed the uncertainty
metric U, the mean width of the (1 - alpha) confidence interval over a test set.
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.optimize import minimize
from scipy.stats import norm

from aero_fusion.kriging import CovarianceError, cholesky_with_jitter, FAILED_OBJECTIVE
from aero_fusion.labels import UNCERTAINTY_COLUMNS, UNCERTAINTY_SUMMARY_COLUMNS
from aero_fusion.dataset import FLOAT_FORMAT, as_matrix

logger = logging.getLogger(__name__)

EXACT = "exact"
FIC = "fic"
MODES = (EXACT, FIC)
LOG_2PI = np.log(2 * np.pi)


@dataclass
class GPRConfig:
    """
    Settings of the GP fit

    The bounds of the signal and noise variances are relative to the mean square of the targets,
    the lengthscale bounds relative to the extent of the training states per dimension. Giving
    all three of *signal_variance*, *lengthscale* and *noise_variance* skips the search.
    """
    mode: str = EXACT
    n_starts: int = 8
    max_iter: int = 200
    signal_bounds: tuple = (1e-3, 1e3)
    lengthscale_bounds: tuple = (1e-3, 1e2)
    noise_bounds: tuple = (1e-10, 1.0)
    active_size: int = 50
    candidate_cap: int = 2048
    seed: int = 42
    signal_variance: float = None
    lengthscale: list = None
    noise_variance: float = None
    jitter_start: float = 1e-10
    jitter_max: float = 1e-4
    jitter_factor: float = 10.0


def squared_exponential(first, second, signal_variance, lengthscale):
    difference = (first[:, None, :] - second[None, :, :]) / lengthscale
    return signal_variance * np.exp(-0.5 * np.sum(difference ** 2, axis=2))


class GPRModel:
    """
    Fitted Gaussian process

    Parameters
    ----------
    states: np.ndarray
        N x p training states
    targets: np.ndarray
        N targets
    signal_variance: float
        Kernel amplitude s^2, so that k(x, x) = s^2
    lengthscale: array_like
        Lengthscale per input dimension
    noise_variance: float
        Observation noise variance
    config: GPRConfig
        Jitter policy
    """

    def __init__(self, states, targets, signal_variance, lengthscale, noise_variance,
                 config=None):
        self.config = config or GPRConfig()
        self.states = as_matrix(states, "states")
        self.targets = np.asarray(targets, dtype=np.float64).reshape(-1)
        self.signal_variance = float(signal_variance)
        self.lengthscale = np.broadcast_to(np.asarray(lengthscale, dtype=np.float64),
                                           (self.states.shape[1],)).copy()
        self.noise_variance = float(noise_variance)
        self.mode = EXACT
        self.active = None

        covariance = self.kernel(self.states, self.states)
        covariance += self.noise_variance * np.eye(len(self.targets))
        self.factor, self.jitter = self._cholesky(covariance)
        self.alpha = scipy.linalg.cho_solve((self.factor, True), self.targets)

    def _cholesky(self, matrix):
        return cholesky_with_jitter(matrix, self.config.jitter_start, self.config.jitter_max,
                                    self.config.jitter_factor, error=CovarianceError)

    def __repr__(self):
        return (f"GPRModel(mode={self.mode}, N={len(self.targets)}, "
                f"signal_variance={self.signal_variance:.4g}, lengthscale={self.lengthscale}, "
                f"noise_variance={self.noise_variance:.4g})")

    def kernel(self, first, second):
        return squared_exponential(np.array(first, dtype=np.float64, ndmin=2),
                                   np.array(second, dtype=np.float64, ndmin=2),
                                   self.signal_variance, self.lengthscale)

    def log_marginal_likelihood(self):
        return (-0.5 * self.targets @ self.alpha - np.sum(np.log(np.diag(self.factor)))
                - 0.5 * len(self.targets) * LOG_2PI)

    def with_active_subset(self, active):
        """
        Return a copy of this model in FIC mode using the training rows *active*

        Raises
        ------
        CovarianceError:
            If K_MM stays indefinite after jitter escalation
        """
        active = np.asarray(sorted(int(index) for index in active), dtype=int)
        if len(active) == 0 or active[-1] >= len(self.targets) or active[0] < 0:
            raise ValueError(f"Active subset {active} does not index {len(self.targets)} rows")
        sparse = GPRModel.__new__(GPRModel)
        sparse.__dict__.update(self.__dict__)
        sparse.mode = FIC
        sparse.active = active
        terms = fic_terms(self, active)
        sparse.active_factor = terms["active_factor"]
        sparse.inner_factor = terms["inner_factor"]
        sparse.lambda_diagonal = terms["lambda_diagonal"]
        sparse.fic_weights = terms["weights"]
        return sparse

    def predict_mean(self, queries):
        queries = np.array(queries, dtype=np.float64, ndmin=2)
        if self.mode == FIC:
            projected = scipy.linalg.solve_triangular(
                self.active_factor, self.kernel(self.states[self.active], queries), lower=True)
            return projected.T @ self.fic_weights
        return self.kernel(queries, self.states) @ self.alpha

    def variance(self, queries):
        """Predictive variance using the exact or FIC formula, depending on the mode"""
        if self.mode == FIC:
            return variance_fic(self, queries)
        return variance_exact(self, queries)


def variance_exact(model, queries):
    """
    Exact predictive variance ``k(x, x) - k_N(x)^T (K_NN + s_n^2 I)^-1 k_N(x)``

    Returns
    -------
    np.ndarray:
        One variance per query row, clipped to [0, k(x, x)]
    """
    queries = np.array(queries, dtype=np.float64, ndmin=2)
    cross = model.kernel(model.states, queries)
    projected = scipy.linalg.solve_triangular(model.factor, cross, lower=True)
    variance = model.signal_variance - np.sum(projected ** 2, axis=0)
    return np.clip(variance, 0.0, model.signal_variance)


def fic_terms(model, active):
    """
    Factorizations shared by the FIC variance, mean and log-likelihood

    With L the Cholesky factor of K_MM and V = L^-1 K_MN the correction is
    ``Lambda = diag(K_NN - V^T V) + s_n^2 I`` and ``B = I + V Lambda^-1 V^T``
    """
    active_states = model.states[active]
    active_covariance = model.kernel(active_states, active_states)
    active_factor, _ = model._cholesky(active_covariance)
    projection = scipy.linalg.solve_triangular(
        active_factor, model.kernel(active_states, model.states), lower=True)
    residual = model.signal_variance - np.sum(projection ** 2, axis=0)
    lambda_diagonal = np.maximum(residual, 0.0) + model.noise_variance
    lambda_diagonal = np.maximum(lambda_diagonal, model.jitter)
    scaled = projection / lambda_diagonal
    inner = np.eye(len(active)) + scaled @ projection.T
    inner_factor, _ = model._cholesky(inner)
    rhs = scipy.linalg.solve_triangular(inner_factor, scaled @ model.targets, lower=True)
    weights = scipy.linalg.solve_triangular(inner_factor.T, rhs, lower=False)
    return dict(active_factor=active_factor, projection=projection,
                lambda_diagonal=lambda_diagonal, inner_factor=inner_factor, rhs=rhs,
                weights=weights)


def fic_log_marginal_likelihood(model, active):
    """Log-likelihood of the targets under the FIC prior ``Q_NN + Lambda``"""
    terms = fic_terms(model, np.asarray(active, dtype=int))
    lambda_diagonal = terms["lambda_diagonal"]
    quadratic = np.sum(model.targets ** 2 / lambda_diagonal) - terms["rhs"] @ terms["rhs"]
    log_determinant = (2 * np.sum(np.log(np.diag(terms["inner_factor"])))
                       + np.sum(np.log(lambda_diagonal)))
    return -0.5 * quadratic - 0.5 * log_determinant - 0.5 * len(model.targets) * LOG_2PI


def variance_fic(model, queries):
    """
    FIC predictive variance

    ``k(x, x) - k_M^T [K_MM^-1 - (K_MM + K_MN Lambda^-1 K_NM)^-1] k_M``, evaluated through the
    Cholesky factors of K_MM and B
    """
    if model.mode != FIC:
        raise ValueError("The model has no active subset; call with_active_subset first")
    queries = np.array(queries, dtype=np.float64, ndmin=2)
    cross = model.kernel(model.states[model.active], queries)
    projected = scipy.linalg.solve_triangular(model.active_factor, cross, lower=True)
    inner = scipy.linalg.solve_triangular(model.inner_factor, projected, lower=True)
    variance = (model.signal_variance - np.sum(projected ** 2, axis=0)
                + np.sum(inner ** 2, axis=0))
    return np.clip(variance, 0.0, None)


def select_active_subset(model, size):
    """
    Greedy forward selection of the FIC active subset

    Starting from the empty set, the candidate that maximizes the FIC log marginal likelihood is
    added until *size* rows are selected. Ties go to the lowest row index. When the training set
    is larger than ``config.candidate_cap`` the candidates are a seeded uniform sample.

    Returns
    -------
    np.ndarray:
        The selected row indices in ascending order
    """
    n_rows = len(model.targets)
    if not 1 <= size <= n_rows:
        raise ValueError(f"Active subset size must lie in [1, {n_rows}], got {size}")
    if size == n_rows:
        return np.arange(n_rows)

    config = model.config
    if n_rows > config.candidate_cap:
        rng = np.random.default_rng(config.seed)
        candidates = np.sort(rng.choice(n_rows, size=config.candidate_cap, replace=False))
    else:
        candidates = np.arange(n_rows)

    selected = list()
    remaining = list(candidates)
    while len(selected) < size and remaining:
        best_index, best_value = None, -np.inf
        for index in remaining:
            try:
                value = fic_log_marginal_likelihood(model, selected + [index])
            except CovarianceError:
                continue
            if best_index is None or value > best_value:
                best_index, best_value = index, value
        if best_index is None:
            logger.warning(f"No admissible candidate left after {len(selected)} selections")
            break
        selected.append(best_index)
        remaining.remove(best_index)
        logger.debug(f"Active subset {len(selected)}/{size}: row {best_index}, "
                     f"log-likelihood {best_value:.6g}")
    return np.asarray(sorted(selected), dtype=int)


def _reference_scales(states, targets):
    mean_square = float(np.mean(targets ** 2))
    if not mean_square > 0:
        mean_square = 1.0
    extent = states.max(axis=0) - states.min(axis=0)
    extent = np.where(extent > 0, extent, 1.0)
    return mean_square, extent


def fit_gpr(states, targets, config=None):
    """
    Fit a Gaussian process to *targets*

    The signal variance, lengthscales and noise variance maximize the log marginal likelihood
    over a bounded L-BFGS-B search from ``config.n_starts`` seeded starting points. The search
    runs on a canonically sorted copy of the data, so the row order does not matter. In FIC mode
    the hyperparameters are searched on at most ``config.candidate_cap`` rows and an active
    subset of ``config.active_size`` rows is selected afterwards.

    Returns
    -------
    GPRModel:
        The fitted model, in the mode requested by *config*
    """
    config = config or GPRConfig()
    if config.mode not in MODES:
        raise ValueError(f"Unknown GPR mode '{config.mode}'. Please pick one of: {MODES}")
    states = as_matrix(states, "states")
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if len(targets) < 2 or len(states) != len(targets):
        raise ValueError(f"Need at least 2 matching states and targets, got {len(states)} "
                         f"states and {len(targets)} targets")
    if not (np.all(np.isfinite(states)) and np.all(np.isfinite(targets))):
        raise ValueError("GPR training data must be finite")

    fixed = (config.signal_variance, config.lengthscale, config.noise_variance)
    if all(value is not None for value in fixed):
        model = GPRModel(states, targets, *fixed, config=config)
    else:
        model = GPRModel(states, targets, *_search_hyperparameters(states, targets, config),
                         config=config)
    logger.info(f"Fitted {model}")

    if config.mode == FIC:
        size = min(config.active_size, len(targets))
        model = model.with_active_subset(select_active_subset(model, size))
    return model


def _search_hyperparameters(states, targets, config):
    order = np.lexsort(np.column_stack([states, targets]).T[::-1])
    states, targets = states[order], targets[order]
    if len(targets) > config.candidate_cap:
        rng = np.random.default_rng(config.seed)
        keep = np.sort(rng.choice(len(targets), size=config.candidate_cap, replace=False))
        states, targets = states[keep], targets[keep]

    mean_square, extent = _reference_scales(states, targets)
    n_dims = states.shape[1]
    bounds = ([tuple(np.log(config.signal_bounds))]
              + [tuple(np.log(config.lengthscale_bounds))] * n_dims
              + [tuple(np.log(config.noise_bounds))])

    def unpack(point):
        return (mean_square * np.exp(point[0]), extent * np.exp(point[1:1 + n_dims]),
                mean_square * np.exp(point[-1]))

    def objective(point):
        try:
            model = GPRModel(states, targets, *unpack(point), config=config)
        except CovarianceError:
            return FAILED_OBJECTIVE
        return -model.log_marginal_likelihood()

    rng = np.random.default_rng(config.seed)
    lows = np.array([bound[0] for bound in bounds])
    highs = np.array([bound[1] for bound in bounds])
    # first start: unit signal, a fifth of the extent, small noise; the others are seeded draws
    starts = [np.concatenate([[0.0], np.full(n_dims, np.log(0.2)), [np.log(1e-2)]])]
    starts += [rng.uniform(lows, highs) for _ in range(config.n_starts - 1)]

    best_value, best_point = np.inf, None
    for start in starts:
        result = minimize(objective, np.clip(start, lows, highs), method="L-BFGS-B",
                          bounds=bounds, options={"maxiter": config.max_iter})
        if result.fun < best_value:
            best_value, best_point = result.fun, result.x
    if best_point is None or best_value >= FAILED_OBJECTIVE:
        raise CovarianceError("No hyperparameters gave a positive definite covariance")
    return unpack(best_point)


def z_quantile(alpha):
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return float(norm.ppf(1 - alpha / 2))


def uncertainty_metric(sigmas, alpha=0.05):
    """
    Mean width of the (1 - alpha) confidence interval, ``2 z_{1-alpha/2} mean(sigma)``
    """
    sigmas = np.asarray(sigmas, dtype=np.float64).reshape(-1)
    if len(sigmas) == 0:
        raise ValueError("Need at least one standard deviation")
    if np.any(sigmas < 0):
        raise ValueError(f"Standard deviations must be >= 0, got minimum {sigmas.min()}")
    return 2 * z_quantile(alpha) * float(np.mean(sigmas))


@dataclass
class UncertaintyReport:
    """Per-point standard deviations and interval bounds with the aggregate metric U"""
    sigma: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    uncertainty: float
    alpha: float

    @property
    def n_test(self):
        return len(self.sigma)

    def to_csv(self, path):
        frame = pd.DataFrame({UNCERTAINTY_COLUMNS[0]: np.arange(self.n_test),
                              UNCERTAINTY_COLUMNS[1]: self.sigma,
                              UNCERTAINTY_COLUMNS[2]: self.lower,
                              UNCERTAINTY_COLUMNS[3]: self.upper})
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")

    def summary(self):
        return dict(zip(UNCERTAINTY_SUMMARY_COLUMNS, (self.uncertainty, self.alpha, self.n_test)))

    def summary_to_csv(self, path):
        pd.DataFrame([self.summary()]).to_csv(path, index=False, float_format=FLOAT_FORMAT,
                                              lineterminator="\n")


def report_uncertainty(model, queries, alpha=0.05):
    """Evaluate the model at *queries* and build the uncertainty report"""
    sigma = np.sqrt(model.variance(queries))
    mean = model.predict_mean(queries)
    half_width = z_quantile(alpha) * sigma
    return UncertaintyReport(sigma=sigma, lower=mean - half_width, upper=mean + half_width,
                             uncertainty=uncertainty_metric(sigma, alpha), alpha=alpha)


def predict_grid(model, state_names, axes=(0, 1), n_points=50, fixed=None):
    """
    Predictive mean and standard deviation on a uniform grid over two state columns

    The other state columns are held at *fixed* (defaults to the median of the training states).
    For one-dimensional states a line grid is returned.

    Returns
    -------
    pd.DataFrame:
        One row per grid point with the state columns, 'mean' and 'sigma'
    """
    states = model.states
    n_dims = states.shape[1]
    anchor = np.median(states, axis=0) if fixed is None else np.asarray(fixed, dtype=np.float64)
    axes = [axis for axis in axes if axis < n_dims][:2]
    lines = [np.linspace(states[:, axis].min(), states[:, axis].max(), n_points)
             for axis in axes]
    mesh = np.meshgrid(*lines, indexing="ij")
    grid = np.tile(anchor, (mesh[0].size, 1))
    for axis, values in zip(axes, mesh):
        grid[:, axis] = values.reshape(-1)
    frame = pd.DataFrame(grid, columns=list(state_names))
    frame["mean"] = model.predict_mean(grid)
    frame["sigma"] = np.sqrt(model.variance(grid))
    return frame
