"""
Ordinary Kriging and cross-source data alignment

Both fidelities are fitted with an ordinary Kriging interpolator using an anisotropic Gaussian
correlation. The alignment puts both sources on one state grid: the union of their sample
sites restricted to the intersection of their bounding boxes. Observed values are copied, the
missing fidelity at a site is filled in by that fidelity's own Kriging model.
"""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from aero_fusion.dataset import AlignedPair, SchemaError, as_matrix

logger = logging.getLogger(__name__)

FAILED_OBJECTIVE = 1e20


class CovarianceError(ValueError):
    """Raised when a covariance matrix stays indefinite after jitter escalation"""


class KrigingError(CovarianceError):
    """Raised when a Kriging correlation matrix cannot be factorized"""


@dataclass
class KrigingConfig:
    """
    Settings of the Kriging fit

    Lengthscales are expressed in coordinates where the training box is the unit cube
    """
    n_starts: int = 16
    lengthscale_bounds: tuple = (1e-3, 3.0)
    max_iter: int = 100
    jitter_start: float = 1e-10
    jitter_max: float = 1e-4
    jitter_factor: float = 10.0
    lengthscale: list = None


def cholesky_with_jitter(matrix, jitter_start=1e-10, jitter_max=1e-4, jitter_factor=10.0,
                         error=CovarianceError):
    """
    Lower Cholesky factor of *matrix* plus a diagonal jitter

    The jitter starts at ``jitter_start * trace / N`` and grows by *jitter_factor* until the
    factorization succeeds or the jitter exceeds ``jitter_max * trace / N``.

    Returns
    -------
    tuple:
        (lower factor, jitter added to the diagonal)
    """
    size = matrix.shape[0]
    scale = np.trace(matrix) / size
    if not scale > 0:
        scale = 1.0
    jitter = jitter_start * scale
    limit = jitter_max * scale * (1 + 1e-9)
    while jitter <= limit:
        try:
            factor = scipy.linalg.cholesky(matrix + jitter * np.eye(size), lower=True)
        except np.linalg.LinAlgError:
            jitter *= jitter_factor
        else:
            if jitter > jitter_start * scale:
                logger.debug(f"Cholesky needed jitter {jitter:.3g}")
            return factor, jitter
    condition = np.linalg.cond(matrix)
    raise error(f"Matrix of size {size} is not positive definite after jitter escalation to "
                f"{jitter_max:g} (condition number {condition:.3g})")


def average_duplicates(states, values):
    """
    Merge rows with identical states by averaging their values

    The unique states are returned in lexicographic order, which also makes every fit
    independent of the row order of the input
    """
    states = as_matrix(states, "states")
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    unique, inverse = np.unique(states, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    if len(unique) < len(states):
        logger.info(f"Averaging {len(states) - len(unique)} duplicate state(s)")
    totals = np.zeros(len(unique))
    np.add.at(totals, inverse, values)
    counts = np.bincount(inverse, minlength=len(unique))
    return unique, totals / counts


def gaussian_correlation(first, second, lengthscale):
    difference = (first[:, None, :] - second[None, :, :]) / lengthscale
    return np.exp(-0.5 * np.sum(difference ** 2, axis=2))


class KrigingModel:
    """
    Fitted ordinary Kriging interpolator

    Parameters
    ----------
    states: np.ndarray
        N x p distinct training sites
    values: np.ndarray
        N training values
    lengthscale: np.ndarray
        Correlation lengthscale per input dimension, in unit-box coordinates
    config: KrigingConfig
        Jitter policy
    """

    def __init__(self, states, values, lengthscale, config=None):
        config = config or KrigingConfig()
        self.states = as_matrix(states, "states")
        self.values = np.asarray(values, dtype=np.float64).reshape(-1)
        self.lower = self.states.min(axis=0)
        self.upper = self.states.max(axis=0)
        span = self.upper - self.lower
        self.span = np.where(span > 0, span, 1.0)
        self.lengthscale = np.broadcast_to(np.asarray(lengthscale, dtype=np.float64),
                                           (self.states.shape[1],)).copy()

        unit = self.to_unit(self.states)
        correlation = gaussian_correlation(unit, unit, self.lengthscale)
        self.factor, self.nugget = cholesky_with_jitter(
            correlation, config.jitter_start, config.jitter_max, config.jitter_factor,
            error=KrigingError)
        n_sites = len(self.values)
        ones = np.ones(n_sites)
        solve_ones = scipy.linalg.cho_solve((self.factor, True), ones)
        solve_values = scipy.linalg.cho_solve((self.factor, True), self.values)
        self.mean = float(ones @ solve_values / (ones @ solve_ones))
        residual = self.values - self.mean
        self.weights = scipy.linalg.cho_solve((self.factor, True), residual)
        self.process_variance = max(float(residual @ self.weights) / n_sites, 0.0)

    def to_unit(self, states):
        return (np.array(states, dtype=np.float64, ndmin=2) - self.lower) / self.span

    def correlation(self, first, second):
        """Correlation between two sets of states given in original coordinates"""
        return gaussian_correlation(self.to_unit(first), self.to_unit(second), self.lengthscale)

    def contains(self, states, tolerance=1e-12):
        unit = self.to_unit(states)
        return np.all((unit >= -tolerance) & (unit <= 1 + tolerance), axis=1)

    def predict(self, queries):
        """
        Predict at every row of *queries*, all of which must lie in the training box

        A query that coincides with a training site returns the training value itself, so the
        diagonal jitter never shows up at the sites
        """
        queries = np.array(queries, dtype=np.float64, ndmin=2)
        inside = self.contains(queries)
        if not np.all(inside):
            outside = queries[~inside][0]
            raise ValueError(f"Query {outside} lies outside the training box "
                             f"[{self.lower}, {self.upper}]; clip the query first")
        prediction = self.mean + self.correlation(queries, self.states) @ self.weights
        coincident = np.all(queries[:, None, :] == self.states[None, :, :], axis=2)
        i_query, i_site = np.nonzero(coincident)
        prediction[i_query] = self.values[i_site]
        return prediction

    def __repr__(self):
        return (f"KrigingModel(N={len(self.values)}, lengthscale={self.lengthscale}, "
                f"nugget={self.nugget:.3g})")


def concentrated_log_likelihood(unit_states, values, lengthscale, config):
    """
    Concentrated log-likelihood of ordinary Kriging

    The constant mean and process variance are replaced by their closed-form estimates
    """
    correlation = gaussian_correlation(unit_states, unit_states, lengthscale)
    factor, _ = cholesky_with_jitter(correlation, config.jitter_start, config.jitter_max,
                                     config.jitter_factor, error=KrigingError)
    n_sites = len(values)
    ones = np.ones(n_sites)
    solve_ones = scipy.linalg.cho_solve((factor, True), ones)
    mean = ones @ scipy.linalg.cho_solve((factor, True), values) / (ones @ solve_ones)
    residual = values - mean
    variance = residual @ scipy.linalg.cho_solve((factor, True), residual) / n_sites
    variance = max(variance, 1e-300)
    return -0.5 * n_sites * np.log(variance) - np.sum(np.log(np.diag(factor)))


def fit_kriging(states, values, config=None):
    """
    Fit an ordinary Kriging model

    Duplicate states are averaged first. Unless *config* fixes the lengthscale, the
    log-lengthscales maximizing the concentrated log-likelihood are searched with a bounded
    L-BFGS-B run from each of ``config.n_starts`` log-spaced starting points.

    Returns
    -------
    KrigingModel:
        The fitted model
    """
    config = config or KrigingConfig()
    unique, averaged = average_duplicates(states, values)
    if len(unique) < 2:
        raise ValueError(f"Kriging needs at least 2 distinct states, got {len(unique)}")
    if not (np.all(np.isfinite(unique)) and np.all(np.isfinite(averaged))):
        raise ValueError("Kriging training data must be finite")

    n_dims = unique.shape[1]
    if config.lengthscale is not None:
        return KrigingModel(unique, averaged, config.lengthscale, config)

    lower = unique.min(axis=0)
    span = unique.max(axis=0) - lower
    unit = (unique - lower) / np.where(span > 0, span, 1.0)
    log_bounds = np.log(np.asarray(config.lengthscale_bounds, dtype=np.float64))

    def objective(log_lengthscale):
        try:
            return -concentrated_log_likelihood(unit, averaged, np.exp(log_lengthscale), config)
        except KrigingError:
            return FAILED_OBJECTIVE

    best_value, best_point = np.inf, None
    for start in np.linspace(log_bounds[0], log_bounds[1], config.n_starts):
        initial = np.full(n_dims, start)
        result = minimize(objective, initial, method="L-BFGS-B",
                          bounds=[tuple(log_bounds)] * n_dims,
                          options={"maxiter": config.max_iter})
        if result.fun < best_value:
            best_value, best_point = result.fun, result.x
    if best_point is None or best_value >= FAILED_OBJECTIVE:
        raise KrigingError("No lengthscale gave a factorizable correlation matrix")

    lengthscale = np.exp(best_point)
    logger.debug(f"Kriging fit on {len(unique)} sites: lengthscale {lengthscale}, "
                 f"log-likelihood {-best_value:.6g}")
    return KrigingModel(unique, averaged, lengthscale, config)


def predict_kriging(model, query):
    """Predict a single state vector"""
    return float(model.predict(np.asarray(query, dtype=np.float64).reshape(1, -1))[0])


@dataclass
class AlignConfig:
    kriging: KrigingConfig = None
    keep_order: bool = False


def _site_lookup(states, values):
    return {tuple(state): value for state, value in zip(states, values)}


def align_datasets(low, high, config=None):
    """
    Put a low and a high fidelity data set on one shared state grid

    Parameters
    ----------
    low: DataSet
        Low fidelity data
    high: DataSet
        High fidelity data with the same state and response columns
    config: AlignConfig or None
        Kriging settings and the ordering of the grid. By default the grid is sorted
        lexicographically; with ``keep_order`` the low fidelity sites keep their recorded order
        followed by the sites only the high fidelity source has

    Returns
    -------
    AlignedPair:
        The aligned responses and the ground-truth fidelity gap
    """
    config = config or AlignConfig()
    kriging_config = config.kriging or KrigingConfig()
    if len(low) == 0 or len(high) == 0:
        raise ValueError("Both data sets must hold at least one row")
    if low.state_names != high.state_names or low.response_names != high.response_names:
        raise SchemaError(f"State/response schemas differ: {low.state_names}/"
                          f"{low.response_names} vs {high.state_names}/{high.response_names}")

    box_lower = np.maximum(low.states.min(axis=0), high.states.min(axis=0))
    box_upper = np.minimum(low.states.max(axis=0), high.states.max(axis=0))
    if np.any(box_lower > box_upper):
        raise ValueError(f"The state ranges do not intersect: [{box_lower}, {box_upper}]")

    def inside(states):
        return np.all((states >= box_lower) & (states <= box_upper), axis=1)

    sources = dict()
    for label, dataset in (("low", low), ("high", high)):
        merged = [average_duplicates(dataset.states, dataset.responses[:, i_resp])
                  for i_resp in range(len(dataset.response_names))]
        sources[label] = dict(states=merged[0][0],
                              lookups=[_site_lookup(sites, vals) for sites, vals in merged])

    if config.keep_order:
        candidates = np.concatenate([low.states, high.states])
        first_seen = dict()
        for state in candidates[inside(candidates)]:
            first_seen.setdefault(tuple(state), state)
        grid = np.array(list(first_seen.values()), dtype=np.float64)
        grid = grid.reshape(-1, low.states.shape[1])
    else:
        candidates = np.concatenate([sources["low"]["states"], sources["high"]["states"]])
        grid = np.unique(candidates[inside(candidates)], axis=0)

    keys = [tuple(state) for state in grid]
    responses = dict()
    observed = dict()
    for label, dataset in (("low", low), ("high", high)):
        lookups = sources[label]["lookups"]
        is_observed = np.array([key in lookups[0] for key in keys], dtype=bool)
        columns = list()
        for i_resp, lookup in enumerate(lookups):
            column = np.empty(len(grid))
            column[is_observed] = [lookup[key] for key, hit in zip(keys, is_observed) if hit]
            if not np.all(is_observed):
                logger.info(f"Interpolating {np.sum(~is_observed)} {dataset.fidelity} value(s) "
                            f"of '{dataset.response_names[i_resp]}' with Kriging")
                model = fit_kriging(dataset.states, dataset.responses[:, i_resp],
                                    kriging_config)
                column[~is_observed] = model.predict(grid[~is_observed])
            columns.append(column)
        responses[label] = np.column_stack(columns)
        observed[label] = is_observed

    logger.info(f"Aligned {len(low)} LF and {len(high)} HF rows onto {len(grid)} states")
    return AlignedPair(states=grid, y_low=responses["low"], y_high=responses["high"],
                       state_names=list(low.state_names),
                       response_names=list(low.response_names),
                       observed_low=observed["low"], observed_high=observed["high"])
