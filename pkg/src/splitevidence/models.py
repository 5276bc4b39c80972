"""Likelihoods, priors and fractionated priors.

Every density evaluated anywhere in the package goes through this module and
is computed in the log domain.  A model couples one likelihood
(logistic, linear regression with known noise variance, or linear regression
with a log-normal prior on the noise scale) with one prior family on the
coefficients (multivariate normal or iid Laplace centred at zero).

When a dataset is split into S shards each shard works with the fractionated
prior p(theta)^(1/S) / alpha, where alpha = integral of p(theta)^(1/S).
Closed forms for log alpha are implemented per prior family; the identity
sum over shards of the unnormalized log subposterior plus S log alpha equals
the full-data log joint, which the tests exercise pointwise.

Parameter layout: the sampled vector theta holds one coefficient per active
feature in increasing feature order, followed by log sigma when the noise
scale is inferred.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ConfigurationError, DomainError
from .gaussian import chol_spd

LOG_2PI = math.log(2.0 * math.pi)

_BATCH_ROWS = 2_000_000  # cap on rows x draws handled in one likelihood block


@dataclass(frozen=True)
class LogisticLikelihood:
    kind = "logistic"


@dataclass(frozen=True)
class LinearKnownVar:
    noise_var: float
    kind = "linear_gaussian_known_var"

    def __post_init__(self):
        if not (self.noise_var > 0):
            raise ConfigurationError("noise_var must be positive")


@dataclass(frozen=True)
class LinearLogNormalVar:
    """Linear regression where log sigma gets its own normal prior."""

    logsigma_mean: float
    logsigma_sd: float
    kind = "linear_gaussian_lognormal_var"

    def __post_init__(self):
        if not (self.logsigma_sd > 0):
            raise ConfigurationError("logsigma_sd must be positive")


Likelihood = Union[LogisticLikelihood, LinearKnownVar, LinearLogNormalVar]


@dataclass(frozen=True, eq=False)
class NormalPrior:
    mean: np.ndarray
    cov: np.ndarray

    kind = "normal"

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, "cov", np.atleast_2d(np.asarray(self.cov, dtype=float)))
        if self.cov.shape != (self.mean.shape[0],) * 2:
            raise ConfigurationError("prior mean and covariance dimensions disagree")
        chol_spd(self.cov, what="prior covariance")


@dataclass(frozen=True)
class LaplacePrior:
    """Independent Laplace(0, scale) coordinates."""

    scale: float

    kind = "laplace"

    def __post_init__(self):
        if not (self.scale > 0):
            raise ConfigurationError("laplace scale must be positive")


Prior = Union[NormalPrior, LaplacePrior]


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """One candidate model: likelihood + prior + active feature set.

    ``dim`` is the number of feature columns in the dataset the model reads.
    ``active_features`` restricts the model to a subset of those columns;
    inactive coefficients are absent from theta rather than pinned at zero,
    so the sampling dimension is the number of active features (plus one for
    log sigma under the log-normal noise model).
    """

    model_id: str
    likelihood: Likelihood
    prior: Prior
    dim: int
    active_features: Optional[tuple] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError("dim must be at least 1")
        if self.active_features is not None:
            feats = tuple(int(i) for i in self.active_features)
            if len(set(feats)) != len(feats):
                raise ConfigurationError("active_features has duplicates")
            if any(i < 0 or i >= self.dim for i in feats):
                raise ConfigurationError("active_features index out of range")
            object.__setattr__(self, "active_features", tuple(sorted(feats)))
        if isinstance(self.prior, NormalPrior) and self.prior.mean.shape[0] != self.dim:
            raise ConfigurationError(
                f"normal prior has dimension {self.prior.mean.shape[0]}, model dim is {self.dim}"
            )

    @property
    def active(self) -> tuple:
        if self.active_features is None:
            return tuple(range(self.dim))
        return self.active_features

    @property
    def n_coef(self) -> int:
        return len(self.active)

    @property
    def infers_scale(self) -> bool:
        return isinstance(self.likelihood, LinearLogNormalVar)

    @property
    def theta_dim(self) -> int:
        return self.n_coef + (1 if self.infers_scale else 0)

    def coef_prior_mean(self) -> np.ndarray:
        if isinstance(self.prior, NormalPrior):
            return self.prior.mean[list(self.active)].copy()
        return np.zeros(self.n_coef)

    def coef_prior_cov(self) -> np.ndarray:
        if not isinstance(self.prior, NormalPrior):
            raise ConfigurationError("coef_prior_cov is only defined for normal priors")
        idx = list(self.active)
        return self.prior.cov[np.ix_(idx, idx)].copy()


@dataclass(frozen=True, eq=False)
class Dataset:
    """Design matrix X (n x p) and outcome vector y (n)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if X.shape[0] != y.shape[0]:
            raise ConfigurationError("X and y row counts disagree")
        if X.shape[0] == 0:
            raise ConfigurationError("dataset is empty")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ConfigurationError("dataset contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True, eq=False)
class Shard:
    """A view of one worker's rows of a dataset."""

    dataset: Dataset
    rows: np.ndarray
    shard_id: int

    def __post_init__(self):
        rows = np.atleast_1d(np.asarray(self.rows, dtype=np.int64))
        if rows.size == 0:
            raise ConfigurationError(f"shard {self.shard_id} is empty")
        if rows.min() < 0 or rows.max() >= self.dataset.n:
            raise ConfigurationError(f"shard {self.shard_id} has row indices out of range")
        if np.unique(rows).size != rows.size:
            raise ConfigurationError(f"shard {self.shard_id} repeats rows")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "_X", self.dataset.X[rows])
        object.__setattr__(self, "_y", self.dataset.y[rows])

    @property
    def X(self) -> np.ndarray:
        return self._X

    @property
    def y(self) -> np.ndarray:
        return self._y

    @property
    def n(self) -> int:
        return self.rows.shape[0]


def whole_shard(dataset: Dataset, shard_id: int = 0) -> Shard:
    """The trivial S=1 shard holding every row."""
    return Shard(dataset=dataset, rows=np.arange(dataset.n), shard_id=shard_id)


def check_compatible(model: ModelSpec, data: Union[Dataset, Shard]) -> None:
    """Validate that a model can read a dataset or shard."""
    X = data.X
    y = data.y
    if X.shape[1] != model.dim:
        raise ConfigurationError(
            f"model {model.model_id} expects {model.dim} features, data has {X.shape[1]}"
        )
    if isinstance(model.likelihood, LogisticLikelihood):
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise ConfigurationError("logistic outcome must be coded 0/1")


def _split_theta(model: ModelSpec, theta: np.ndarray):
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape[-1] != model.theta_dim:
        raise ConfigurationError(
            f"theta has dimension {theta.shape[-1]}, model {model.model_id} "
            f"samples {model.theta_dim}"
        )
    if model.infers_scale:
        return theta[..., : model.n_coef], theta[..., -1]
    return theta, None


def design(model: ModelSpec, data: Union[Dataset, Shard]) -> np.ndarray:
    """Columns of X the model actually reads."""
    X = data.X
    if model.active_features is None:
        return X
    return X[:, list(model.active)]


def log_likelihood(model: ModelSpec, theta: np.ndarray, data: Union[Dataset, Shard]) -> float:
    coefs, logsigma = _split_theta(model, theta)
    Xa = design(model, data)
    y = data.y
    lik = model.likelihood
    if isinstance(lik, LogisticLikelihood):
        linpred = Xa @ coefs
        return float(np.sum(y * linpred - np.logaddexp(0.0, linpred)))
    resid = y - Xa @ coefs
    rss = float(resid @ resid)
    n = y.shape[0]
    if isinstance(lik, LinearKnownVar):
        return -0.5 * n * (LOG_2PI + math.log(lik.noise_var)) - 0.5 * rss / lik.noise_var
    ls = float(logsigma)
    return -0.5 * n * LOG_2PI - n * ls - 0.5 * rss * math.exp(-2.0 * ls)


def log_likelihood_batch(
    model: ModelSpec, thetas: np.ndarray, data: Union[Dataset, Shard]
) -> np.ndarray:
    """log likelihood for a stack of parameter vectors, shape (M, theta_dim)."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    coefs, logsigma = _split_theta(model, thetas)
    Xa = design(model, data)
    y = data.y
    n = y.shape[0]
    lik = model.likelihood
    if isinstance(lik, LogisticLikelihood):
        out = np.empty(thetas.shape[0])
        step = max(1, _BATCH_ROWS // max(n, 1))
        for lo in range(0, thetas.shape[0], step):
            hi = min(lo + step, thetas.shape[0])
            linpred = Xa @ coefs[lo:hi].T
            out[lo:hi] = y @ linpred - np.logaddexp(0.0, linpred).sum(axis=0)
        return out
    # Linear models reduce to the Gram matrix, independent of n per draw.
    gram = Xa.T @ Xa
    xty = Xa.T @ y
    yty = float(y @ y)
    rss = yty - 2.0 * coefs @ xty + np.einsum("mi,ij,mj->m", coefs, gram, coefs)
    rss = np.maximum(rss, 0.0)
    if isinstance(lik, LinearKnownVar):
        return -0.5 * n * (LOG_2PI + math.log(lik.noise_var)) - 0.5 * rss / lik.noise_var
    ls = logsigma
    return -0.5 * n * LOG_2PI - n * ls - 0.5 * rss * np.exp(-2.0 * ls)


def _coef_log_prior_batch(model: ModelSpec, coefs: np.ndarray) -> np.ndarray:
    prior = model.prior
    if isinstance(prior, NormalPrior):
        mean = model.coef_prior_mean()
        cov = model.coef_prior_cov()
        if model.n_coef == 0:
            return np.zeros(coefs.shape[0])
        L = chol_spd(cov, what="prior covariance")
        diff = coefs - mean
        half = solve_triangular(L, diff.T, lower=True).T
        logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        quad = np.einsum("mi,mi->m", half, half)
        return -0.5 * (model.n_coef * LOG_2PI + logdet + quad)
    scale = prior.scale
    return -model.n_coef * math.log(2.0 * scale) - np.abs(coefs).sum(axis=1) / scale


def log_prior_batch(model: ModelSpec, thetas: np.ndarray) -> np.ndarray:
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    coefs, logsigma = _split_theta(model, thetas)
    out = _coef_log_prior_batch(model, coefs)
    if model.infers_scale:
        lik = model.likelihood
        out = out - 0.5 * (
            LOG_2PI
            + 2.0 * math.log(lik.logsigma_sd)
            + ((logsigma - lik.logsigma_mean) / lik.logsigma_sd) ** 2
        )
    return out


def log_prior(model: ModelSpec, theta: np.ndarray) -> float:
    return float(log_prior_batch(model, np.atleast_2d(theta))[0])


def log_alpha(model: ModelSpec, n_splits: int) -> float:
    """log of the normalizer of the fractionated prior p(theta)^(1/S).

    Exactly 0.0 at S=1.  The prior factorizes over the coefficient block and
    the optional log-sigma block, so log alpha is a sum of per-block closed
    forms: for a normal block of dimension d with covariance V,
    (d/2)((S-1)/S) log 2pi + ((S-1)/(2S)) log|V| + (d/2) log S; for d iid
    Laplace(0, b) coordinates, d(((S-1)/S) log(2b) + log S).
    """
    S = int(n_splits)
    if S < 1:
        raise DomainError(f"number of splits must be >= 1, got {n_splits}")
    frac = (S - 1.0) / S
    log_s = math.log(S)
    total = 0.0
    d = model.n_coef
    if isinstance(model.prior, NormalPrior):
        if d > 0:
            L = chol_spd(model.coef_prior_cov(), what="prior covariance")
            logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
            total += 0.5 * d * frac * LOG_2PI + 0.5 * frac * logdet + 0.5 * d * log_s
    else:
        total += d * (frac * math.log(2.0 * model.prior.scale) + log_s)
    if model.infers_scale:
        lik = model.likelihood
        logdet = 2.0 * math.log(lik.logsigma_sd)
        total += 0.5 * frac * LOG_2PI + 0.5 * frac * logdet + 0.5 * log_s
    return total


def log_subprior_batch(model: ModelSpec, thetas: np.ndarray, n_splits: int) -> np.ndarray:
    """Normalized fractionated prior log density, batched."""
    return log_prior_batch(model, thetas) / n_splits - log_alpha(model, n_splits)


def log_subprior(model: ModelSpec, theta: np.ndarray, n_splits: int) -> float:
    return float(log_subprior_batch(model, np.atleast_2d(theta), n_splits)[0])


def log_subposterior_unnorm(
    model: ModelSpec, theta: np.ndarray, shard: Union[Dataset, Shard], n_splits: int
) -> float:
    """log p(y_s | theta) + (1/S) log p(theta) - log alpha."""
    return log_likelihood(model, theta, shard) + log_subprior(model, theta, n_splits)


# ---------------------------------------------------------------------------
# Wire formats: dataset CSV and ModelSpec JSON.

def save_csv(dataset: Dataset, path) -> None:
    """Write a dataset as CSV with header y,x1,...,xp."""
    header = ["y"] + [f"x{j + 1}" for j in range(dataset.p)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(dataset.n):
            writer.writerow([repr(float(dataset.y[i]))] + [repr(float(v)) for v in dataset.X[i]])


def load_csv(path) -> Dataset:
    """Read a dataset from CSV; requires a header with y and x1..xp columns."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigurationError(f"{path}: empty CSV") from None
        header = [h.strip() for h in header]
        if "y" not in header:
            raise ConfigurationError(f"{path}: missing outcome column 'y'")
        p = len(header) - 1
        expected = {f"x{j + 1}" for j in range(p)}
        found = set(header) - {"y"}
        if found != expected:
            raise ConfigurationError(
                f"{path}: feature columns must be x1..x{p}, found {sorted(found)}"
            )
        y_pos = header.index("y")
        x_pos = [header.index(f"x{j + 1}") for j in range(p)]
        ys = []
        xs = []
        for row in reader:
            if not row:
                continue
            try:
                ys.append(float(row[y_pos]))
                xs.append([float(row[j]) for j in x_pos])
            except (ValueError, IndexError):
                raise ConfigurationError(
                    f"{path}: malformed row {len(ys) + 1}: {row!r}"
                ) from None
    if not ys:
        raise ConfigurationError(f"{path}: no data rows")
    return Dataset(X=np.asarray(xs, dtype=float), y=np.asarray(ys, dtype=float))


def model_spec_to_json(model: ModelSpec) -> str:
    """Canonical single-line JSON for a ModelSpec (documented key order)."""
    lik = model.likelihood
    if isinstance(lik, LogisticLikelihood):
        lik_doc = {"kind": lik.kind}
    elif isinstance(lik, LinearKnownVar):
        lik_doc = {"kind": lik.kind, "noise_var": lik.noise_var}
    else:
        lik_doc = {
            "kind": lik.kind,
            "logsigma_mean": lik.logsigma_mean,
            "logsigma_sd": lik.logsigma_sd,
        }
    if isinstance(model.prior, NormalPrior):
        prior_doc = {
            "kind": "normal",
            "mean": [float(v) for v in model.prior.mean],
            "cov": [[float(v) for v in row] for row in model.prior.cov],
        }
    else:
        prior_doc = {"kind": "laplace", "scale": model.prior.scale}
    doc = {
        "model_id": model.model_id,
        "likelihood": lik_doc,
        "prior": prior_doc,
        "dim": model.dim,
        "active_features": None if model.active_features is None else list(model.active),
    }
    return json.dumps(doc, ensure_ascii=False, separators=(",", ":")) + "\n"


def model_spec_from_json(text: str) -> ModelSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"model spec is not valid JSON: {exc}") from None
    try:
        lik_doc = doc["likelihood"]
        kind = lik_doc["kind"]
        if kind == "logistic":
            lik = LogisticLikelihood()
        elif kind == "linear_gaussian_known_var":
            lik = LinearKnownVar(noise_var=float(lik_doc["noise_var"]))
        elif kind == "linear_gaussian_lognormal_var":
            lik = LinearLogNormalVar(
                logsigma_mean=float(lik_doc["logsigma_mean"]),
                logsigma_sd=float(lik_doc["logsigma_sd"]),
            )
        else:
            raise ConfigurationError(f"unknown likelihood kind {kind!r}")
        prior_doc = doc["prior"]
        if prior_doc["kind"] == "normal":
            prior = NormalPrior(mean=np.asarray(prior_doc["mean"], dtype=float),
                                cov=np.asarray(prior_doc["cov"], dtype=float))
        elif prior_doc["kind"] == "laplace":
            prior = LaplacePrior(scale=float(prior_doc["scale"]))
        else:
            raise ConfigurationError(f"unknown prior kind {prior_doc['kind']!r}")
        active = doc.get("active_features")
        return ModelSpec(
            model_id=str(doc["model_id"]),
            likelihood=lik,
            prior=prior,
            dim=int(doc["dim"]),
            active_features=None if active is None else tuple(active),
        )
    except KeyError as exc:
        raise ConfigurationError(f"model spec is missing field {exc}") from None
