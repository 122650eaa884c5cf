"""Synthetic multi-environment generators and closed-form moments of the linear-Gaussian model.

Binary-logistic model, per environment k and observation i::

    U ~ Normal(theta_U, 1)
    T ~ Ber(sigm(U + theta_T))
    Y ~ Ber(sigm(lambda U + T + theta_Y))

Linear-Gaussian model::

    U = theta_U + eps_U
    T = gamma U + theta_T + eps_T
    Y = lambda U + beta T + theta_Y + eps_Y

with every theta drawn once per environment from Normal(0, sigma_theta^2).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Iterable

import numpy as np

from .dataset import EnvBlock, MultiEnvDataset
from .errors import ConfigurationError, DomainError
from .stats import BINARY, CONTINUOUS

MECHANISM_NAMES = ("T", "Y", "U")


def _check_sigmas(obj, names: Iterable[str]):
    for name in names:
        v = getattr(obj, name)
        if not math.isfinite(v) or v < 0:
            raise ConfigurationError(f"{name} must be finite and >= 0, got {v}")


def _normalize_degenerate(degenerate: Iterable[str]) -> frozenset[str]:
    out = set()
    for name in degenerate:
        short = name.removeprefix("Theta_").removeprefix("theta_").upper()
        if short not in MECHANISM_NAMES:
            raise ConfigurationError(f"unknown mechanism {name!r}; choose from {MECHANISM_NAMES}")
        out.add(short)
    return frozenset(out)


def _env_rng(seed: int, k: int) -> np.random.Generator:
    # one stream per environment: adding environments never reshuffles earlier ones
    return np.random.default_rng([int(seed), int(k)])


def _check_sizes(K: int, n_per_env):
    if K < 1:
        raise ConfigurationError(f"K must be >= 1, got {K}")
    sizes = np.broadcast_to(np.asarray(n_per_env, dtype=int), (K,))
    if (sizes < 1).any():
        raise ConfigurationError("every environment needs at least one observation")
    return sizes


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# ---------------------------------------------------------------------------
# binary model


@dataclass(frozen=True)
class BinaryScmSpec:
    lam: float = 0.0
    sigma_theta_t: float = 1.0
    sigma_theta_y: float = 1.0
    sigma_theta_u: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.lam):
            raise ConfigurationError("lambda must be finite")
        _check_sigmas(self, ("sigma_theta_t", "sigma_theta_y", "sigma_theta_u"))

    def to_json(self) -> dict:
        return {"model": "binary", **asdict(self)}


def sample_binary_scm(spec: BinaryScmSpec, K: int, n_per_env, seed: int = 0,
                      debug: bool = False) -> MultiEnvDataset:
    """Binary t and y for ``K`` environments; ``n_per_env`` is an int or a length-K sequence."""
    sizes = _check_sizes(K, n_per_env)
    blocks, truth = [], {"theta_t": [], "theta_y": [], "theta_u": [], "u": []}
    for k in range(K):
        rng = _env_rng(seed, k)
        th_t, th_y, th_u = rng.standard_normal(3) * (spec.sigma_theta_t, spec.sigma_theta_y, spec.sigma_theta_u)
        n = int(sizes[k])
        u = th_u + rng.standard_normal(n)
        t = (rng.random(n) < _sigmoid(u + th_t)).astype(float)
        y = (rng.random(n) < _sigmoid(spec.lam * u + t + th_y)).astype(float)
        blocks.append(EnvBlock(str(k), t, y, np.zeros((n, 0))))
        if debug:
            for key, val in zip(("theta_t", "theta_y", "theta_u", "u"), (th_t, th_y, th_u, u)):
                truth[key].append(val)
    data = MultiEnvDataset(blocks, {"t": BINARY, "y": BINARY})
    if debug:
        data.ground_truth = truth
    return data


# ---------------------------------------------------------------------------
# linear-Gaussian model


@dataclass(frozen=True)
class GaussScmSpec:
    beta: float = 1.0
    gamma: float = 1.0
    lam: float = 1.0
    sigma_t: float = 1.0
    sigma_y: float = 1.0
    sigma_u: float = 1.0
    sigma_theta_t: float = 1.0
    sigma_theta_y: float = 1.0
    sigma_theta_u: float = 5.0

    def __post_init__(self):
        for name in ("beta", "gamma", "lam"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigurationError(f"{name} must be finite")
        _check_sigmas(self, ("sigma_t", "sigma_y", "sigma_u",
                             "sigma_theta_t", "sigma_theta_y", "sigma_theta_u"))
        if self.sigma_theta_t == 0 and self.sigma_theta_u == 0:
            raise ConfigurationError("at least one of sigma_theta_t, sigma_theta_u must be positive")

    def to_json(self) -> dict:
        return {"model": "gaussian", **asdict(self)}

    def with_degenerate(self, degenerate: Iterable[str]) -> "GaussScmSpec":
        """Copy with the named mechanisms' standard deviations set to zero."""
        names = _normalize_degenerate(degenerate)
        return replace(self, **{f"sigma_theta_{v.lower()}": 0.0 for v in names})


def sample_gauss_scm(spec: GaussScmSpec, K: int, n_per_env, seed: int = 0,
                     degenerate: Iterable[str] = (), debug: bool = False) -> MultiEnvDataset:
    spec = spec.with_degenerate(degenerate)
    sizes = _check_sizes(K, n_per_env)
    blocks, truth = [], {"theta_t": [], "theta_y": [], "theta_u": [], "u": []}
    for k in range(K):
        rng = _env_rng(seed, k)
        th_t, th_y, th_u = rng.standard_normal(3) * (spec.sigma_theta_t, spec.sigma_theta_y, spec.sigma_theta_u)
        n = int(sizes[k])
        e_u, e_t, e_y = rng.standard_normal((3, n))
        u = th_u + spec.sigma_u * e_u
        t = spec.gamma * u + th_t + spec.sigma_t * e_t
        y = spec.lam * u + spec.beta * t + th_y + spec.sigma_y * e_y
        blocks.append(EnvBlock(str(k), t, y, np.zeros((n, 0))))
        if debug:
            for key, val in zip(("theta_t", "theta_y", "theta_u", "u"), (th_t, th_y, th_u, u)):
                truth[key].append(val)
    data = MultiEnvDataset(blocks, {"t": CONTINUOUS, "y": CONTINUOUS})
    if debug:
        data.ground_truth = truth
    return data


@dataclass(frozen=True)
class CrossMoments:
    cov_tj_yi: float
    cov_tj_ti: float
    cov_ti_yi: float
    var_t: float
    var_y: float


def analytic_cross_covariances(spec: GaussScmSpec) -> CrossMoments:
    """Population moments of two observations i != j from one environment.

    ``var_y`` is the exact variance ``(lam + beta gamma)^2 S_U + beta^2 S_T + S_Y``
    with ``S_V = sigma_theta_V^2 + sigma_V^2``.
    """
    b, g, l = spec.beta, spec.gamma, spec.lam
    th_u, th_t, th_y = spec.sigma_theta_u ** 2, spec.sigma_theta_t ** 2, spec.sigma_theta_y ** 2
    e_u, e_t, e_y = spec.sigma_u ** 2, spec.sigma_t ** 2, spec.sigma_y ** 2
    c = g * l + b * g * g
    return CrossMoments(
        cov_tj_yi=c * th_u + b * th_t,
        cov_tj_ti=g * g * th_u + th_t,
        cov_ti_yi=c * (th_u + e_u) + b * (th_t + e_t),
        var_t=g * g * (th_u + e_u) + th_t + e_t,
        var_y=(l + b * g) ** 2 * (th_u + e_u) + b * b * (th_t + e_t) + th_y + e_y,
    )


def analytic_partial_correlation(spec: GaussScmSpec) -> float:
    """Population partial correlation of ``t_j`` and ``y_i`` given ``t_i``."""
    m = analytic_cross_covariances(spec)
    if m.var_t <= 0:
        raise DomainError("Var(T) vanishes")
    if m.var_y <= 0:
        raise DomainError("Var(Y) vanishes")
    r_jy = m.cov_tj_yi / math.sqrt(m.var_t * m.var_y)
    r_ji = m.cov_tj_ti / m.var_t
    r_iy = m.cov_ti_yi / math.sqrt(m.var_t * m.var_y)
    f1, f2 = 1.0 - r_ji * r_ji, 1.0 - r_iy * r_iy
    if f1 <= 0:
        raise DomainError("1 - rho(T_j, T_i)^2 vanishes: T is constant within environments")
    if f2 <= 0:
        raise DomainError("1 - rho(T_i, Y_i)^2 vanishes: Y is an exact linear function of T")
    # numerator written in the factored form so the locus gives an exact zero
    num = spec.gamma * spec.lam * (spec.sigma_theta_u ** 2 * spec.sigma_t ** 2
                                   - spec.sigma_u ** 2 * spec.sigma_theta_t ** 2)
    num /= math.sqrt(m.var_t ** 3 * m.var_y)
    return num / math.sqrt(f1 * f2)


def partial_correlation_asymptote(spec: GaussScmSpec, which: str, magnitude: float) -> float:
    """``analytic_partial_correlation`` with ``gamma`` or ``lambda`` set to ``magnitude``."""
    if magnitude <= 0:
        raise DomainError("magnitude must be positive")
    if which == "gamma":
        return analytic_partial_correlation(replace(spec, gamma=magnitude))
    if which in ("lambda", "lam"):
        return analytic_partial_correlation(replace(spec, lam=magnitude))
    raise ConfigurationError(f"which must be 'gamma' or 'lambda', got {which!r}")


def omitted_variable_bias(spec: GaussScmSpec) -> float:
    """``E[Y|do(T)] - E[Y|T]`` slope, ``-lambda/gamma``; exact when T is noise-free given U."""
    if spec.gamma == 0:
        raise DomainError("gamma = 0: no confounding path into T")
    return -spec.lam / spec.gamma


def exact_regression_bias(spec: GaussScmSpec) -> float:
    """``beta`` minus the population OLS slope of Y on T over pooled environments."""
    s_u = spec.sigma_theta_u ** 2 + spec.sigma_u ** 2
    s_t = spec.sigma_theta_t ** 2 + spec.sigma_t ** 2
    denom = spec.gamma ** 2 * s_u + s_t
    if denom == 0:
        raise DomainError("Var(T) vanishes")
    return -spec.gamma * spec.lam * s_u / denom


def faithfulness_locus(sigma_u: float, sigma_t: float, sigma_theta_t: float) -> float:
    """``sigma_theta_u`` at which the partial correlation vanishes despite confounding."""
    if sigma_t == 0:
        raise DomainError("sigma_t = 0: the locus is undefined")
    return sigma_u / sigma_t * sigma_theta_t


def spec_from_json(obj: dict):
    """BinaryScmSpec or GaussScmSpec from a dict with a ``model`` key."""
    obj = dict(obj)
    model = obj.pop("model", None)
    if "lambda" in obj:
        obj["lam"] = obj.pop("lambda")
    try:
        if model == "binary":
            return BinaryScmSpec(**obj)
        if model in ("gaussian", "gauss"):
            return GaussScmSpec(**obj)
    except TypeError as exc:
        raise ConfigurationError(f"bad spec field: {exc}") from None
    raise ConfigurationError(f"spec 'model' must be 'binary' or 'gaussian', got {model!r}")
