"""Distribution tails and the conditional independence tests used by the detector.

Four tests share one calling convention, ``test(data, a, b, cond)``, where
``data`` is a :class:`SampleMatrix` and ``a``, ``b``, ``cond`` are column
names. Each returns a :class:`CiTestResult`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateInputError,
    DomainError,
    NumericalError,
    SampleSizeWarning,
    UsageError,
)

BINARY, CATEGORICAL, CONTINUOUS = "binary", "categorical", "continuous"
TEST_NAMES = ("g_test", "partial_corr", "permutation", "kci")

_EPS = 1e-15
_FPMIN = 1e-300
_MAX_ITER = 10_000


# ---------------------------------------------------------------------------
# regularized incomplete gamma


def _gamma_series(a: float, x: float) -> float:
    # P(a, x) by the power series; converges quickly for x < a + 1
    ap = a
    term = total = 1.0 / a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    else:
        raise NumericalError(f"incomplete gamma series did not converge (a={a}, x={x})")
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cont_frac(a: float, x: float) -> float:
    # Q(a, x) by the Legendre continued fraction (modified Lentz); for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    else:
        raise NumericalError(f"incomplete gamma continued fraction did not converge (a={a}, x={x})")
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0:
        raise DomainError(f"shape must be positive, got {a}")
    if x < 0:
        raise DomainError(f"x must be nonnegative, got {x}")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cont_frac(a, x)


def gamma_q(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x), accurate in the far tail."""
    if a <= 0:
        raise DomainError(f"shape must be positive, got {a}")
    if x < 0:
        raise DomainError(f"x must be nonnegative, got {x}")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cont_frac(a, x)


def chi2_survival(x: float, df: float) -> float:
    """P(chi2_df > x)."""
    if not df > 0:
        raise DomainError(f"degrees of freedom must be positive, got {df}")
    if x < 0:
        raise DomainError(f"chi-square argument must be nonnegative, got {x}")
    return gamma_q(df / 2.0, x / 2.0)


def gamma_survival(x: float, shape: float, scale: float) -> float:
    """P(G > x) for G ~ Gamma(shape, scale)."""
    if scale <= 0:
        raise DomainError(f"scale must be positive, got {scale}")
    return gamma_q(shape, max(x, 0.0) / scale)


def normal_two_sided(z: float) -> float:
    return math.erfc(abs(z) / math.sqrt(2.0))


# ---------------------------------------------------------------------------
# data containers


@dataclass
class SampleMatrix:
    """Named equal-length columns with a declared kind per column."""

    columns: dict[str, np.ndarray]
    kinds: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        lengths = set()
        cols = {}
        for name, col in self.columns.items():
            arr = np.asarray(col, dtype=float)
            if arr.ndim != 1:
                raise UsageError(f"column {name!r} must be one-dimensional")
            if np.isnan(arr).any():
                raise DegenerateInputError(f"column {name!r} has missing entries")
            lengths.add(arr.shape[0])
            cols[name] = arr
        if len(lengths) > 1:
            raise UsageError(f"columns have unequal lengths {sorted(lengths)}")
        self.columns = cols
        kinds = dict(self.kinds)
        for name, arr in cols.items():
            kinds.setdefault(name, infer_kind(arr))
            if kinds[name] not in (BINARY, CATEGORICAL, CONTINUOUS):
                raise UsageError(f"unknown column kind {kinds[name]!r}")
        self.kinds = kinds

    @classmethod
    def from_arrays(cls, kinds: Mapping[str, str] | None = None, **columns) -> "SampleMatrix":
        return cls(dict(columns), dict(kinds or {}))

    @property
    def n(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise UsageError(f"no column named {name!r}") from None

    def is_discrete(self, name: str) -> bool:
        return self.kinds[name] in (BINARY, CATEGORICAL)


def infer_kind(values: np.ndarray) -> str:
    return BINARY if np.isin(values, (0.0, 1.0)).all() else CONTINUOUS


@dataclass(frozen=True)
class CiTestResult:
    p_value: float
    statistic: float
    test_name: str
    n_effective: int
    df: float | None = None


# ---------------------------------------------------------------------------
# G-test


def _codes(values: np.ndarray) -> tuple[np.ndarray, int]:
    levels, inv = np.unique(values, return_inverse=True)
    return inv.ravel(), len(levels)


def _strata(data: SampleMatrix, cond: Sequence[str]) -> tuple[np.ndarray, int]:
    if not cond:
        return np.zeros(data.n, dtype=np.intp), 1
    stacked = np.column_stack([data[c] for c in cond])
    _, inv = np.unique(stacked, axis=0, return_inverse=True)
    inv = inv.ravel()
    return inv, int(inv.max()) + 1


def _g_from_counts(counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """G statistic and df from counts shaped (..., strata, rows, cols).

    Strata whose table has fewer than two nonempty rows or columns add
    nothing to either G or df.
    """
    counts = counts.astype(float)
    row = counts.sum(axis=-1, keepdims=True)
    col = counts.sum(axis=-2, keepdims=True)
    tot = row.sum(axis=-2, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        expected = row * col / tot
        terms = np.where(counts > 0, counts * np.log(counts / expected), 0.0)
    g = 2.0 * terms.sum(axis=(-1, -2))
    nr = (row[..., 0] > 0).sum(axis=-1)
    nc = (col[..., 0, :] > 0).sum(axis=-1)
    df = np.clip(nr - 1, 0, None) * np.clip(nc - 1, 0, None)
    return g.sum(axis=-1), df.sum(axis=-1)


def _contingency(a_codes, b_codes, strata, n_a, n_b, n_s) -> np.ndarray:
    flat = (strata * n_a + a_codes) * n_b + b_codes
    return np.bincount(flat, minlength=n_s * n_a * n_b).reshape(n_s, n_a, n_b)


def _require_discrete(data: SampleMatrix, names: Sequence[str], test: str):
    bad = [c for c in names if not data.is_discrete(c)]
    if bad:
        raise UsageError(f"{test} needs binary/categorical columns, got continuous {bad}")


def g_test_ci(data: SampleMatrix, a: str, b: str, cond: Sequence[str] = ()) -> CiTestResult:
    """Likelihood-ratio (G) test of ``a _||_ b | cond`` for discrete columns."""
    cond = list(cond)
    _require_discrete(data, [a, b, *cond], "g_test")
    a_codes, n_a = _codes(data[a])
    b_codes, n_b = _codes(data[b])
    if n_a < 2 or n_b < 2:
        raise DegenerateInputError(f"fewer than two levels observed in {a!r} or {b!r}")
    strata, n_s = _strata(data, cond)
    counts = _contingency(a_codes, b_codes, strata, n_a, n_b, n_s)
    g, df = _g_from_counts(counts)
    g, df = max(float(g), 0.0), int(df)

    row = counts.sum(axis=2, keepdims=True)
    col = counts.sum(axis=1, keepdims=True)
    expected = row * col / np.maximum(row.sum(axis=1, keepdims=True), 1)
    live = (row > 0) & (col > 0)
    if (expected[live] < 5).mean() > 0.2:
        warnings.warn("G-test: more than 20% of expected cell counts are below 5",
                      SampleSizeWarning, stacklevel=2)

    p = chi2_survival(g, df) if df > 0 else 1.0
    return CiTestResult(p, g, "g_test", data.n, df)


# ---------------------------------------------------------------------------
# partial correlation


def _collinear_columns(names: Sequence[str], cov: np.ndarray) -> list[str]:
    w, v = np.linalg.eigh(cov)
    null = v[:, w <= max(w.max(), 1.0) * 1e-10]
    if null.size == 0:
        null = v[:, :1]
    weight = np.abs(null).max(axis=1)
    return [n for n, wgt in zip(names, weight) if wgt > 1e-6]


def partial_correlation(data: SampleMatrix, a: str, b: str, cond: Sequence[str] = ()) -> float:
    names = [a, b, *cond]
    m = np.column_stack([data[c] for c in names])
    cov = np.cov(m, rowvar=False)
    sd = np.sqrt(np.diag(cov))
    if (sd == 0).any() or np.linalg.cond(cov) > 1e12:
        raise NumericalError(
            "singular covariance; collinear or constant columns: "
            + ", ".join(_collinear_columns(names, cov))
        )
    if not cond:
        return float(np.clip(cov[0, 1] / (sd[0] * sd[1]), -1.0, 1.0))
    corr = cov / np.outer(sd, sd)
    prec = np.linalg.inv(corr)
    r = -prec[0, 1] / math.sqrt(prec[0, 0] * prec[1, 1])
    return float(np.clip(r, -1.0, 1.0))


def partial_correlation_test(data: SampleMatrix, a: str, b: str, cond: Sequence[str] = ()) -> CiTestResult:
    """Fisher-z test of zero partial correlation (two-sided)."""
    cond = list(cond)
    dof = data.n - len(cond) - 3
    if dof <= 0:
        raise DegenerateInputError(f"need n > |cond| + 3, got n={data.n} with {len(cond)} conditioners")
    r = partial_correlation(data, a, b, cond)
    with np.errstate(divide="ignore"):
        z = float(np.arctanh(r)) * math.sqrt(dof)
    return CiTestResult(normal_two_sided(z), r, "partial_corr", data.n)


# ---------------------------------------------------------------------------
# permutation test

_PERM_CHUNK = 128


def _seed_words(seed) -> list[int]:
    if isinstance(seed, (int, np.integer)):
        return [int(seed)]
    return [int(s) for s in seed]


def _within_strata_permutations(strata: np.ndarray, n_perm: int, seed) -> np.ndarray:
    """(n_perm, n) index arrays, each permuting positions only within a stratum.

    Chunk ``c`` draws from its own stream keyed by ``(seed, c)``.
    """
    n = strata.shape[0]
    grouped = np.argsort(strata, kind="stable")
    out = np.empty((n_perm, n), dtype=np.intp)
    for c, start in enumerate(range(0, n_perm, _PERM_CHUNK)):
        stop = min(start + _PERM_CHUNK, n_perm)
        rng = np.random.default_rng([*_seed_words(seed), c])
        keys = strata[None, :] + rng.random((stop - start, n))
        order = np.argsort(keys, axis=1, kind="stable")
        out[start:stop, grouped] = order
    return out


def _demean_within(values: np.ndarray, strata: np.ndarray, n_s: int) -> np.ndarray:
    sums = np.bincount(strata, weights=values, minlength=n_s)
    counts = np.bincount(strata, minlength=n_s)
    return values - (sums / np.maximum(counts, 1))[strata]


def permutation_ci_test(data: SampleMatrix, a: str, b: str, cond: Sequence[str] = (),
                        n_perm: int = 999, rng_seed: int | Sequence[int] = 0) -> CiTestResult:
    """Within-stratum permutation test of ``a _||_ b | cond`` for discrete ``cond``.

    The statistic is G when ``a`` and ``b`` are both discrete and the absolute
    within-stratum correlation otherwise.
    """
    cond = list(cond)
    if n_perm < 100:
        raise UsageError(f"n_perm must be at least 100, got {n_perm}")
    _require_discrete(data, cond, "permutation (conditioning set)")
    strata, n_s = _strata(data, cond)
    sizes = np.bincount(strata, minlength=n_s)
    if (sizes <= 1).all():
        raise DegenerateInputError("every conditioning stratum is a singleton; nothing to permute")
    perms = _within_strata_permutations(strata, n_perm, rng_seed)

    if data.is_discrete(a) and data.is_discrete(b):
        a_codes, n_a = _codes(data[a])
        b_codes, n_b = _codes(data[b])
        g_obs, df = _g_from_counts(_contingency(a_codes, b_codes, strata, n_a, n_b, n_s))
        cell = (strata * n_a) * n_b + b_codes  # a's contribution is added per permutation
        flat = cell[None, :] + a_codes[perms] * n_b
        width = n_s * n_a * n_b
        offsets = (np.arange(n_perm) * width)[:, None]
        counts = np.bincount((flat + offsets).ravel(), minlength=n_perm * width)
        g_perm, _ = _g_from_counts(counts.reshape(n_perm, n_s, n_a, n_b))
        observed, null = float(g_obs), g_perm
    else:
        xa = _demean_within(data[a], strata, n_s)
        xb = _demean_within(data[b], strata, n_s)
        denom = math.sqrt(float(xa @ xa) * float(xb @ xb))
        if denom == 0:
            observed, null = 0.0, np.zeros(n_perm)
        else:
            # permuting a within strata leaves its within-stratum demeaning unchanged
            observed = abs(float(xa @ xb)) / denom
            null = np.abs(xa[perms] @ xb) / denom
        df = None

    tol = 1e-10 * max(1.0, abs(observed))
    exceed = int((null >= observed - tol).sum())
    p = (1 + exceed) / (1 + n_perm)
    return CiTestResult(p, observed, "permutation", data.n, None if df is None else float(df))


# ---------------------------------------------------------------------------
# kernel conditional independence


@dataclass(frozen=True)
class KciConfig:
    min_n: int = 30
    ridge: float = 1e-3  # multiplied by n
    eig_threshold: float = 1e-5
    cond_weight: float = 0.5  # conditioning columns are scaled by this inside the x kernel


def _stack(data: SampleMatrix, names: Sequence[str]) -> np.ndarray:
    m = np.column_stack([data[c] for c in names]).astype(float)
    sd = m.std(axis=0)
    if (sd == 0).any():
        const = [c for c, s in zip(names, sd) if s == 0]
        raise DegenerateInputError(f"kernel bandwidth is zero for constant column(s) {const}")
    return (m - m.mean(axis=0)) / sd


def _gaussian_kernel(m: np.ndarray) -> np.ndarray:
    sq = np.sum(m * m, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (m @ m.T), 0.0)
    iu = np.triu_indices(m.shape[0], k=1)
    width = float(np.median(np.sqrt(d2[iu])))
    if width == 0:
        raise DegenerateInputError("median pairwise distance is zero; kernel bandwidth undefined")
    return np.exp(-d2 / (2.0 * width * width))


def _center(k: np.ndarray) -> np.ndarray:
    return k - k.mean(axis=0, keepdims=True) - k.mean(axis=1, keepdims=True) + k.mean()


def kernel_ci_test(data: SampleMatrix, a: str, b: str, cond: Sequence[str] = (),
                   config: KciConfig = KciConfig()) -> CiTestResult:
    """Kernel conditional independence test with a two-moment gamma null."""
    cond = list(cond)
    n = data.n
    if n < 4:
        raise DegenerateInputError(f"kernel test needs at least 4 samples, got {n}")
    if n < config.min_n:
        warnings.warn(f"KCI with n={n} < {config.min_n}; gamma approximation may be poor",
                      SampleSizeWarning, stacklevel=2)

    ky = _center(_gaussian_kernel(_stack(data, [b])))
    if not cond:
        kx = _center(_gaussian_kernel(_stack(data, [a])))
        stat = float(np.sum(kx * ky)) / n
        mean = float(np.trace(kx) * np.trace(ky)) / n**2
        var = 2.0 * float(np.sum(kx * kx) * np.sum(ky * ky)) / n**4
    else:
        xz = _stack(data, [a, *cond])
        xz[:, 1:] *= config.cond_weight
        kx = _center(_gaussian_kernel(xz))
        kz = _center(_gaussian_kernel(_stack(data, cond)))
        eps = config.ridge * n
        rz = eps * np.linalg.inv(kz + eps * np.eye(n))
        kx = _psd_part(rz @ kx @ rz, config.eig_threshold)
        ky = _psd_part(rz @ ky @ rz, config.eig_threshold)
        stat = float(np.sum(kx * ky)) / n
        # the null is a weighted sum of chi2_1 with weights from the eigenfunction
        # products; its first two moments only need the Hadamard product kx * ky
        prod = kx * ky
        mean = float(np.trace(prod)) / n
        var = 2.0 * float(np.sum(prod * prod)) / n**2

    if mean <= 0 or var <= 0:
        return CiTestResult(1.0, stat, "kci", n)
    shape = mean * mean / var
    scale = var / mean
    p = gamma_survival(stat, shape, scale)
    return CiTestResult(min(max(p, 0.0), 1.0), stat, "kci", n)


def _psd_part(k: np.ndarray, threshold: float) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (k + k.T))
    keep = w > w.max() * threshold
    return (v[:, keep] * w[keep]) @ v[:, keep].T


# ---------------------------------------------------------------------------


CiTest = Callable[..., CiTestResult]


def get_test(name: str, **options) -> CiTest:
    """Test callable by its serialized name, with options bound."""
    if name == "g_test":
        return g_test_ci
    if name == "partial_corr":
        return partial_correlation_test
    if name == "permutation":
        n_perm = options.get("n_perm", 999)
        seed = options.get("seed", 0)

        def run(data, a, b, cond=()):
            return permutation_ci_test(data, a, b, cond, n_perm=n_perm, rng_seed=seed)

        return run
    if name == "kci":
        config = options.get("kci_config", KciConfig())

        def run(data, a, b, cond=()):
            return kernel_ci_test(data, a, b, cond, config)

        return run
    raise UsageError(f"unknown test {name!r}; choose from {', '.join(TEST_NAMES)}")
