"""Amortization-gap formulas and their Monte Carlo estimators.

Everything uses the cosine SE basis on [0, 1] with context locations drawn
i.i.d. Uniform[0, 1]. ``v_hat = (1/n) sum_i e_1(x_i)^2`` and
``e_bar = (1/n) sum_i e_1(x_i)`` are the two scalar summaries of a context
in the ``d = 1`` analysis.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalError, ParameterError
from .kernel import SQRT2, cosine_eigenvalues
from .lnp_analytic import Aggregation
from .mercer import effective_dimension
from .seeding import rng_for

BLOCK = 1000
SYMMETRIC_PAIRS = ((0.10, 0.90), (0.20, 0.80), (0.30, 0.70), (0.40, 0.60), (0.45, 0.55))


@dataclass(frozen=True)
class GapEstimate:
    value: float
    std_err: float
    draws: int
    seed: int


@dataclass(frozen=True)
class ScalarGapInputs:
    n: int
    lambda_1: float
    sigma_d_sq: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ParameterError(f"n must be a positive integer, got {self.n}")
        if not self.lambda_1 >= 0:
            raise ParameterError("lambda_1 must be non-negative")
        if not self.sigma_d_sq > 0:
            raise ParameterError("sigma_d^2 must be positive")

    @property
    def alpha(self) -> float:
        return self.n * self.lambda_1 / self.sigma_d_sq

    @classmethod
    def from_lengthscale(cls, n: int, lengthscale: float, sigma_d_sq: float = 1.0) -> "ScalarGapInputs":
        return cls(n, float(cosine_eigenvalues(lengthscale, 1)[0]), sigma_d_sq)


def scalar_gap_formula(inp: ScalarGapInputs) -> float:
    """Leading-order gap ``alpha^2 / (8 n (1 + alpha)^2)``."""
    a = inp.alpha
    return a * a / (8.0 * inp.n * (1.0 + a) ** 2)


def _map_blocks(fn, nblocks: int, threads: int):
    if threads <= 1 or nblocks <= 1:
        return [fn(b) for b in range(nblocks)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(nblocks)))


def _block_sizes(draws: int) -> list[int]:
    full, rem = divmod(draws, BLOCK)
    return [BLOCK] * full + ([rem] if rem else [])


def _e1(x: np.ndarray) -> np.ndarray:
    return SQRT2 * np.cos(np.pi * x)


def mc_scalar_gap(inp: ScalarGapInputs, draws: int = 100_000, seed: int = 0, threads: int = 1) -> GapEstimate:
    """Monte Carlo mean of ``(r - 1 - log r) / 2`` with ``r = (1 + alpha v_hat) / (1 + alpha)``.

    Draws are processed in blocks of 1000, each with its own seed stream, so
    the estimate does not depend on ``threads``.
    """
    if draws < 1000:
        raise ParameterError(f"need at least 1000 draws, got {draws}")
    a, n = inp.alpha, inp.n
    sizes = _block_sizes(draws)

    def block(b):
        rng = rng_for(seed, "scalar_gap", n, b)
        v = np.mean(_e1(rng.uniform(size=(sizes[b], n))) ** 2, axis=1)
        u = np.log1p(a * v) - math.log1p(a)
        return 0.5 * (np.expm1(u) - u)

    kl = np.concatenate(_map_blocks(block, len(sizes), threads))
    return GapEstimate(float(kl.mean()), float(kl.std(ddof=1) / math.sqrt(draws)), draws, seed)


@dataclass(frozen=True)
class CorrelationResult:
    n: int
    var_vhat: float
    predicted: float
    corr: float
    draws: int


def correlation_test(n: int, draws: int = 50_000, seed: int = 0, threads: int = 1) -> CorrelationResult:
    """Sample variance of ``v_hat`` and its correlation with ``e_bar``."""
    if draws < 10_000:
        raise ParameterError(f"need at least 10^4 draws, got {draws}")
    if n < 1:
        raise ParameterError("n must be >= 1")
    sizes = _block_sizes(draws)

    def block(b):
        e = _e1(rng_for(seed, "correlation", n, b).uniform(size=(sizes[b], n)))
        return np.stack([np.mean(e * e, axis=1), np.mean(e, axis=1)])

    v, ebar = np.concatenate(_map_blocks(block, len(sizes), threads), axis=1)
    return CorrelationResult(n, float(np.var(v, ddof=1)), 1.0 / (2 * n), float(np.corrcoef(v, ebar)[0, 1]), draws)


def _kl_zero_mean_scalar(p: float, q: float) -> float:
    u = math.log(p) - math.log(q)
    return 0.5 * (math.expm1(u) - u)


def pathology_table(pairs=SYMMETRIC_PAIRS, lengthscale: float = 0.3, sigma_d_sq: float = 1.0) -> list[dict]:
    """Symmetric two-point contexts with zero mean representation at ``d = 1``.

    Each row carries the posterior precision and variance and, against the
    arithmetic mean of the listed variances, the KL in both directions.
    """
    lam1 = float(cosine_eigenvalues(lengthscale, 1)[0])
    rows = []
    for x1, x2 in pairs:
        if abs(x1 + x2 - 1.0) > 1e-12:
            raise ParameterError(f"pair ({x1}, {x2}) is not symmetric about 0.5")
        e = _e1(np.array([x1, x2]))
        mean_rep = math.sqrt(lam1) * float(e.sum()) / 2.0
        if abs(mean_rep) >= 1e-12:
            raise NumericalError(f"mean representation {mean_rep:.3e} is not zero for ({x1}, {x2})")
        prec = 1.0 + lam1 * float(e @ e) / sigma_d_sq
        rows.append({"x1": x1, "x2": x2, "mean_rep": mean_rep, "sigma_p_inv": prec, "sigma_p": 1.0 / prec})
    avg = sum(r["sigma_p"] for r in rows) / len(rows)
    for r in rows:
        r["sigma_avg"] = avg
        r["kl_avg_to_p"] = _kl_zero_mean_scalar(avg, r["sigma_p"])
        r["kl_p_to_avg"] = _kl_zero_mean_scalar(r["sigma_p"], avg)
    return rows


def _features(Phi: np.ndarray, mode: Aggregation) -> np.ndarray:
    n = Phi.shape[1]
    if mode is Aggregation.MEAN:
        return Phi.mean(axis=1)
    d = Phi.shape[2]
    iu = np.triu_indices(d)
    S = np.einsum("cni,cnj->cij", Phi, Phi) / n
    return S[:, iu[0], iu[1]]


def mc_gap_regression(
    d: int,
    n: int,
    mode=Aggregation.MEAN,
    contexts: int = 2000,
    seed: int = 0,
    lengthscale: float = 0.3,
    sigma_d_sq: float = 1.0,
    strict: bool = False,
) -> GapEstimate:
    """Gap of the best linear predictor of ``Sigma_p`` from the representation.

    Draws ``contexts`` location sets, regresses every entry of ``Sigma_p`` on
    the representation features plus an intercept, symmetrizes the fit and
    floors its eigenvalues at 1e-8, then averages
    ``KL(N(0, Sigma_hat) || N(0, Sigma_p))``.

    The location draws depend on ``(seed, d, n)`` only, so the two aggregation
    modes see the same contexts.

    For ``d >= 3`` some second-order features are exact linear combinations
    of others (products of cosines are sums of cosines), so redundant
    columns are dropped; the fitted values are unchanged by this. With
    ``strict=True`` any rank deficiency raises instead.
    """
    mode = Aggregation(mode)
    if d < 1 or n < 1:
        raise ParameterError("d and n must be positive")
    nfeat = d if mode is Aggregation.MEAN else d * (d + 1) // 2
    if contexts < 10 * nfeat:
        raise ParameterError(f"{contexts} contexts is too few for {nfeat} features (need >= {10 * nfeat})")

    sq = np.sqrt(cosine_eigenvalues(lengthscale, d))
    X = rng_for(seed, "regression", d, n).uniform(size=(contexts, n))
    j = np.arange(1, d + 1)
    Phi = SQRT2 * np.cos(np.pi * X[..., None] * j) * sq  # (C, n, d)
    P = np.eye(d) + np.einsum("cni,cnj->cij", Phi, Phi) / sigma_d_sq
    L = np.linalg.cholesky(P)
    Linv = np.linalg.inv(L)
    Sig = np.swapaxes(Linv, 1, 2) @ Linv

    F = np.hstack([np.ones((contexts, 1)), _features(Phi, mode)])
    F = _independent_columns(F, strict, f"d = {d}, n = {n}, {mode.value}")
    coef, *_ = np.linalg.lstsq(F, Sig.reshape(contexts, -1), rcond=None)
    H = (F @ coef).reshape(contexts, d, d)
    H = 0.5 * (H + np.swapaxes(H, 1, 2))
    w, V = np.linalg.eigh(H)
    w = np.maximum(w, 1e-8)
    H = (V * w[:, None, :]) @ np.swapaxes(V, 1, 2)

    # KL(N(0,H) || N(0,Sig)) with Sig^{-1} = P
    trace = np.einsum("cij,cji->c", P, H)
    logdet_P = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    logdet_H = np.sum(np.log(w), axis=1)
    kl = 0.5 * (trace - d - logdet_P - logdet_H)
    return GapEstimate(float(kl.mean()), float(kl.std(ddof=1) / math.sqrt(contexts)), contexts, seed)


def _independent_columns(F: np.ndarray, strict: bool, label: str) -> np.ndarray:
    _, R, piv = scipy.linalg.qr(F, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > 1e-10 * diag[0]))
    if rank == F.shape[1]:
        return F
    if strict or rank < 2:
        raise NumericalError(
            f"regression design has rank {rank} < {F.shape[1]} columns ({label});"
            f" dependent columns {sorted(int(c) for c in piv[rank:])}, |R_kk| from {diag[0]:.3e} down to {diag[-1]:.3e}"
        )
    return F[:, np.sort(piv[:rank])]


def power_law_fit(ns, gaps) -> float:
    """Least-squares slope of ``log gap`` against ``log n``."""
    ns = np.asarray(ns, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    if ns.size != gaps.size or ns.size < 3:
        raise ParameterError("power_law_fit needs at least 3 (n, gap) pairs")
    if np.any(gaps <= 0) or np.any(ns <= 0):
        raise ParameterError("power_law_fit needs strictly positive n and gaps")
    slope, _ = np.polyfit(np.log(ns), np.log(gaps), 1)
    return float(slope)


def aggregation_comparison(ns=(10, 50, 100, 200, 500), d: int = 3, contexts: int = 2000, seed: int = 0, lengthscale: float = 0.3) -> list[dict]:
    rows = []
    for n in ns:
        m = mc_gap_regression(d, n, Aggregation.MEAN, contexts, seed, lengthscale)
        s = mc_gap_regression(d, n, Aggregation.SECOND_ORDER, contexts, seed, lengthscale)
        rows.append(
            {
                "n": n,
                "d": d,
                "gap_mean": m.value,
                "se_mean": m.std_err,
                "gap_second_order": s.value,
                "se_second_order": s.std_err,
                "ratio": m.value / s.value,
                "contexts": contexts,
                "seed": seed,
            }
        )
    return rows


def dimension_scan(ds=(1, 2, 3, 5, 8), n: int = 50, contexts: int = 2000, seed: int = 0, lengthscale: float = 0.3) -> list[dict]:
    rows = []
    for d in ds:
        m = mc_gap_regression(d, n, Aggregation.MEAN, contexts, seed, lengthscale)
        s = mc_gap_regression(d, n, Aggregation.SECOND_ORDER, contexts, seed, lengthscale)
        rows.append(
            {
                "d": d,
                "n": n,
                "rep_dim_mean": d,
                "posterior_dof": d * (d + 1) // 2,
                "d_eff": effective_dimension(cosine_eigenvalues(lengthscale, d)),
                "gap_mean": m.value,
                "se_mean": m.std_err,
                "gap_second_order": s.value,
                "se_second_order": s.std_err,
                "contexts": contexts,
                "seed": seed,
            }
        )
    return rows
