"""Label-contamination and Mercer-alignment experiments on a trained LNP, and bound evaluation."""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .amortization import power_law_fit
from .errors import ParameterError
from .gp import sample_gp, variance_bounds
from .kernel import KernelSpec, NoiseModel
from .lnp_analytic import BoundConstants
from .mercer import MercerBasis, bottleneck_rate, nystrom_eigendecomposition, tail_sum
from .nn import LNPModel, predictive_moments_batch
from .seeding import rng_for

EVAL_Z_SAMPLES = 64


# --- label contamination ----------------------------------------------------------


@dataclass(frozen=True)
class ContaminationResult:
    n: int
    var_full: float
    var_noise: float
    resamples: int
    location_sets: int
    location_hashes: tuple[str, ...] = ()
    noise_location_hashes: tuple[str, ...] = ()

    @property
    def floor_noise_ratio(self) -> float:
        return self.var_full / self.var_noise if self.var_noise > 0 else math.inf


def location_hash(X: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(X, dtype=np.float64).tobytes()).hexdigest()[:16]


def _variance_across_labels(model, X, Y, x_star, eps, chunk: int) -> float:
    out = np.concatenate(
        [predictive_moments_batch(model, X, Y[i : i + chunk], x_star, eps) for i in range(0, Y.shape[0], chunk)]
    )
    return float(np.var(out, ddof=1))


def contamination_experiment(
    model: LNPModel,
    gp_spec: KernelSpec,
    noise: NoiseModel,
    n: int,
    R: int = 400,
    sets: int = 30,
    x_star: float = 0.5,
    seed: int = 0,
    z_samples: int = EVAL_Z_SAMPLES,
    threads: int = 1,
    require_trained: bool = True,
) -> ContaminationResult:
    """Variance of the LNP predictive variance across label resamples at fixed locations.

    Full protocol: ``y = f + eps`` with ``f`` and ``eps`` fresh per resample.
    Noise-only protocol: one ``f0`` per location set, fresh ``eps`` per resample.
    Both protocols use the same location sets and the same latent noise, so a
    model whose variance ignores labels scores exactly zero.
    """
    if require_trained and model.trained_steps <= 0:
        raise ParameterError("model carries no training metadata (trained_steps = 0); pass require_trained=False to override")
    if R < 2:
        raise ParameterError("at least 2 label resamples are needed for a variance")
    if n < 2 or sets < 1:
        raise ParameterError("n >= 2 and sets >= 1 are required")
    s_eps = math.sqrt(noise.sigma_eps_sq)
    chunk = max(1, 200_000 // n)

    def one_set(s):
        X = rng_for(seed, "locations", n, s).uniform(size=n)
        eps_z = rng_for(seed, "z", n, s).standard_normal((z_samples, model.arch.latent_dim))
        rng_full = rng_for(seed, "full", n, s)
        F = sample_gp(gp_spec, X, rng_full, size=R)
        Y_full = F + s_eps * rng_full.standard_normal((R, n))
        rng_noise = rng_for(seed, "noise_only", n, s)
        f0 = sample_gp(gp_spec, X, rng_for(seed, "f0", n, s))
        Y_noise = f0 + s_eps * rng_noise.standard_normal((R, n))
        vf = _variance_across_labels(model, X, Y_full, x_star, eps_z, chunk)
        vn = _variance_across_labels(model, X, Y_noise, x_star, eps_z, chunk)
        return vf, vn, location_hash(X), location_hash(X)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(one_set, range(sets)))
    else:
        out = [one_set(s) for s in range(sets)]
    vf = np.array([o[0] for o in out])
    vn = np.array([o[1] for o in out])
    return ContaminationResult(
        n, float(vf.mean()), float(vn.mean()), R, sets, tuple(o[2] for o in out), tuple(o[3] for o in out)
    )


def contamination_slopes(results, ns=(5, 10, 20, 50, 100)) -> tuple[float, float]:
    """Power-law slopes ``(noise-only, full)`` over the early-``n`` range."""
    sel = [r for r in results if r.n in set(ns)]
    if len(sel) < 3:
        raise ParameterError("need results for at least 3 values of n in the fit range")
    sel.sort(key=lambda r: r.n)
    xs = [r.n for r in sel]
    return power_law_fit(xs, [r.var_noise for r in sel]), power_law_fit(xs, [r.var_full for r in sel])


# --- Mercer alignment ------------------------------------------------------------


@dataclass(frozen=True)
class AlignmentResult:
    lengthscale: float
    per_axis_r2: list  # (j, lambda_j, R2_j)
    min_cosines: list  # (d, cos theta_min)
    rank: int
    mode: str


def encoder_grid_features(model: LNPModel, grid: np.ndarray, mode: str = "y-zero", gp_spec=None, noise=None,
                          gp_samples: int = 200, seed: int = 0) -> np.ndarray:
    """Encoder features on the grid, ``(N, rep_dim)``.

    ``y-zero`` reads ``h(x, 0)``. ``marginal`` averages ``h(x, y)`` over joint
    GP draws of ``y`` on the grid (plus observation noise).
    """
    if mode == "y-zero":
        return model.encode(grid, np.zeros_like(grid))
    if mode != "marginal":
        raise ParameterError(f"unknown encoder mode {mode!r}")
    if gp_spec is None:
        raise ParameterError("marginal mode needs the GP kernel")
    rng = rng_for(seed, "marginal")
    F = sample_gp(gp_spec, grid, rng, size=gp_samples)
    if noise is not None and noise.sigma_eps_sq > 0:
        F = F + math.sqrt(noise.sigma_eps_sq) * rng.standard_normal(F.shape)
    acc = np.zeros((grid.size, model.arch.rep_dim))
    for row in F:
        acc += model.encode(grid, row)
    return acc / gp_samples


def orthonormal_basis(F: np.ndarray, rel_tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the column span of ``F`` by pivoted QR, truncated at numerical rank.

    Rank counts the pivots with ``|R_kk| > rel_tol * sigma_max(F)``.
    """
    if F.shape[1] == 0:
        return np.zeros((F.shape[0], 0))
    Q, Rm, _ = scipy.linalg.qr(F, mode="economic", pivoting=True)
    smax = np.linalg.norm(F, 2)
    if smax == 0:
        return np.zeros((F.shape[0], 0))
    rank = int(np.sum(np.abs(np.diag(Rm)) > rel_tol * smax))
    return Q[:, :rank]


def subspace_alignment(features: np.ndarray, eigvecs: np.ndarray, rel_tol: float = 1e-10):
    """Per-axis ``R^2_j`` and ``cos theta_min(d)`` for ``d = 1..J``.

    Both inputs are grid-sampled functions ``(N, k)``; the discrete uniform
    inner product ``(1/N) sum_g`` is used throughout (the common factor does
    not change angles).
    """
    Q = orthonormal_basis(features, rel_tol)
    E, _ = np.linalg.qr(eigvecs)
    norms = np.sum(eigvecs**2, axis=0)
    P = Q.T @ eigvecs
    r2 = np.clip(np.sum(P**2, axis=0) / norms, 0.0, 1.0)
    C = Q.T @ E
    cosines = []
    for d in range(1, E.shape[1] + 1):
        s = np.linalg.svd(C[:, :d], compute_uv=False)
        cosines.append(float(np.clip(s.min() if s.size == d else 0.0, 0.0, 1.0)))
    return r2, np.array(cosines), Q.shape[1]


def alignment_experiment(
    model: LNPModel,
    gp_spec: KernelSpec,
    grid_N: int = 2000,
    J: int = 16,
    mode: str = "y-zero",
    seed: int = 0,
    noise: NoiseModel | None = None,
    gp_samples: int = 200,
    basis: MercerBasis | None = None,
    require_trained: bool = True,
) -> AlignmentResult:
    if require_trained and model.trained_steps <= 0:
        raise ParameterError("model carries no training metadata (trained_steps = 0)")
    if grid_N < 10 * J:
        raise ParameterError(f"grid of {grid_N} points cannot resolve {J} eigenfunctions")
    basis = basis or nystrom_eigendecomposition(gp_spec, grid_N, J)
    grid = basis.grid
    H = encoder_grid_features(model, grid, mode, gp_spec, noise or NoiseModel(), gp_samples, seed)
    r2, cos, rank = subspace_alignment(H, basis.grid_values[:, :J])
    lam = basis.eigenvalues
    return AlignmentResult(
        gp_spec.lengthscale,
        [(j + 1, float(lam[j]), float(r2[j])) for j in range(J)],
        [(d + 1, float(cos[d])) for d in range(J)],
        rank,
        mode,
    )


def recovery_edge(result: AlignmentResult, r2_threshold: float = 0.9) -> int:
    """Largest ``j`` with ``R^2_j`` above the threshold (0 if none)."""
    js = [j for j, _, r2 in result.per_axis_r2 if r2 > r2_threshold]
    return max(js) if js else 0


def spectrum_edge(result: AlignmentResult, level: float) -> int:
    js = [j for j, lam, _ in result.per_axis_r2 if lam > level]
    return max(js) if js else 0


# --- bounds -------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundReport:
    label_signal: float
    label_noise: float
    bottleneck_tail: float
    prefactor: float
    sigma_l_sq: float
    truncation_rate: float
    estimation_rate: float
    symbolic: dict

    @property
    def label_total(self) -> float:
        return self.label_signal + self.label_noise

    def as_dict(self) -> dict:
        return {
            "label_signal": self.label_signal,
            "label_noise": self.label_noise,
            "label_total": self.label_total,
            "bottleneck_tail": self.bottleneck_tail,
            "prefactor": self.prefactor,
            "sigma_l_sq": self.sigma_l_sq,
            "truncation_rate": self.truncation_rate,
            "estimation_rate": self.estimation_rate,
            **{f"symbol_{k}": v for k, v in self.symbolic.items()},
        }


def evaluate_bounds(constants: BoundConstants, gp_spec: KernelSpec, noise: NoiseModel, basis: MercerBasis,
                    d: int, n: int, x_star: float) -> BoundReport:
    """Computable pieces of the combined KL bound.

    Label terms ``Lambda^2 kappa`` and ``Lambda^2 sigma_eps^2 / n``, the tail
    ``tau_d(x*)``, the prefactor ``3 / (2 sigma_l^4)``, and constant-free rates
    for the terms whose constants are not known.
    """
    if n < 1:
        raise ParameterError("n must be >= 1")
    if not noise.sigma_eps_sq > 0:
        raise ParameterError("bounds need sigma_eps^2 > 0")
    lam2 = constants.Lambda**2
    kappa = gp_spec.kappa
    sl2 = variance_bounds(gp_spec, noise).lower
    nu = gp_spec.nu if gp_spec.nu is not None else None
    rate = bottleneck_rate(gp_spec.family, d, gp_spec.lengthscale, nu)
    return BoundReport(
        label_signal=lam2 * kappa,
        label_noise=lam2 * noise.sigma_eps_sq / n,
        bottleneck_tail=tail_sum(basis, d, x_star),
        prefactor=3.0 / (2.0 * sl2 * sl2),
        sigma_l_sq=sl2,
        truncation_rate=rate,
        estimation_rate=d * d / n,
        symbolic={"bottleneck": "C_S * tau_d", "estimation": "O(d^2/n) + R_info", "amortization": "A(d, n)"},
    )
