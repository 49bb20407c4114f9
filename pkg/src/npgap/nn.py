"""A small trainable latent neural process in plain numpy.

Architecture (fixed): encoder MLP ``[x, y] -> 64 -> 64 -> 64`` with ReLU
hidden layers, mean aggregation, linear recognition heads producing
``(mu_z, log sigma_z^2)`` with ``d_z = 32``, and decoder MLP
``[x*, z] -> 64 -> 64 -> (mu, nu)`` with variance ``softplus(nu) + 0.05``.

Gradients are written out by hand for this one graph and checked against
finite differences in :func:`gradient_check`.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, NumericalError, ParameterError
from .gp import ContextSet
from .kernel import KernelSpec, NoiseModel
from .seeding import rng_for

FORMAT_VERSION = 1
VARIANCE_FLOOR = 0.05
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Architecture:
    enc_hidden: tuple[int, ...] = (64, 64)
    rep_dim: int = 64
    latent_dim: int = 32
    dec_hidden: tuple[int, ...] = (64, 64)
    variance_floor: float = VARIANCE_FLOOR

    def to_json(self) -> dict:
        return {
            "enc_hidden": list(self.enc_hidden),
            "rep_dim": self.rep_dim,
            "latent_dim": self.latent_dim,
            "dec_hidden": list(self.dec_hidden),
            "variance_floor": self.variance_floor,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Architecture":
        return cls(tuple(d["enc_hidden"]), d["rep_dim"], d["latent_dim"], tuple(d["dec_hidden"]), d["variance_floor"])


def _softplus(v):
    return np.logaddexp(0.0, v)


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


# --- MLP pieces --------------------------------------------------------------


def _mlp_names(prefix: str, nlayers: int) -> list[tuple[str, str]]:
    return [(f"{prefix}_W{i}", f"{prefix}_b{i}") for i in range(nlayers)]


def _mlp_forward(params, names, h0):
    """Rest of an MLP given the first pre-activation ``h0``.

    ``names`` covers layers 1.. (layer 0 is computed by the caller).
    ReLU after every layer except the last. Returns output and the list of
    pre-activations, one per layer including layer 0.
    """
    pres = [h0]
    h = h0
    for Wn, bn in names:
        h = np.maximum(h, 0.0) @ params[Wn] + params[bn]
        pres.append(h)
    return h, pres


def _mlp_backward(params, names, pres, g_out, grads):
    """Back-propagate ``g_out`` through layers 1..; returns grad wrt layer-0 pre-activation."""
    g = g_out
    for k in range(len(names), 0, -1):
        Wn, bn = names[k - 1]
        a = np.maximum(pres[k - 1], 0.0)
        a2 = a.reshape(-1, a.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        grads[Wn] += a2.T @ g2
        grads[bn] += g2.sum(axis=0)
        g = (g @ params[Wn].T) * (pres[k - 1] > 0)
    return g


# --- the model ----------------------------------------------------------------


@dataclass
class LNPModel:
    params: dict[str, np.ndarray]
    arch: Architecture = field(default_factory=Architecture)
    seed: int | None = None
    trained_steps: int = 0
    kernel: dict | None = None

    # layer bookkeeping
    @property
    def enc_layers(self) -> list[tuple[str, str]]:
        return _mlp_names("enc", len(self.arch.enc_hidden) + 1)

    @property
    def dec_layers(self) -> list[tuple[str, str]]:
        return _mlp_names("dec", len(self.arch.dec_hidden) + 1)

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    @classmethod
    def init(cls, seed: int, arch: Architecture | None = None) -> "LNPModel":
        """He-uniform weights; zero biases except 0.01 on the first encoder and decoder layers."""
        arch = arch or Architecture()
        rng = rng_for(seed, "init")
        params: dict[str, np.ndarray] = {}

        def dense(prefix, sizes):
            for i in range(len(sizes) - 1):
                lim = math.sqrt(6.0 / sizes[i])
                params[f"{prefix}_W{i}"] = rng.uniform(-lim, lim, size=(sizes[i], sizes[i + 1]))
                params[f"{prefix}_b{i}"] = np.full(sizes[i + 1], 0.01 if i == 0 else 0.0)

        dense("enc", [2, *arch.enc_hidden, arch.rep_dim])
        lim = math.sqrt(3.0 / arch.rep_dim)
        params["rec_Wm"] = rng.uniform(-lim, lim, size=(arch.rep_dim, arch.latent_dim))
        params["rec_bm"] = np.zeros(arch.latent_dim)
        params["rec_Wv"] = rng.uniform(-lim, lim, size=(arch.rep_dim, arch.latent_dim))
        params["rec_bv"] = np.zeros(arch.latent_dim)
        dense("dec", [1 + arch.latent_dim, *arch.dec_hidden, 2])
        return cls(params, arch, seed=seed)

    def copy(self) -> "LNPModel":
        return LNPModel({k: v.copy() for k, v in self.params.items()}, self.arch, self.seed, self.trained_steps, self.kernel)

    # encoder -------------------------------------------------------------
    def encode(self, X, Y) -> np.ndarray:
        """Per-point features ``h(x, y)``; ``X`` and ``Y`` broadcast to a common shape."""
        X, Y = np.broadcast_arrays(np.asarray(X, dtype=float), np.asarray(Y, dtype=float))
        h, _ = self._encode(X, Y)
        return h

    def _encode(self, X, Y):
        p = self.params
        W0 = p["enc_W0"]
        h0 = X[..., None] * W0[0] + Y[..., None] * W0[1] + p["enc_b0"]
        return _mlp_forward(p, self.enc_layers[1:], h0)

    def recognize(self, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = self.params
        return r @ p["rec_Wm"] + p["rec_bm"], r @ p["rec_Wv"] + p["rec_bv"]

    def representation(self, X, Y) -> np.ndarray:
        """Mean-aggregated representation of one or a batch of contexts.

        ``X``, ``Y`` have shape ``(..., n)``; rows are put in a canonical
        (x, y) order before summation, so context order does not matter.
        """
        X, Y = np.broadcast_arrays(np.asarray(X, dtype=float), np.asarray(Y, dtype=float))
        if X.shape[-1] == 0:
            raise ParameterError("empty context")
        order = np.lexsort((Y, X), axis=-1)
        X = np.take_along_axis(X, order, axis=-1)
        Y = np.take_along_axis(Y, order, axis=-1)
        h = self.encode(X, Y)
        return h.sum(axis=-2) / X.shape[-1]

    # decoder -------------------------------------------------------------
    def decode(self, xs, z):
        """Predictive mean and variance at ``xs`` (shape ``(..., m)``) for latents ``z`` (shape ``(..., dz)``)."""
        mu, var, _ = self._decode(np.asarray(xs, dtype=float), np.asarray(z, dtype=float))
        return mu, var

    def _decode(self, xs, z):
        p = self.params
        W0 = p["dec_W0"]
        zt = z @ W0[1:]  # (..., H)
        h0 = xs[..., None] * W0[0] + zt[..., None, :] + p["dec_b0"]
        out, pres = _mlp_forward(p, self.dec_layers[1:], h0)
        nu = out[..., 1]
        return out[..., 0], _softplus(nu) + self.arch.variance_floor, pres


# --- ELBO and its gradient ------------------------------------------------------


@dataclass
class TaskBatch:
    """``B`` tasks of ``N`` points with context / target masks."""

    X: np.ndarray
    Y: np.ndarray
    ctx: np.ndarray
    tgt: np.ndarray

    def __post_init__(self):
        self.ctx = np.asarray(self.ctx, dtype=float)
        self.tgt = np.asarray(self.tgt, dtype=float)
        if np.any(self.ctx.sum(axis=1) == 0) or np.any(self.tgt.sum(axis=1) == 0):
            raise ParameterError("every task needs a nonempty context and target")

    @classmethod
    def from_sets(cls, context: ContextSet, target: ContextSet) -> "TaskBatch":
        if len(context) == 0 or len(target) == 0:
            raise ParameterError("ELBO needs nonempty context and target sets")
        X = np.concatenate([context.X, target.X])[None]
        Y = np.concatenate([context.y, target.y])[None]
        nc = len(context)
        m = np.zeros(X.shape)
        m[0, :nc] = 1.0
        return cls(X, Y, m, 1.0 - m)


def _gauss_kl_diag(mu_q, lv_q, mu_p, lv_p):
    """``KL(N(mu_q, e^lv_q) || N(mu_p, e^lv_p))`` summed over the last axis."""
    return 0.5 * np.sum(lv_p - lv_q + (np.exp(lv_q) + (mu_q - mu_p) ** 2) * np.exp(-lv_p) - 1.0, axis=-1)


def elbo_and_grad(model: LNPModel, batch: TaskBatch, eps: np.ndarray, need_grad: bool = True):
    """Per-task ELBO and the gradient of ``mean_b ELBO_b / N_b``.

    ``eps`` (shape ``(B, S, d_z)``) is the reparameterization noise, so the
    objective is a deterministic function of the parameters.
    Returns ``(elbo (B,), kl (B,), grads or None)``.
    """
    p = model.params
    X, Y, Mc, Mt = batch.X, batch.Y, batch.ctx, batch.tgt
    Ma = np.maximum(Mc, Mt)
    B, N = X.shape
    S = eps.shape[1]

    h, enc_pres = model._encode(X, Y)  # (B, N, R)
    nc = Mc.sum(axis=1, keepdims=True)
    na = Ma.sum(axis=1, keepdims=True)
    rC = np.einsum("bn,bnr->br", Mc, h) / nc
    rA = np.einsum("bn,bnr->br", Ma, h) / na
    muC, lvC = model.recognize(rC)
    muA, lvA = model.recognize(rA)
    sA = np.exp(0.5 * lvA)
    z = muA[:, None, :] + sA[:, None, :] * eps  # (B, S, dz)

    mu, var, dec_pres = model._decode(X[:, None, :], z)  # (B, S, N)
    resid = Y[:, None, :] - mu
    ll = -0.5 * (LOG_2PI + np.log(var) + resid**2 / var)
    rec = np.einsum("bsn,bn->b", ll, Mt) / S
    kl = _gauss_kl_diag(muA, lvA, muC, lvC)
    elbo = rec - kl
    if not need_grad:
        return elbo, kl, None

    grads = {k: np.zeros_like(v) for k, v in p.items()}
    gb = -1.0 / (B * na[:, 0])  # d loss / d elbo_b
    # reconstruction
    dll = (gb[:, None] * Mt)[:, None, :] / S  # (B, 1, N) broadcast over S
    dmu = dll * resid / var
    dvar = dll * 0.5 * (resid**2 / var**2 - 1.0 / var)
    nu_pre = dec_pres[-1][..., 1]
    dnu = dvar * _sigmoid(nu_pre)
    g_out = np.stack([np.broadcast_to(dmu, nu_pre.shape), dnu], axis=-1)
    if len(dec_pres) == 1:
        g0 = g_out
    else:
        g0 = _mlp_backward(p, model.dec_layers[1:], dec_pres, g_out, grads)
    # first decoder layer: h0 = x * W0[0] + z @ W0[1:] + b0
    grads["dec_b0"] += g0.sum(axis=(0, 1, 2))
    grads["dec_W0"][0] += np.einsum("bsnh,bn->h", g0, X)
    gz_t = g0.sum(axis=2)  # (B, S, H)
    grads["dec_W0"][1:] += z.reshape(-1, z.shape[-1]).T @ gz_t.reshape(-1, gz_t.shape[-1])
    dz = gz_t @ p["dec_W0"][1:].T  # (B, S, dz)
    dmuA = dz.sum(axis=1)
    dlvA = 0.5 * np.sum(dz * eps, axis=1) * sA
    # KL term enters the loss with sign -gb
    gk = (-gb)[:, None]
    inv_vC = np.exp(-lvC)
    diff = muA - muC
    dmuA += gk * diff * inv_vC
    dmuC = -gk * diff * inv_vC
    dlvA += gk * 0.5 * (np.exp(lvA) * inv_vC - 1.0)
    dlvC = gk * 0.5 * (1.0 - (np.exp(lvA) + diff**2) * inv_vC)
    # recognition heads
    grads["rec_Wm"] += rA.T @ dmuA + rC.T @ dmuC
    grads["rec_bm"] += dmuA.sum(axis=0) + dmuC.sum(axis=0)
    grads["rec_Wv"] += rA.T @ dlvA + rC.T @ dlvC
    grads["rec_bv"] += dlvA.sum(axis=0) + dlvC.sum(axis=0)
    drA = dmuA @ p["rec_Wm"].T + dlvA @ p["rec_Wv"].T
    drC = dmuC @ p["rec_Wm"].T + dlvC @ p["rec_Wv"].T
    dh = (Ma / na)[..., None] * drA[:, None, :] + (Mc / nc)[..., None] * drC[:, None, :]
    if len(enc_pres) == 1:
        g0 = dh
    else:
        g0 = _mlp_backward(p, model.enc_layers[1:], enc_pres, dh, grads)
    grads["enc_b0"] += g0.sum(axis=(0, 1))
    grads["enc_W0"][0] += np.einsum("bnh,bn->h", g0, X)
    grads["enc_W0"][1] += np.einsum("bnh,bn->h", g0, Y)
    return elbo, kl, grads


def elbo(model: LNPModel, context: ContextSet, target: ContextSet, z_samples: int = 1, seed: int = 0) -> float:
    """``E_{q(z|C u T)} log p(y_T | x_T, z) - KL(q(z|C u T) || q(z|C))`` for one task."""
    if z_samples < 1:
        raise ParameterError("z_samples must be >= 1")
    batch = TaskBatch.from_sets(context, target)
    eps = rng_for(seed, "z").standard_normal((1, z_samples, model.arch.latent_dim))
    value, _, _ = elbo_and_grad(model, batch, eps, need_grad=False)
    return float(value[0])


# --- training -------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 4000
    batch: int = 16
    lr: float = 1e-3
    context_size_range: tuple[int, int] = (5, 49)
    task_size: int = 64
    z_samples: int = 1
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1 or not self.lr > 0 or self.z_samples < 1:
            raise ParameterError("steps >= 0, batch >= 1, lr > 0 and z_samples >= 1 are required")
        lo, hi = self.context_size_range
        if not 1 <= lo <= hi < self.task_size:
            raise ParameterError(f"context sizes {lo}..{hi} must leave a nonempty target in a task of {self.task_size}")


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def sample_tasks(rng: np.random.Generator, spec: KernelSpec, noise: NoiseModel, config: TrainConfig) -> TaskBatch:
    """A batch of GP tasks split into a random-size context and the remaining targets."""
    B, N = config.batch, config.task_size
    X = rng.uniform(size=(B, N))
    K = np.stack([spec.matrix(x, x) for x in X])
    L = np.linalg.cholesky(K + noise.sigma_eps_sq * np.eye(N))
    Y = np.einsum("bij,bj->bi", L, rng.standard_normal((B, N)))
    lo, hi = config.context_size_range
    m = rng.integers(lo, hi + 1, size=B)
    perm = np.argsort(rng.uniform(size=(B, N)), axis=1)
    ctx = (np.argsort(perm, axis=1) < m[:, None]).astype(float)
    return TaskBatch(X, Y, ctx, 1.0 - ctx)


def train(
    config: TrainConfig,
    gp_spec: KernelSpec,
    noise: NoiseModel,
    seed: int,
    arch: Architecture | None = None,
    log_every: int = 0,
    history: list | None = None,
) -> LNPModel:
    """Adam on the negative ELBO (per data point), deterministic given ``seed``."""
    model = LNPModel.init(seed, arch)
    model.kernel = {"family": gp_spec.family.value, "lengthscale": gp_spec.lengthscale,
                    "signal_variance": gp_spec.signal_variance, "nu": gp_spec.nu,
                    "sigma_eps_sq": noise.sigma_eps_sq}
    if config.steps == 0:
        return model
    rng = rng_for(seed, "train")
    opt = Adam(model.params, config.lr, config.betas, config.adam_eps)
    dz = model.arch.latent_dim
    for step in range(config.steps):
        batch = sample_tasks(rng, gp_spec, noise, config)
        eps = rng.standard_normal((config.batch, config.z_samples, dz))
        value, _, grads = elbo_and_grad(model, batch, eps)
        loss = -float(np.mean(value / batch.X.shape[1]))
        if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise NumericalError(f"non-finite loss or gradient at step {step} (loss = {loss})")
        opt.step(model.params, grads)
        if history is not None:
            history.append(loss)
        if log_every and step % log_every == 0:
            print(f"step {step:5d}  loss {loss:.4f}")
    model.trained_steps = config.steps
    return model


# --- evaluation -------------------------------------------------------------------


def predictive_moments_batch(model: LNPModel, X, Y, x_star: float, eps: np.ndarray) -> np.ndarray:
    """Law-of-total-variance predictive variance for a batch of label vectors.

    ``X`` has shape ``(n,)`` or ``(R, n)``, ``Y`` shape ``(R, n)``; ``eps``
    (shape ``(S, d_z)``) is shared by every context in the batch.
    """
    r = model.representation(X, Y)  # (R, rep)
    mu_z, lv_z = model.recognize(r)
    z = mu_z[:, None, :] + np.exp(0.5 * lv_z)[:, None, :] * eps[None]
    m, v = model.decode(np.array([x_star]), z)  # (R, S, 1)
    m, v = m[..., 0], v[..., 0]
    return v.mean(axis=1) + m.var(axis=1, ddof=1)


def predictive_variance_mc(model: LNPModel, context: ContextSet, x_star: float, z_samples: int = 64, seed: int = 0) -> float:
    """``E_z[Var(y*|z)] + Var_z[E(y*|z)]`` over ``z ~ q(z|C)``."""
    if z_samples < 2:
        raise ParameterError("z_samples must be >= 2")
    eps = rng_for(seed, "z").standard_normal((z_samples, model.arch.latent_dim))
    return float(predictive_moments_batch(model, context.X[None], context.y[None], x_star, eps)[0])


# --- gradient check -----------------------------------------------------------------


@dataclass(frozen=True)
class GradientCheckReport:
    max_rel_error: float
    checked: int
    failures: list
    per_group: dict

    @property
    def passed(self) -> bool:
        return not self.failures


def gradient_check(
    model: LNPModel,
    batch: TaskBatch,
    eps: np.ndarray,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    coords_per_group: int | None = None,
    seed: int = 0,
    min_grad: float = 1e-6,
) -> GradientCheckReport:
    """Compare the hand-derived gradient with central finite differences.

    ``eps`` freezes the latent noise. With ``coords_per_group`` only a random
    subset of coordinates of each parameter array is checked.
    """
    if batch.X.shape[1] > 4:
        raise ParameterError("gradient_check expects small tasks (at most 4 points each)")
    _, _, grads = elbo_and_grad(model, batch, eps)
    B = batch.X.shape[0]
    na = np.maximum(batch.ctx, batch.tgt).sum(axis=1)

    def objective():
        v, _, _ = elbo_and_grad(model, batch, eps, need_grad=False)
        return -float(np.sum(v / na) / B)

    rng = rng_for(seed, "init", 1)
    failures, per_group, worst, checked = [], {}, 0.0, 0
    for name, arr in model.params.items():
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if coords_per_group is not None and flat.size > coords_per_group:
            idx = np.sort(rng.choice(flat.size, coords_per_group, replace=False))
        g_an = grads[name].reshape(-1)
        group_worst = 0.0
        for i in idx:
            old = flat[i]
            flat[i] = old + step
            fp = objective()
            flat[i] = old - step
            fm = objective()
            flat[i] = old
            g_fd = (fp - fm) / (2.0 * step)
            scale = max(abs(g_an[i]), abs(g_fd))
            if scale <= min_grad:
                continue
            checked += 1
            rel = abs(g_an[i] - g_fd) / scale
            group_worst = max(group_worst, rel)
            if rel > tolerance:
                failures.append((name, int(i), float(g_an[i]), float(g_fd), float(rel)))
        per_group[name] = group_worst
        worst = max(worst, group_worst)
    return GradientCheckReport(worst, checked, failures, per_group)


# --- checkpoints ---------------------------------------------------------------------


def save_checkpoint(model: LNPModel, path) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "architecture": model.arch.to_json(),
        "seed": model.seed,
        "trained_steps": model.trained_steps,
        "kernel": model.kernel,
    }
    arrays = {f"param__{k}": v for k, v in model.params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> LNPModel:
    expected = f"expected an npz checkpoint with format_version {FORMAT_VERSION}"
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint {path} not found ({expected})")
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"]))
            params = {k[len("param__"):]: data[k].copy() for k in data.files if k.startswith("param__")}
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc} ({expected})") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint {path} has format_version {meta.get('format_version')!r}; {expected}")
    arch = Architecture.from_json(meta["architecture"])
    ref = LNPModel.init(0, arch).params
    if set(ref) != set(params) or any(ref[k].shape != params[k].shape for k in ref):
        raise CheckpointError(f"checkpoint {path} parameters do not match its architecture ({expected})")
    return LNPModel(params, arch, meta.get("seed"), int(meta.get("trained_steps", 0)), meta.get("kernel"))
