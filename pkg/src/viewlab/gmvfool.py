"""Black-box attack over camera viewpoints via a learned Gaussian mixture.

Instead of searching for one worst-case viewpoint, the attack fits a
K-component Gaussian mixture in the unconstrained space u so that views
drawn from it (through the bounded tanh map) have high classifier loss.
The fit maximizes

    E_{u ~ mixture} [ L_cls(render(v)) - lam * log p(v) ],    v = a tanh(u) + b,

an expected-loss term plus a distribution-entropy bonus that keeps the
mixture from collapsing onto a single point. The classifier is only ever
queried for scalar losses (natural-evolution-strategies style), so no
gradients of the renderer or the model are needed.

Per iteration the attack draws q samples: first the Gaussian noise
vectors, then for each a component selected by the mixture weights. The
search-gradient estimates are averaged over all q draws, with each sample
contributing only to its selected component:

    g_omega_k = gamma_k * (L / omega_k - lam)
    g_mu_k    = gamma_k * (L * sigma_k r / omega_k - lam * 2 tanh(mu_k + sigma_k r))
    g_sigma_k = gamma_k * (L * sigma_k (r^2 - 1) / (2 omega_k)
                           + lam * (1/sigma_k - 2 r tanh(mu_k + sigma_k r)))

followed by a gradient-ascent step, a clamp on sigma, and a floor-
preserving renormalization of the weights.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp
from scipy.stats import qmc

from .errors import DegenerateWeight, NonFiniteInput
from .geometry import (
    VIEW_DIMS,
    Viewpoint,
    ViewpointBounds,
    log_sech2,
    make_bounds,
    tanh_transform,
    tanh_transform_array,
)
from .optim import AdamState, adam_init, adam_step, sgd_step

SIGMA_INIT = 0.5
SIGMA_MIN = 1e-3
SIGMA_MAX = 2.0
OMEGA_FLOOR = 1e-3

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class MixtureParams:
    """Weights (K,), means (K, 6), and per-axis deviations (K, 6) of the
    viewpoint mixture, all in the unconstrained space."""

    omega: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        for arr in (self.omega, self.mu, self.sigma):
            arr.setflags(write=False)
        k = self.omega.shape[0]
        if self.mu.shape != (k, VIEW_DIMS) or self.sigma.shape != (k, VIEW_DIMS):
            raise ValueError("mu and sigma must have shape (K, 6)")

    @property
    def K(self) -> int:
        return self.omega.shape[0]


@dataclass(frozen=True)
class ComponentSample:
    """One draw from the mixture: one-hot component selector, noise, and
    their images under the reparameterization, plus the queried loss."""

    gamma: np.ndarray
    r: np.ndarray
    u: np.ndarray
    v: np.ndarray
    loss: float

    @property
    def k(self) -> int:
        return int(np.argmax(self.gamma))


@dataclass(frozen=True)
class EntropyEstimate:
    value: float
    stderr: float
    n: int


@dataclass(frozen=True)
class AttackConfig:
    K: int = 15
    T: int = 50  # iterations
    q: int = 100  # oracle queries per iteration
    lam: float = 0.01  # entropy-bonus weight
    eta: float | None = None  # step size; None picks a per-optimizer default
    optimizer: str = "adam"
    seed: int = 0
    n_eval: int = 200  # samples for the post-hoc success rate
    entropy_samples: int = 10_000

    def __post_init__(self):
        if self.K < 1 or self.T < 0 or self.q < 1:
            raise ValueError("need K >= 1, T >= 0, q >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")

    @property
    def step_size(self) -> float:
        if self.eta is not None:
            return self.eta
        return 0.005 if self.optimizer == "adam" else 0.01


@dataclass
class AttackResult:
    mixture: MixtureParams
    objective_trace: list  # per-iteration mean of L - lam * log p(v)
    entropy_trace: list  # per-iteration -mean log p(v) over that batch
    best_loss_trace: list  # running best single-sample loss, per iteration
    best_loss: float
    best_viewpoint: Viewpoint | None
    query_count: int
    entropy: EntropyEstimate | None = None
    success_rate: float | None = None


def init_mixture(K: int, bounds: ViewpointBounds, seed: int) -> MixtureParams:
    """Uniform weights and unit-ish spread. A single component starts at the
    center of the box; multiple components start on a scrambled Halton set
    over [-1, 1]^6 so they cover the space without colliding.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    omega = np.full(K, 1.0 / K)
    if K == 1:
        mu = np.zeros((1, VIEW_DIMS))
    else:
        sampler = qmc.Halton(d=VIEW_DIMS, scramble=True, seed=seed)
        mu = 2.0 * sampler.random(K) - 1.0
    sigma = np.full((K, VIEW_DIMS), SIGMA_INIT)
    return MixtureParams(omega=omega, mu=mu, sigma=sigma)


def sample_gamma(omega: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One-hot component selector drawn with probabilities omega."""
    gamma = np.zeros(len(omega))
    gamma[rng.choice(len(omega), p=omega)] = 1.0
    return gamma


def reparam_sample(
    params: MixtureParams, gamma: np.ndarray, r: np.ndarray, bounds: ViewpointBounds
) -> tuple[np.ndarray, np.ndarray]:
    """u = mu_sel + sigma_sel * r for the component gamma selects, and the
    bounded image v of u."""
    k = int(np.argmax(gamma))
    u = params.mu[k] + params.sigma[k] * r
    return u, tanh_transform_array(u, bounds)


def log_density_u(params: MixtureParams, u: np.ndarray):
    """Mixture log-density at u; accepts (6,) or (n, 6), returns scalar or (n,)."""
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    u2 = np.atleast_2d(u)
    # (n, K): per-component diagonal-Gaussian log-likelihoods
    z = (u2[:, None, :] - params.mu[None, :, :]) / params.sigma[None, :, :]
    comp = -0.5 * np.sum(z * z + _LOG_2PI, axis=2) - np.sum(
        np.log(params.sigma), axis=1
    )
    out = logsumexp(comp + np.log(params.omega)[None, :], axis=1)
    return float(out[0]) if single else out


def log_density_v(params: MixtureParams, u: np.ndarray, bounds: ViewpointBounds):
    """log p(v) at v = a tanh(u) + b, via the change of variables
    log p(v) = log p(u) - sum_d log(a_d sech^2(u_d)).

    Takes u rather than v so saturated samples stay exactly invertible.
    Accepts (6,) or (n, 6); returns a scalar or (n,).
    """
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    u2 = np.atleast_2d(u)
    log_mix = np.atleast_1d(log_density_u(params, u2))
    log_jac = np.sum(np.log(bounds.a)[None, :] + log_sech2(u2), axis=1)
    out = log_mix - log_jac
    return float(out[0]) if single else out


def nes_gradients(
    params: MixtureParams,
    samples: list[ComponentSample],
    lam: float,
    bounds: ViewpointBounds,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Search-gradient estimates for (omega, mu, sigma), averaged over all
    q samples; each sample contributes only to the component it was drawn
    from. Ascent directions for the loss-plus-entropy objective.
    """
    if not samples:
        raise ValueError("need at least one sample")
    if np.any(params.omega < OMEGA_FLOOR):
        raise DegenerateWeight(
            f"mixture weight below {OMEGA_FLOOR}; gradients would blow up"
        )
    ks = np.array([s.k for s in samples])
    R = np.stack([s.r for s in samples])
    L = np.array([s.loss for s in samples])
    if not np.all(np.isfinite(L)):
        raise NonFiniteInput("oracle returned a non-finite loss")

    w = params.omega[ks]
    sd = params.sigma[ks]
    th = np.tanh(params.mu[ks] + sd * R)
    c_omega = L / w - lam
    c_mu = L[:, None] * sd * R / w[:, None] - lam * 2.0 * th
    c_sigma = L[:, None] * sd * (R**2 - 1.0) / (2.0 * w[:, None]) + lam * (
        1.0 / sd - 2.0 * R * th
    )

    g_omega = np.zeros_like(params.omega)
    g_mu = np.zeros_like(params.mu)
    g_sigma = np.zeros_like(params.sigma)
    # np.add.at accumulates duplicates in sample order: the reduction order
    # is fixed regardless of how the q oracle queries were scheduled
    np.add.at(g_omega, ks, c_omega)
    np.add.at(g_mu, ks, c_mu)
    np.add.at(g_sigma, ks, c_sigma)

    q = len(samples)
    return g_omega / q, g_mu / q, g_sigma / q


def _renormalize_weights(omega: np.ndarray) -> np.ndarray:
    """Project onto the simplex slice {w : w_k >= floor, sum w = 1},
    preserving the ordering of the weights."""
    k = len(omega)
    w = np.maximum(omega, OMEGA_FLOOR)
    w = w / w.sum()
    if np.all(w >= OMEGA_FLOOR):
        return w
    excess = np.maximum(w - OMEGA_FLOOR, 0.0)
    s = excess.sum()
    if s <= 0.0:
        return np.full(k, 1.0 / k)
    return OMEGA_FLOOR + excess * (1.0 - k * OMEGA_FLOOR) / s


def update_params(
    params: MixtureParams,
    grads: tuple[np.ndarray, np.ndarray, np.ndarray],
    eta: float,
    opt_state: AdamState | None = None,
    optimizer: str = "adam",
) -> MixtureParams:
    """Ascent step followed by the feasibility projections: sigma clamped to
    [SIGMA_MIN, SIGMA_MAX], weights floored and renormalized onto the
    simplex."""
    arrays = [params.omega.copy(), params.mu.copy(), params.sigma.copy()]
    if optimizer == "adam":
        if opt_state is None:
            raise ValueError("adam needs an opt_state (use adam_init)")
        omega, mu, sigma = adam_step(arrays, list(grads), opt_state, eta, maximize=True)
    elif optimizer == "sgd":
        omega, mu, sigma = sgd_step(arrays, list(grads), eta, maximize=True)
    else:
        raise ValueError(f"unknown optimizer {optimizer!r}")
    sigma = np.clip(sigma, SIGMA_MIN, SIGMA_MAX)
    omega = _renormalize_weights(omega)
    return MixtureParams(omega=omega, mu=mu, sigma=sigma)


def draw_batch(
    params: MixtureParams,
    q: int,
    bounds: ViewpointBounds,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Draw q reparameterized samples: noise first, then component picks.

    Returns (ks, R, U, V) with shapes (q,), (q, 6), (q, 6), (q, 6). The
    draw order (all noise, then all components) is part of the seeded
    reproducibility contract.
    """
    R = rng.standard_normal((q, VIEW_DIMS))
    ks = rng.choice(params.K, size=q, p=params.omega)
    U = params.mu[ks] + params.sigma[ks] * R
    V = tanh_transform_array(U, bounds)
    return ks, R, U, V


def gmvfool_attack(
    oracle,
    mixture0: MixtureParams,
    config: AttackConfig,
    bounds: ViewpointBounds,
    success_fn=None,
) -> AttackResult:
    """Run the mixture attack against a scalar loss oracle.

    ``oracle(Viewpoint) -> float`` is the only channel to the model. Uses
    exactly T * q oracle queries for the optimization itself. If
    ``success_fn(Viewpoint) -> bool`` is given, the final mixture is
    sampled ``config.n_eval`` more times (outside the query budget) to
    estimate the attack success rate.
    """
    rng = np.random.default_rng(config.seed)
    params = mixture0
    eta = config.step_size
    opt_state = (
        adam_init([params.omega, params.mu, params.sigma])
        if config.optimizer == "adam"
        else None
    )

    objective_trace = []
    entropy_trace = []
    best_loss_trace = []
    best_loss = -np.inf
    best_viewpoint = None
    queries = 0

    for _ in range(config.T):
        ks, R, U, V = draw_batch(params, config.q, bounds, rng)
        eye = np.eye(params.K)
        samples = []
        for j in range(config.q):
            loss = float(oracle(Viewpoint.from_array(V[j])))
            samples.append(
                ComponentSample(gamma=eye[ks[j]], r=R[j], u=U[j], v=V[j], loss=loss)
            )
            if loss > best_loss:
                best_loss = loss
                best_viewpoint = Viewpoint.from_array(V[j])
        queries += config.q

        logp = log_density_v(params, U, bounds)
        losses = np.array([s.loss for s in samples])
        objective_trace.append(float(np.mean(losses - config.lam * logp)))
        entropy_trace.append(float(-np.mean(logp)))
        best_loss_trace.append(float(best_loss))

        grads = nes_gradients(params, samples, config.lam, bounds)
        params = update_params(params, grads, eta, opt_state, config.optimizer)

    result = AttackResult(
        mixture=params,
        objective_trace=objective_trace,
        entropy_trace=entropy_trace,
        best_loss_trace=best_loss_trace,
        best_loss=float(best_loss) if best_viewpoint is not None else float("nan"),
        best_viewpoint=best_viewpoint,
        query_count=queries,
    )
    result.entropy = entropy_estimate(
        params, bounds, config.entropy_samples, np.random.default_rng(config.seed + 1)
    )
    if success_fn is not None:
        _, _, _, V = draw_batch(params, config.n_eval, bounds, rng)
        hits = sum(bool(success_fn(Viewpoint.from_array(v))) for v in V)
        result.success_rate = hits / config.n_eval
    return result


def entropy_estimate(
    params: MixtureParams,
    bounds: ViewpointBounds,
    n: int,
    rng: np.random.Generator,
) -> EntropyEstimate:
    """Monte Carlo estimate of the entropy of the bounded viewpoint
    distribution, H = -E[log p(v)], with its standard error."""
    _, _, U, _ = draw_batch(params, n, bounds, rng)
    logp = log_density_v(params, U, bounds)
    return EntropyEstimate(
        value=float(-np.mean(logp)),
        stderr=float(np.std(logp, ddof=1) / np.sqrt(n)),
        n=n,
    )


# -- persistence ---------------------------------------------------------------

def mixture_to_dict(params: MixtureParams) -> dict:
    return {
        "K": params.K,
        "omega": params.omega.tolist(),
        "mu": params.mu.tolist(),
        "sigma": params.sigma.tolist(),
    }


def mixture_from_dict(d: dict) -> MixtureParams:
    return MixtureParams(
        omega=np.array(d["omega"], dtype=float),
        mu=np.array(d["mu"], dtype=float),
        sigma=np.array(d["sigma"], dtype=float),
    )


def save_mixture(
    params: MixtureParams,
    path,
    bounds: ViewpointBounds | None = None,
    seed: int | None = None,
    iteration: int | None = None,
) -> None:
    blob = mixture_to_dict(params)
    if bounds is not None:
        blob["bounds"] = bounds.to_dict()
    if seed is not None:
        blob["seed"] = seed
    if iteration is not None:
        blob["iteration"] = iteration
    with open(path, "w") as f:
        json.dump(blob, f, indent=2)


def load_mixture(path) -> tuple[MixtureParams, dict]:
    """Returns the mixture plus the remaining metadata fields."""
    with open(path) as f:
        blob = json.load(f)
    params = mixture_from_dict(blob)
    meta = {k: v for k, v in blob.items() if k not in ("K", "omega", "mu", "sigma")}
    return params, meta


def save_trace(result: AttackResult, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "objective", "entropy", "best_loss", "queries"])
        q_per_iter = (
            result.query_count // len(result.objective_trace)
            if result.objective_trace
            else 0
        )
        rows = zip(result.objective_trace, result.entropy_trace, result.best_loss_trace)
        for i, (obj, ent, best) in enumerate(rows):
            writer.writerow([i, obj, ent, best, (i + 1) * q_per_iter])
