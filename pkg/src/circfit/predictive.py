"""Posterior simulation, predictive distributions, rolling forecasts and
leave-one-out metrics.

Everything here consumes a finished FitResult: hyper vectors are drawn from
the exploration weights, latent vectors from the matching conditional
Gaussians, and responses from the block families.  Forecasting extends the
latent components past the fitted range (ar2 by its exact conditional given
the last two states, cyclic components by indexing modulo their period, iid
effects by fresh draws) and composes predictors from whatever future
covariates the task declares as observed.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp
from scipy.stats import gaussian_kde

from .circular import lavm_sample
from .latent import pacf_to_ar2
from .likelihoods import loglik
from .model import _expand_terms
from .priors import ConfigurationError

__all__ = [
    "PosteriorSample",
    "ForecastTask",
    "ForecastResult",
    "BlockCpo",
    "CpoResult",
    "sample_posterior",
    "posterior_predictive",
    "forecast",
    "cpo",
]


@dataclass
class PosteriorSample:
    """One joint draw: hyper point, latent vector and derived predictors."""

    theta_internal: np.ndarray
    theta: dict
    latent: np.ndarray
    predictors: dict


@dataclass(frozen=True)
class ForecastTask:
    """A rolling multi-step forecasting request.

    ``origins`` are time indices; each origin t produces forecasts for steps
    t+1 .. t+horizon.  ``future_covariates`` lists the inputs assumed
    observed over the forecast range, each as an array indexed by absolute
    time; covariates not listed fall back to their fitted values and run out
    at the end of the sample.
    """

    horizon: int
    origins: tuple
    future_covariates: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigurationError(
                f"forecast horizon must be at least 1, got {self.horizon}"
            )
        origins = tuple(int(t) for t in self.origins)
        if not origins:
            raise ConfigurationError("forecast needs at least one origin")
        if min(origins) < 1:
            raise ConfigurationError(
                "forecast origins must leave at least two states behind them"
            )
        object.__setattr__(self, "origins", origins)
        object.__setattr__(
            self,
            "future_covariates",
            {k: np.asarray(v, dtype=float) for k, v in self.future_covariates.items()},
        )


@dataclass
class ForecastResult:
    """Per-block forecast summaries, arrays shaped (origins, horizon)."""

    origins: tuple
    horizon: int
    blocks: dict
    n_draws: int


@dataclass
class BlockCpo:
    cpo: np.ndarray
    log_cpo: np.ndarray
    ess: np.ndarray
    flagged: np.ndarray
    gm_cpo: float
    looic: float


@dataclass
class CpoResult:
    blocks: dict
    joint: Optional[BlockCpo]
    joint_blocks: Optional[tuple]
    n_draws: int


def _point_batches(fit, n, rng):
    """Allocate n joint draws over the exploration points by weight and
    return (theta_internal, theta, latent matrix) per visited point."""
    weights = np.array([pt.weight for pt in fit.points])
    counts = rng.multinomial(n, weights / weights.sum())
    batches = []
    for pt, count in zip(fit.points, counts):
        if count == 0:
            continue
        theta = fit.model.theta_natural(pt.theta_internal)
        batches.append((pt.theta_internal, theta, pt.approx.sample(rng, count)))
    return batches


def sample_posterior(fit, n, rng):
    """Draw n joint posterior samples, deterministic for a given generator."""
    model = fit.model
    out = []
    for theta_internal, theta, latents in _point_batches(fit, n, rng):
        designs = {
            name: model.block_matrix(name, theta) for name in model.blocks
        }
        for w in latents:
            out.append(
                PosteriorSample(
                    theta_internal=theta_internal,
                    theta=theta,
                    latent=w,
                    predictors={
                        name: designs[name] @ w for name in designs
                    },
                )
            )
    return out


def _draw_responses(rng, family, eta, hyper):
    if family == "gaussian":
        return rng.normal(eta, hyper**-0.5)
    if family == "poisson":
        return rng.poisson(np.exp(eta)).astype(float)
    if family == "gamma":
        return rng.gamma(hyper, np.exp(eta) / hyper)
    if family == "lavm":
        return lavm_sample(rng, eta, hyper)
    raise ConfigurationError(f"unknown likelihood family {family!r}")


def _chain_factor(theta, term, chain):
    factor = 1.0
    for h in chain:
        factor *= theta[h]
    if term.scale is not None:
        factor *= theta[term.scale]
    return factor


def _expanded_terms(model):
    spec = model.spec
    block_by_name = {b.name: b for b in spec.blocks}
    return {
        b.name: _expand_terms(spec, b, block_by_name, []) for b in spec.blocks
    }


def _new_design_eta(model, block_name, theta, w_batch, covariates, indices, m):
    """Predictors for m new observations of a block, one row per latent draw.

    covariates: name -> length-m array for every fixed-effect term involved;
    indices: component name -> length-m node index array (cyclic components
    default to position modulo period).
    """
    covariates = covariates or {}
    indices = indices or {}
    expanded = _expanded_terms(model)
    eta = np.zeros((w_batch.shape[0], m))
    for term, chain in expanded[block_name]:
        factor = _chain_factor(theta, term, chain)
        if term.kind == "intercept":
            eta += factor * w_batch[:, [model.effect_nodes[term.ref]]]
        elif term.kind == "fixed":
            z = covariates.get(term.covariate)
            if z is None:
                raise ConfigurationError(
                    f"prediction for block {block_name!r} needs covariate "
                    f"{term.covariate!r}"
                )
            z = np.asarray(z, dtype=float)
            if z.size != m:
                raise ConfigurationError(
                    f"covariate {term.covariate!r} has length {z.size}, "
                    f"expected {m}"
                )
            eta += factor * w_batch[:, [model.effect_nodes[term.ref]]] * z
        else:
            comp = model.components[term.ref]
            idx = indices.get(term.ref)
            if idx is None and comp.kind == "cyclic_rw2":
                idx = np.arange(m) % comp.period
            if idx is None:
                raise ConfigurationError(
                    f"prediction for block {block_name!r} needs node indices "
                    f"for component {term.ref!r}"
                )
            idx = np.asarray(idx, dtype=int)
            if idx.size != m:
                raise ConfigurationError(
                    f"index map for component {term.ref!r} has length "
                    f"{idx.size}, expected {m}"
                )
            if idx.min() < 0 or idx.max() >= comp.dimension:
                raise ConfigurationError(
                    f"component {term.ref!r} has no node for the requested "
                    f"index (dimension {comp.dimension}); future positions "
                    f"need a forecast task"
                )
            eta += factor * w_batch[:, model.comp_offsets[term.ref] + idx]
    return eta


def _density_summary(draws, circular, bins=60, grid_size=257):
    pooled = np.asarray(draws, dtype=float).ravel()
    if circular:
        lo, hi = -np.pi, np.pi
        grid = np.linspace(lo, hi, grid_size)
        padded = np.concatenate(
            [pooled - 2.0 * np.pi, pooled, pooled + 2.0 * np.pi]
        )
        dens = 3.0 * gaussian_kde(padded)(grid)
    else:
        lo, hi = float(pooled.min()), float(pooled.max())
        span = max(hi - lo, 1e-12)
        grid = np.linspace(lo - 0.1 * span, hi + 0.1 * span, grid_size)
        dens = gaussian_kde(pooled)(grid)
    hist, edges = np.histogram(
        pooled, bins=bins, range=(lo, hi), density=True
    )
    return {
        "hist_edges": edges,
        "hist_density": hist,
        "grid": grid,
        "density": dens,
    }


def posterior_predictive(fit, block, new_inputs=None, n=300, rng=None):
    """Simulated response distribution for one block.

    new_inputs: None replicates the fitted observations; otherwise a dict
    with "size" plus "covariates" and "indices" entries as needed by the
    block's terms.  Returns the draw matrix (one row per posterior sample)
    together with histogram and density-curve series.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    model = fit.model
    blk = model.blocks[block]
    out = []
    for _, theta, latents in _point_batches(fit, n, rng):
        if new_inputs is None:
            eta = latents @ model.block_matrix(block, theta).T
        else:
            eta = _new_design_eta(
                model,
                block,
                theta,
                latents,
                new_inputs.get("covariates"),
                new_inputs.get("indices"),
                int(new_inputs["size"]),
            )
        hyper = theta[blk.hyper] if blk.hyper else None
        out.append(_draw_responses(rng, blk.family, eta, hyper))
    draws = np.vstack(out)
    summary = _density_summary(draws, circular=blk.family == "lavm")
    summary["draws"] = draws
    return summary


def _extend_component(model, comp, theta, w_batch, t0, horizon, rng):
    """Component values at absolute times t0+1 .. t0+horizon, one row per
    draw.  Cyclic components repeat their fitted cycle; iid effects are
    exchangeable so future ones are fresh; ar2 runs its conditional
    recursion forward from the last state at or before the origin."""
    off = model.comp_offsets[comp.name]
    S = w_batch.shape[0]
    steps = t0 + 1 + np.arange(horizon)
    if comp.kind == "cyclic_rw2":
        return w_batch[:, off + steps % comp.period]
    tau_c = theta[comp.precision_hyper] if comp.precision_hyper else 1.0
    if comp.kind == "iid":
        return rng.normal(0.0, tau_c**-0.5, (S, horizon))
    if comp.kind == "ar2":
        p1 = theta[comp.pacf_hypers[0]]
        p2 = theta[comp.pacf_hypers[1]]
        a1, a2 = pacf_to_ar2(p1, p2)
        innov_sd = np.sqrt((1.0 - p1 * p1) * (1.0 - p2 * p2) / tau_c)
        start = min(t0, comp.size - 1)
        prev = w_batch[:, off + start].copy()
        prev2 = w_batch[:, off + start - 1].copy()
        out = np.empty((S, horizon))
        for t in range(start + 1, t0 + horizon + 1):
            cur = a1 * prev + a2 * prev2
            cur += innov_sd * rng.standard_normal(S)
            prev2, prev = prev, cur
            if t > t0:
                out[:, t - t0 - 1] = cur
        return out
    raise ConfigurationError(
        f"component {comp.name!r} ({comp.kind}) cannot be extended past "
        "the fitted range"
    )


def _future_covariate(model, task, name, steps):
    fut = task.future_covariates.get(name)
    if fut is not None:
        if steps.max() >= fut.size:
            raise ConfigurationError(
                f"covariate {name!r} runs out at index {fut.size - 1}, "
                f"forecast needs index {steps.max()}"
            )
        return fut[steps]
    z = model.spec.covariates[name]
    if steps.max() >= z.size:
        raise ConfigurationError(
            f"forecasting needs future values of covariate {name!r} "
            f"(have {z.size}, need index {steps.max()})"
        )
    return z[steps]


def forecast(fit, task, rng=None, n_draws=300):
    """Rolling forecasts: per block, per origin, per step predictive means
    and central 95% intervals.  Draws are coherent across blocks within each
    posterior sample, so shared latent paths transfer between responses."""
    if rng is None:
        rng = np.random.default_rng(0)
    model = fit.model
    expanded = _expanded_terms(model)
    origins = task.origins
    H = task.horizon

    needed = set()
    for name in model.blocks:
        for term, _ in expanded[name]:
            if term.kind == "component":
                comp = model.components[term.ref]
                if term.indices is not None and comp.kind != "cyclic_rw2":
                    raise ConfigurationError(
                        f"block {name!r} maps component {term.ref!r} through "
                        "explicit indices; its future positions are undefined"
                    )
                needed.add(term.ref)

    draws = {
        name: np.empty((n_draws, len(origins), H)) for name in model.blocks
    }
    row = 0
    for _, theta, latents in _point_batches(fit, n_draws, rng):
        S = latents.shape[0]
        for oi, t0 in enumerate(origins):
            ext = {
                cname: _extend_component(
                    model, model.components[cname], theta, latents, t0, H, rng
                )
                for cname in sorted(needed)
            }
            steps = t0 + 1 + np.arange(H)
            for name, blk in model.blocks.items():
                eta = np.zeros((S, H))
                for term, chain in expanded[name]:
                    factor = _chain_factor(theta, term, chain)
                    if term.kind == "intercept":
                        eta += factor * latents[:, [model.effect_nodes[term.ref]]]
                    elif term.kind == "fixed":
                        z = _future_covariate(model, task, term.covariate, steps)
                        eta += (
                            factor
                            * latents[:, [model.effect_nodes[term.ref]]]
                            * z[None, :]
                        )
                    else:
                        eta += factor * ext[term.ref]
                hyper = theta[blk.hyper] if blk.hyper else None
                draws[name][row : row + S, oi] = _draw_responses(
                    rng, blk.family, eta, hyper
                )
        row += S

    blocks = {}
    for name, blk in model.blocks.items():
        d = draws[name]
        if blk.family == "lavm":
            mean = np.arctan2(
                np.mean(np.sin(d), axis=0), np.mean(np.cos(d), axis=0)
            )
        else:
            mean = np.mean(d, axis=0)
        q = np.quantile(d, [0.025, 0.975], axis=0)
        blocks[name] = {"mean": mean, "q025": q[0], "q975": q[1]}
    return ForecastResult(
        origins=origins, horizon=H, blocks=blocks, n_draws=n_draws
    )


def _harmonic_cpo(logu):
    """CPO from log importance weights (draws, observations): truncate at
    the 99.9th percentile per observation, then invert the weight mean."""
    S = logu.shape[0]
    cap = np.quantile(logu, 0.999, axis=0)
    lu = np.minimum(logu, cap[None, :])
    lse = logsumexp(lu, axis=0)
    log_cpo = np.log(S) - lse
    ess = np.exp(2.0 * lse - logsumexp(2.0 * lu, axis=0))
    flagged = ess < 10.0
    return BlockCpo(
        cpo=np.exp(log_cpo),
        log_cpo=log_cpo,
        ess=ess,
        flagged=flagged,
        gm_cpo=float(np.exp(np.mean(log_cpo))),
        looic=float(-2.0 * np.sum(log_cpo)),
    )


def cpo(fit, n_draws=4000, rng=None, joint=None):
    """Leave-one-out metrics for every block, via importance weighting of
    posterior draws with weights proportional to 1/p(y_i | eta_i, theta).

    joint: optional pair of block names whose observations leave together;
    their weights multiply observation-wise.  Observations whose weight
    effective sample size falls below 10 are flagged.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    model = fit.model
    parts = {name: [] for name in model.blocks}
    for _, theta, latents in _point_batches(fit, n_draws, rng):
        for name, blk in model.blocks.items():
            A = model.block_matrix(name, theta)
            eta = latents @ A.T
            hyper = theta[blk.hyper] if blk.hyper else None
            value, _, _ = loglik(blk.family, blk.responses, eta, hyper)
            parts[name].append(-value)
    logu = {name: np.vstack(v) for name, v in parts.items()}
    blocks = {name: _harmonic_cpo(lu) for name, lu in logu.items()}

    joint_result = None
    if joint is not None:
        a, b = joint
        if logu[a].shape != logu[b].shape:
            raise ConfigurationError(
                f"joint leave-one-out needs matching block sizes, got "
                f"{logu[a].shape[1]} and {logu[b].shape[1]}"
            )
        joint_result = _harmonic_cpo(logu[a] + logu[b])
    return CpoResult(
        blocks=blocks,
        joint=joint_result,
        joint_blocks=tuple(joint) if joint is not None else None,
        n_draws=n_draws,
    )
