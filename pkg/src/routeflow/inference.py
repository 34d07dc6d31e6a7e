"""Statistical drivers on top of the conditional sampler.

Three layers: exact_loglik enumerates the feasible set and is the
desk-scale oracle; stochastic_em fits Poisson or negbin route means by
Monte Carlo EM with an adaptive simulation size and Louis standard
errors; bayes_poisson runs the Gibbs sampler alternating conjugate
draws of the means with conditional flow updates.

All three accept multiple observations (rows of a count matrix).  The
EM and Gibbs drivers hold one persistent conditional chain per
observation; chains are advanced sequentially from a single generator
so runs are reproducible from the seed alone.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np
from scipy.special import logsumexp

from .diagnostics import effective_sample_size
from .errors import (
    DegenerateInformationWarning,
    StuckChainWarning,
    ValidationError,
)
from .models import (
    TrafficModel,
    log_mass,
    log_mass_table,
    sample_scores,
    score_and_information,
)
from .polytope import DEFAULT_ENUM_CAP, enumerate_feasible, initial_feasible
from .sampler import SamplerConfig, _Chain

__all__ = [
    "EmConfig",
    "EmStep",
    "EmResult",
    "PosteriorResult",
    "exact_loglik",
    "stochastic_em",
    "louis_standard_errors",
    "bayes_poisson",
]

THETA_FLOOR = 1e-8


def _count_rows(y_samples, n):
    y = np.asarray(getattr(y_samples, "counts", y_samples), dtype=np.int64)
    if y.ndim == 1:
        y = y[None, :]
    if y.ndim != 2 or y.shape[1] != n:
        raise ValidationError(
            f"count rows must have {n} links, got shape {y.shape}"
        )
    return y


def exact_loglik(A, y_samples, m, cap=DEFAULT_ENUM_CAP):
    """Log likelihood of the observed link counts by brute-force
    enumeration: sum over observations of log sum over the feasible
    set of the complete-data mass.  Oracle for small fixtures; raises
    EnumerationCapError beyond `cap` feasible points per observation.
    """
    ent = np.asarray(A.entries, dtype=np.int64)
    y = _count_rows(y_samples, ent.shape[0])
    fibers = {}
    total = 0.0
    for row in y:
        key = tuple(int(v) for v in row)
        if key not in fibers:
            pts = enumerate_feasible(A, row, cap=cap)
            fibers[key] = np.stack([s.x for s in pts])
        xs = fibers[key]
        lw = np.array([log_mass(m, x) for x in xs])
        total += float(logsumexp(lw))
    return total


# ---------------------------------------------------------------------------
# stochastic EM


@dataclass(frozen=True)
class EmConfig:
    """Monte Carlo EM settings.

    The E-step simulation size starts at m_init and is multiplied by
    m_growth_factor whenever the Q-gain since the last M-step is not
    statistically distinguishable from zero at the given confidence
    level; the run stops once the upper confidence bound of the gain
    falls below increase_tol (the increase is swamped by Monte Carlo
    noise at a size we already refused to grow past max_outer_iters).
    """

    m_init: int = 2000
    burn_in_per_estep: int = 2000
    max_outer_iters: int = 100
    m_growth_factor: float = 1.5
    confidence: float = 0.90
    increase_tol: float = 0.01
    pilot_iters: int = 1000
    n_pilot_phases: int = 2
    proposal: str = "uniform"
    sweep_order: str = "fixed"

    def __post_init__(self):
        if self.m_init < 1:
            raise ValidationError("m_init must be at least 1")
        if self.m_growth_factor <= 1.0:
            raise ValidationError("m_growth_factor must exceed 1")
        if not 0.5 < self.confidence < 1.0:
            raise ValidationError("confidence must lie in (0.5, 1)")
        if self.increase_tol <= 0.0:
            raise ValidationError("increase_tol must be positive")
        for name in ("burn_in_per_estep", "max_outer_iters",
                     "pilot_iters", "n_pilot_phases"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")

    @property
    def z(self):
        return NormalDist().inv_cdf(self.confidence)


@dataclass(frozen=True)
class EmStep:
    """One outer iteration of the EM trajectory."""

    outer_iter: int
    theta: np.ndarray
    alpha: float | None
    m_draws: int
    qhat: float
    delta_q: float
    delta_se: float
    m_grown: bool


@dataclass
class EmResult:
    """Point estimates, standard errors, and the fitting trajectory."""

    theta_hat: np.ndarray
    alpha_hat: float | None
    std_errors: np.ndarray
    info_matrix: np.ndarray
    trajectory: list[EmStep]
    converged: bool
    n_outer: int
    m_final: int
    estep_mc_se: np.ndarray

    def to_json(self, file=None):
        doc = {
            "model": "poisson" if self.alpha_hat is None else "negbin",
            "theta_hat": [float(v) for v in self.theta_hat],
            "alpha_hat": self.alpha_hat,
            "std_errors": [None if not np.isfinite(v) else float(v)
                           for v in self.std_errors],
            "converged": self.converged,
            "n_outer": self.n_outer,
            "m_final": self.m_final,
            "estep_mc_se": [float(v) for v in self.estep_mc_se],
            "trajectory": [
                {
                    "outer_iter": s.outer_iter,
                    "theta": [float(v) for v in s.theta],
                    "alpha": s.alpha,
                    "m_draws": s.m_draws,
                    "qhat": s.qhat,
                    "delta_q": s.delta_q,
                    "delta_se": s.delta_se,
                    "m_grown": s.m_grown,
                }
                for s in self.trajectory
            ],
        }
        text = json.dumps(doc, indent=2, sort_keys=True)
        if file is not None:
            if isinstance(file, (str, bytes)) or hasattr(file,
                                                         "__fspath__"):
                with open(file, "w", encoding="utf-8") as fh:
                    fh.write(text + "\n")
            else:
                file.write(text + "\n")
        return text


def _batch_se(values):
    """Batch-means standard error of the mean of a correlated series."""
    m = values.shape[0]
    nb = int(math.sqrt(m))
    if nb < 2:
        return float(values.std(ddof=1) / math.sqrt(m)) if m > 1 else 0.0
    bs = m // nb
    bm = values[: nb * bs].reshape(nb, bs).mean(axis=1)
    return float(math.sqrt(bm.var(ddof=1) / nb))


def _golden_max(f, lo, hi, tol=1e-6, max_iter=200):
    """Golden-section maximizer of a unimodal scalar function."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a < tol * (1.0 + abs(a) + abs(b)):
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2.0


class _EStep:
    """Persistent conditional chains, one per observation."""

    def __init__(self, A, y, model0, cfg, rng):
        scfg = SamplerConfig(main_iters=1, seed=0,
                             proposal=cfg.proposal,
                             sweep_order=cfg.sweep_order)
        self.cfg = cfg
        self.rng = rng
        self.chains = [
            _Chain(A, row, model0, scfg, rng) for row in y
        ]
        self.warmed = False

    def _collect(self, chain, n_sweeps):
        out_x, _, _, _, chg = chain.run(n_sweeps, thin=1)
        X = np.empty((n_sweeps, chain.r), dtype=np.int64)
        X[:, chain.basis_idx] = out_x[:, : chain.n]
        X[:, chain.free_idx] = out_x[:, chain.n:]
        return X, chg

    def draws(self, model, m_draws):
        """One E-step: M conditional draws per observation at the
        given parameters, shape (M, N, r).  The first call runs pilot
        phases and burn-in; later calls resume the warm chains."""
        cfg = self.cfg
        first_estep = not self.warmed
        out = np.empty((m_draws, len(self.chains), self.chains[0].r),
                       dtype=np.int64)
        for t, chain in enumerate(self.chains):
            chain.set_model(model)
            if not self.warmed:
                for _ in range(cfg.n_pilot_phases):
                    if cfg.pilot_iters == 0:
                        continue
                    X, _ = self._collect(chain, cfg.pilot_iters)
                    chain.repartition(X.mean(axis=0))
                if cfg.burn_in_per_estep:
                    chain.run(cfg.burn_in_per_estep, thin=0)
            X, chg = self._collect(chain, m_draws)
            if (first_estep and chg.sum() == 0 and chain.k > 0
                    and m_draws > 1):
                warnings.warn(
                    f"conditional chain for observation {t + 1} made no "
                    f"moves in {m_draws} sweeps; its feasible set may "
                    f"be a single point",
                    StuckChainWarning,
                    stacklevel=4,
                )
            out[:, t, :] = X
        self.warmed = True
        return out


def _per_draw_loglik(draws, model):
    """Complete-data log likelihood of each draw, summed over
    observations: shape (M,)."""
    v_max = int(draws.max()) + 1
    tab = log_mass_table(model, v_max)
    r = draws.shape[2]
    return tab[np.arange(r), draws].sum(axis=(1, 2))


def _value_counts(draws):
    """Per-route histogram of draw values, shape (r, V)."""
    r = draws.shape[2]
    v_max = int(draws.max()) + 1
    cnt = np.zeros((r, v_max), dtype=np.int64)
    for j in range(r):
        cnt[j] = np.bincount(draws[:, :, j].ravel(), minlength=v_max)
    return cnt


def _qhat_from_counts(cnt, model, m_draws):
    tab = log_mass_table(model, cnt.shape[1])
    return float((cnt * tab).sum() / m_draws)


def _mstep(draws, kind):
    """Maximize the Monte Carlo Q function: sample means for theta,
    and for negbin a golden-section profile search for alpha."""
    theta = draws.mean(axis=(0, 1))
    if (theta < THETA_FLOOR).any():
        low = np.flatnonzero(theta < THETA_FLOOR) + 1
        warnings.warn(
            f"estimated mean hit zero for routes {low.tolist()}; "
            f"floored at {THETA_FLOOR:g}",
            UserWarning,
            stacklevel=3,
        )
        theta = np.maximum(theta, THETA_FLOOR)
    if kind == "poisson":
        return TrafficModel("poisson", theta)
    cnt = _value_counts(draws)
    m_draws = draws.shape[0]

    def q_of_alpha(a):
        return _qhat_from_counts(
            cnt, TrafficModel("negbin", theta, alpha=a), m_draws
        )

    alpha = _golden_max(q_of_alpha, 0.0, 1000.0)
    return TrafficModel("negbin", theta, alpha=alpha)


def louis_standard_errors(m, theta_hat, conditional_draws,
                          alpha_hat=None):
    """Observed information and standard errors by the missing
    information principle: average over conditional draws of the
    complete-data information minus the outer product of the
    complete-data score.

    `conditional_draws` has shape (M, N, r): M draws of the full
    latent flow array at the estimate.  Returns (info, std_errors);
    a singular information matrix falls back to the pseudo-inverse
    with a DegenerateInformationWarning.
    """
    if alpha_hat is None:
        alpha_hat = getattr(m, "alpha", 0.0)
    model = m.with_params(np.asarray(theta_hat, dtype=float),
                          alpha_hat if m.kind == "negbin" else None)
    draws = np.asarray(conditional_draws)
    if draws.ndim == 2:
        draws = draws[:, None, :]
    m_draws, n_obs, r = draws.shape
    flat = draws.reshape(m_draws * n_obs, r)
    scores = sample_scores(model, flat)
    p = scores.shape[1]
    u = scores.reshape(m_draws, n_obs, p).sum(axis=1)
    _, info_total = score_and_information(model, flat)
    info = info_total / m_draws - (u.T @ u) / m_draws
    info = (info + info.T) / 2.0
    try:
        cov = np.linalg.inv(info)
        if not np.isfinite(cov).all():
            raise np.linalg.LinAlgError("non-finite inverse")
    except np.linalg.LinAlgError:
        warnings.warn(
            "observed information is singular; standard errors use "
            "the pseudo-inverse and are unreliable",
            DegenerateInformationWarning,
            stacklevel=2,
        )
        cov = np.linalg.pinv(info)
    diag = np.diag(cov).copy()
    bad = diag < 0
    if bad.any():
        warnings.warn(
            "observed information has negative variance estimates; "
            "affected standard errors reported as nan",
            DegenerateInformationWarning,
            stacklevel=2,
        )
        diag[bad] = np.nan
    return info, np.sqrt(diag)


def stochastic_em(A, y_samples, model_kind, cfg=None, rng=None):
    """Fit route means (and the negbin dispersion) by Monte Carlo EM.

    Each outer iteration draws M conditional flow arrays per
    observation from warm persistent chains, replaces the E-step
    expectation with the Monte Carlo average, and maximizes.  M grows
    by cfg.m_growth_factor whenever the observed Q-gain could be pure
    Monte Carlo noise; the run stops when the gain's upper confidence
    bound drops below cfg.increase_tol, or with converged=False at
    cfg.max_outer_iters.
    """
    if model_kind not in ("poisson", "negbin"):
        raise ValidationError(f"unknown model kind {model_kind!r}")
    if cfg is None:
        cfg = EmConfig()
    if rng is None:
        raise ValidationError("an explicit rng is required")
    ent = np.asarray(A.entries, dtype=np.int64)
    y = _count_rows(y_samples, ent.shape[0])
    if y.shape[0] == 0:
        raise ValidationError("at least one observation is required")

    starts = np.stack([
        np.asarray(initial_feasible(A, row, "any").x, dtype=float)
        for row in y
    ])
    theta0 = starts.mean(axis=0) + 0.5
    alpha0 = 0.1 if model_kind == "negbin" else 0.0
    model = TrafficModel(model_kind, theta0,
                         alpha=alpha0 if model_kind == "negbin" else 0.0)

    estep = _EStep(A, y, model, cfg, rng)
    m_draws = cfg.m_init
    z = cfg.z
    trajectory = []
    converged = False
    draws = None

    for outer in range(1, cfg.max_outer_iters + 1):
        draws = estep.draws(model, m_draws)
        q_old_per = _per_draw_loglik(draws, model)
        new_model = _mstep(draws, model_kind)
        q_new_per = _per_draw_loglik(draws, new_model)
        delta_per = q_new_per - q_old_per
        delta_q = float(delta_per.mean())
        delta_se = _batch_se(delta_per)
        qhat = float(q_new_per.mean())
        if delta_q < -1e-9 * (1.0 + abs(qhat)):
            # the Poisson M-step is an exact maximizer, so a decrease
            # is a bug; the negbin step fixes theta at the sample
            # means and can in principle give ground slightly
            if model_kind == "poisson":
                raise AssertionError(
                    f"M-step decreased the Q function by {-delta_q:g}"
                )
            warnings.warn(
                f"negbin M-step decreased the Q function by "
                f"{-delta_q:g}; the theta update is approximate",
                UserWarning,
                stacklevel=2,
            )

        grow = delta_q - z * delta_se <= 0.0
        done = delta_q + z * delta_se < cfg.increase_tol
        trajectory.append(EmStep(
            outer_iter=outer,
            theta=new_model.theta.copy(),
            alpha=new_model.alpha if model_kind == "negbin" else None,
            m_draws=m_draws,
            qhat=qhat,
            delta_q=delta_q,
            delta_se=delta_se,
            m_grown=grow and not done,
        ))
        model = new_model
        if done:
            converged = True
            break
        if grow:
            m_draws = int(math.ceil(m_draws * cfg.m_growth_factor))

    # a fresh set of conditional draws at the final estimate, for the
    # information matrix and the E-step Monte Carlo error
    final_draws = estep.draws(model, m_draws)
    info, se = louis_standard_errors(
        model, model.theta, final_draws,
        alpha_hat=model.alpha if model_kind == "negbin" else None,
    )
    per_route = final_draws.mean(axis=1)  # (M, r): mean over obs
    mc_se = np.array([_batch_se(per_route[:, j])
                      for j in range(per_route.shape[1])])
    return EmResult(
        theta_hat=model.theta.copy(),
        alpha_hat=model.alpha if model_kind == "negbin" else None,
        std_errors=se,
        info_matrix=info,
        trajectory=trajectory,
        converged=converged,
        n_outer=len(trajectory),
        m_final=m_draws,
        estep_mc_se=mc_se,
    )


# ---------------------------------------------------------------------------
# Bayesian Gibbs


@dataclass
class PosteriorResult:
    """Posterior draws and per-route summaries from one Gibbs chain."""

    theta_draws: np.ndarray
    mean: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    ess: np.ndarray
    mcse: np.ndarray
    seed: int | None
    config: dict
    x_draws: np.ndarray | None = None

    def to_json(self, file=None):
        def _num(v):
            return None if not np.isfinite(v) else float(v)

        doc = {
            "seed": self.seed,
            "config": self.config,
            "n_draws": int(self.theta_draws.shape[0]),
            "routes": [
                {
                    "route": j + 1,
                    "mean": float(self.mean[j]),
                    "ci_2.5": float(self.ci_lo[j]),
                    "ci_97.5": float(self.ci_hi[j]),
                    "ess": _num(self.ess[j]),
                    "mcse": _num(self.mcse[j]),
                }
                for j in range(self.mean.shape[0])
            ],
        }
        text = json.dumps(doc, indent=2, sort_keys=True)
        if file is not None:
            if isinstance(file, (str, bytes)) or hasattr(file,
                                                         "__fspath__"):
                with open(file, "w", encoding="utf-8") as fh:
                    fh.write(text + "\n")
            else:
                file.write(text + "\n")
        return text


def bayes_poisson(A, y_samples, prior, cfg=None, rng=None,
                  keep_x=False):
    """Posterior sampling of Poisson route means under gamma priors.

    One Gibbs iteration updates every observation's latent flows by a
    single componentwise sweep, then redraws all means conjugately
    from Gamma(shape + total flow, rate + N).  The phase schedule
    (pilot partition adaptation, burn-in, main) follows cfg exactly as
    in the conditional sampler; summaries come from the main phase.
    """
    if cfg is None:
        raise ValidationError("a SamplerConfig is required")
    ent = np.asarray(A.entries, dtype=np.int64)
    n, r = ent.shape
    y = _count_rows(y_samples, n)
    n_obs = y.shape[0]
    if prior.r != r:
        raise ValidationError(
            f"prior must have one (shape, rate) pair per route; "
            f"expected {r}, got {prior.r}"
        )
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    theta = prior.mean.copy()
    model = TrafficModel("poisson", theta)
    v_width = int(y.max()) + 1 if y.size else 1
    chains = []
    for row in y:
        start = initial_feasible(A, row, "max-L1")
        chains.append(_Chain(A, row, model, cfg, rng, initial=start))

    rate_post = prior.rate + float(n_obs)

    def redraw_theta():
        total = np.zeros(r)
        for chain in chains:
            total += chain.x_full()
        shape_post = prior.shape + total
        return rng.gamma(shape_post, 1.0 / rate_post)

    def set_theta(theta):
        model = TrafficModel("poisson", theta)
        if chains:
            tab = log_mass_table(model, v_width)
            for chain in chains:
                chain.model = model
                chain.lm = tab
                chain._slice_tables()
        return model

    def gibbs_iters(count):
        nonlocal theta, model
        for i in range(count):
            for chain in chains:
                chain.run(1, thin=0)
            theta = redraw_theta()
            model = set_theta(theta)

    # pilot phases: adapt each chain's partition to its own flows
    for ph in range(1, cfg.n_pilot_phases + 1):
        if cfg.pilot_iters == 0:
            continue
        sums = [np.zeros(r) for _ in chains]
        moved = [0 for _ in chains]
        for i in range(cfg.pilot_iters):
            for t, chain in enumerate(chains):
                _, _, _, _, chg = chain.run(1, thin=0)
                sums[t] += chain.x_full()
                moved[t] += int(chg.sum())
            theta = redraw_theta()
            model = set_theta(theta)
        for t, chain in enumerate(chains):
            if moved[t] == 0 and chain.k > 0:
                warnings.warn(
                    f"observation {t + 1} chain made no moves during "
                    f"pilot phase {ph}",
                    StuckChainWarning,
                    stacklevel=2,
                )
            chain.repartition(sums[t] / cfg.pilot_iters)
        model = set_theta(theta)

    gibbs_iters(cfg.burn_in)

    kept = []
    kept_x = [] if keep_x else None
    for i in range(cfg.main_iters):
        for chain in chains:
            chain.run(1, thin=0)
        theta = redraw_theta()
        model = set_theta(theta)
        if (i + 1) % cfg.thin == 0:
            kept.append(theta)
            if keep_x:
                kept_x.append(np.stack(
                    [chain.x_full() for chain in chains]
                ))

    draws = np.stack(kept) if kept else np.zeros((0, r))
    if draws.shape[0] == 0:
        raise ValidationError("main phase produced no retained draws")
    mean = draws.mean(axis=0)
    ci_lo = np.percentile(draws, 2.5, axis=0)
    ci_hi = np.percentile(draws, 97.5, axis=0)
    ess = np.empty(r)
    mcse = np.empty(r)
    for j in range(r):
        e, degen = effective_sample_size(draws[:, j])
        ess[j] = np.nan if degen else e
        sd = draws[:, j].std(ddof=1)
        mcse[j] = np.nan if degen else sd / math.sqrt(e)
    config_echo = {
        "main_iters": cfg.main_iters,
        "burn_in": cfg.burn_in,
        "pilot_iters": cfg.pilot_iters,
        "n_pilot_phases": cfg.n_pilot_phases,
        "proposal": cfg.proposal,
        "sweep_order": cfg.sweep_order,
        "thin": cfg.thin,
        "n_obs": n_obs,
    }
    return PosteriorResult(
        theta_draws=draws,
        mean=mean,
        ci_lo=ci_lo,
        ci_hi=ci_hi,
        ess=ess,
        mcse=mcse,
        seed=cfg.seed,
        config=config_echo,
        x_draws=np.stack(kept_x) if keep_x and kept_x else None,
    )


def _mom_poisson(A, y_samples):
    """Method-of-moments comparison estimator, test use only: match
    the link-count mean and covariance implied by independent Poisson
    route flows by nonnegative least squares over the stacked moment
    equations."""
    from scipy.optimize import nnls

    ent = np.asarray(A.entries, dtype=float)
    n, r = ent.shape
    y = _count_rows(y_samples, n).astype(float)
    if y.shape[0] < 2:
        raise ValidationError("moment matching needs at least two samples")
    ybar = y.mean(axis=0)
    S = np.cov(y, rowvar=False, ddof=1).reshape(n, n)
    rows = [ent]
    rhs = [ybar]
    pair_rows = []
    pair_rhs = []
    for a in range(n):
        for b in range(a, n):
            pair_rows.append(ent[a] * ent[b])
            pair_rhs.append(S[a, b])
    rows.append(np.stack(pair_rows))
    rhs.append(np.array(pair_rhs))
    design = np.vstack(rows)
    target = np.concatenate(rhs)
    theta, _ = nnls(design, target)
    return theta
