"""Route flow probability models and gamma priors.

Two models for the latent route flows, both with independent
coordinates: Poisson with mean theta_j, and a negative binomial
parameterized so that E[x_j] = theta_j and Var[x_j] = (1+alpha)
theta_j (size theta_j/alpha, success probability 1/(1+alpha)).  The
dispersion alpha is shared across routes; alpha = 0 falls back to the
Poisson branch, and the two agree in the limit.

The negative binomial log-mass is evaluated in the summed form

    sum_{k<v} log(theta + k alpha) - (theta/alpha + v) log1p(alpha)
        - lgamma(v+1),

which is stable for small alpha and makes the analytic score and
observed information straightforward (each is a similar sum over k).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import ParseError, ValidationError

__all__ = [
    "TrafficModel",
    "PriorSpec",
    "load_priors",
    "log_mass",
    "log_mass_table",
    "log_mass_ratio_for_move",
    "conjugate_update",
    "score_and_information",
    "sample_scores",
]


@dataclass(frozen=True)
class TrafficModel:
    """Distribution of the latent route flows.

    kind is "poisson" or "negbin"; theta holds the mean flow per route
    (original route order); alpha is the negbin dispersion, with
    variance (1+alpha) theta.
    """

    kind: str
    theta: np.ndarray
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in ("poisson", "negbin"):
            raise ValidationError(f"unknown model kind {self.kind!r}")
        theta = np.asarray(self.theta, dtype=np.float64).copy()
        if theta.ndim != 1:
            raise ValidationError("theta must be a vector")
        if not (theta > 0).all():
            raise ValidationError("theta must be strictly positive")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        alpha = float(self.alpha)
        if alpha < 0:
            raise ValidationError("alpha must be nonnegative")
        if self.kind == "poisson" and alpha != 0.0:
            raise ValidationError("poisson model takes no dispersion")
        object.__setattr__(self, "alpha", alpha)

    @property
    def r(self):
        return self.theta.shape[0]

    @property
    def n_params(self):
        return self.r + (1 if self.kind == "negbin" else 0)

    def with_params(self, theta, alpha=None):
        if alpha is None:
            alpha = self.alpha
        return TrafficModel(self.kind, theta, alpha)


@dataclass(frozen=True)
class PriorSpec:
    """Independent Gamma(shape_j, rate_j) priors on theta_j, in the
    shape-rate convention: mean = shape/rate."""

    shape: np.ndarray
    rate: np.ndarray

    def __post_init__(self):
        shape = np.asarray(self.shape, dtype=np.float64).copy()
        rate = np.asarray(self.rate, dtype=np.float64).copy()
        if shape.ndim != 1 or rate.ndim != 1 or shape.shape != rate.shape:
            raise ValidationError("shape and rate must be equal-length vectors")
        if not ((shape > 0).all() and (rate > 0).all()):
            raise ValidationError("shape and rate must be strictly positive")
        shape.setflags(write=False)
        rate.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "rate", rate)

    @property
    def r(self):
        return self.shape.shape[0]

    @property
    def mean(self):
        return self.shape / self.rate


def load_priors(source, pseudo_divisor=2):
    """Read gamma priors from CSV.

    Two layouts, distinguished by the header row: ``route_id,shape,
    rate`` gives the parameters directly; ``route_id,pseudo_count``
    maps a prior guess x to Gamma(x/d, 1/d) with d = pseudo_divisor
    (2 or 5), so the prior mean equals the guess.  Route ids must
    cover 1..r exactly.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="", encoding="utf-8") as fh:
            return load_priors(fh, pseudo_divisor)
    if pseudo_divisor not in (2, 5):
        raise ValidationError(
            f"pseudo-count divisor must be 2 or 5, got {pseudo_divisor}"
        )
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty prior file") from None
    header = [h.strip().lower() for h in header]
    if header[:1] != ["route_id"]:
        raise ParseError("prior file must start with a route_id column")
    if header == ["route_id", "shape", "rate"]:
        mode = "direct"
    elif header == ["route_id", "pseudo_count"]:
        mode = "pseudo"
    else:
        raise ParseError(f"unrecognized prior header {header!r}")
    rows = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or not "".join(row).strip():
            continue
        try:
            rid = int(row[0])
            vals = [float(v) for v in row[1:]]
        except (ValueError, IndexError):
            raise ParseError(f"bad prior row at line {lineno}: {row!r}") from None
        if rid in rows:
            raise ParseError(f"duplicate route id {rid} in prior file")
        rows[rid] = vals
    if not rows:
        raise ParseError("prior file has no data rows")
    r = len(rows)
    if sorted(rows) != list(range(1, r + 1)):
        raise ParseError("route ids must cover 1..r exactly")
    if mode == "direct":
        shape = [rows[j][0] for j in range(1, r + 1)]
        rate = [rows[j][1] for j in range(1, r + 1)]
    else:
        d = float(pseudo_divisor)
        shape = [rows[j][0] / d for j in range(1, r + 1)]
        rate = [1.0 / d] * r
    return PriorSpec(np.array(shape), np.array(rate))


def _check_counts(x, r=None):
    arr = np.asarray(x)
    if np.issubdtype(arr.dtype, np.floating):
        rounded = np.rint(arr)
        if not np.array_equal(rounded, arr):
            raise ValidationError("flow values must be integers")
        arr = rounded
    arr = arr.astype(np.int64)
    if (arr < 0).any():
        raise ValidationError("flow values must be nonnegative")
    if r is not None and arr.shape[-1] != r:
        raise ValidationError(
            f"flow vector has length {arr.shape[-1]}, model has {r} routes"
        )
    return arr


def _negbin_terms(theta, alpha, v):
    """sum_{k<v} log(theta + k alpha) for matching-shape arrays."""
    out = np.zeros(np.broadcast(theta, v).shape)
    flat_t = np.broadcast_to(theta, out.shape).ravel()
    flat_v = np.broadcast_to(v, out.shape).ravel()
    flat = out.ravel()
    for i in range(flat.size):
        vi = int(flat_v[i])
        if vi:
            flat[i] = np.log(flat_t[i] + alpha * np.arange(vi)).sum()
    return out


def log_mass(m, x):
    """Joint log-probability sum_j log f(x_j; theta_j [, alpha])."""
    x = _check_counts(x, m.r)
    theta = m.theta
    if m.kind == "poisson" or m.alpha == 0.0:
        return float((x * np.log(theta) - theta - gammaln(x + 1.0)).sum())
    a = m.alpha
    lead = _negbin_terms(theta, a, x)
    return float(
        (lead - (theta / a + x) * np.log1p(a) - gammaln(x + 1.0)).sum()
    )


def log_mass_table(m, width):
    """Per-route log-mass lookup, shape (r, width): entry [j, v] =
    log f(v; theta_j [, alpha]).  Rows are in original route order;
    the sampler slices them per partition."""
    v = np.arange(width, dtype=np.float64)
    theta = m.theta[:, None]
    if m.kind == "poisson" or m.alpha == 0.0:
        return v * np.log(theta) - theta - gammaln(v + 1.0)
    a = m.alpha
    terms = np.log(theta + a * v[:-1]) if width > 1 \
        else np.zeros((m.r, 0))
    lead = np.concatenate(
        [np.zeros((m.r, 1)), np.cumsum(terms, axis=1)], axis=1
    )
    return lead - (theta / a + v) * np.log1p(a) - gammaln(v + 1.0)


def log_mass_ratio_for_move(m, state, j, t_new, p, U):
    """log f(x-dagger) - log f(x) for the single-coordinate move that
    sets free coordinate j to t_new, touching only the basis block and
    the moved coordinate.  t_new must lie within the move bounds."""
    from .polytope import move_bounds

    b = move_bounds(state, p, U, j)
    t_new = int(t_new)
    if not b.lo <= t_new <= b.hi:
        raise ValidationError(
            f"candidate {t_new} outside feasible bounds [{b.lo}, {b.hi}]"
        )
    free_id = p.free_cols[j]
    t_cur = int(state.x[free_id - 1])
    if t_new == t_cur:
        return 0.0
    d = t_new - t_cur

    def term(route_id, v):
        sub = TrafficModel(
            m.kind, m.theta[route_id - 1 : route_id], m.alpha
        )
        return log_mass(sub, [v])

    total = term(free_id, t_new) - term(free_id, t_cur)
    for i, basis_id in enumerate(p.basis_cols):
        wi = int(U.U[i][j])
        if wi == 0:
            continue
        v = int(state.x[basis_id - 1])
        total += term(basis_id, v + d * wi) - term(basis_id, v)
    return total


def conjugate_update(prior, x_samples, kind="poisson"):
    """Gamma posterior parameters for Poisson means: shape' = shape +
    sum_t x^(t), rate' = rate + N."""
    if kind != "poisson":
        raise ValidationError(
            "conjugate gamma updates exist only for the poisson model"
        )
    xs = _check_counts(np.atleast_2d(np.asarray(x_samples)), prior.r)
    return PriorSpec(
        prior.shape + xs.sum(axis=0), prior.rate + xs.shape[0]
    )


def _g_small(a):
    # log1p(a)/a^2 - 1/(a(1+a)), series around 0
    return 0.5 - 2.0 * a / 3.0 + 0.75 * a * a - 0.8 * a ** 3


def _g(a):
    if a < 1e-4:
        return _g_small(a)
    return np.log1p(a) / a ** 2 - 1.0 / (a * (1.0 + a))


def _gprime_small(a):
    return -2.0 / 3.0 + 1.5 * a - 2.4 * a * a + (10.0 / 3.0) * a ** 3


def _gprime(a):
    if a < 1e-3:
        return _gprime_small(a)
    return (
        1.0 / ((1.0 + a) * a ** 2)
        - 2.0 * np.log1p(a) / a ** 3
        + (1.0 + 2.0 * a) / (a ** 2 * (1.0 + a) ** 2)
    )


def _negbin_partials(theta, alpha, xs):
    """Per-sample pieces of the negbin score/information.

    Returns (s1, sk, q1, qk, qk2) where for sample t, route j, with
    v = x_tj: s1 = sum_{k<v} 1/(theta_j+k alpha), sk = sum k/(...),
    q1 = sum 1/(...)^2, qk = sum k/(...)^2, qk2 = sum k^2/(...)^2.
    Computed by cumulative sums over the value grid, then indexed."""
    V = int(xs.max()) + 1 if xs.size else 1
    k = np.arange(max(V - 1, 1), dtype=np.float64)
    denom = theta[:, None] + alpha * k[None, :]  # (r, V-1)
    inv = 1.0 / denom
    inv2 = inv * inv

    def table(values):
        # prefix sums: column v = sum over k < v
        return np.concatenate(
            [np.zeros((theta.size, 1)), np.cumsum(values, axis=1)], axis=1
        )

    t_s1 = table(inv)
    t_sk = table(k[None, :] * inv)
    t_q1 = table(inv2)
    t_qk = table(k[None, :] * inv2)
    t_qk2 = table(k[None, :] ** 2 * inv2)
    cols = np.arange(theta.size)
    idx = xs  # (M, r) integer values
    return (
        t_s1[cols, idx],
        t_sk[cols, idx],
        t_q1[cols, idx],
        t_qk[cols, idx],
        t_qk2[cols, idx],
    )


def sample_scores(m, x_samples):
    """Per-sample score vectors, shape (M, n_params): derivatives of
    log f(x^(t)) with respect to theta (and alpha for negbin)."""
    xs = _check_counts(np.atleast_2d(np.asarray(x_samples)), m.r)
    theta = m.theta
    if m.kind == "poisson":
        return xs / theta - 1.0
    a = m.alpha
    if a == 0.0:
        # limiting negbin scores at alpha -> 0
        u_t = xs / theta - 1.0
        # sum_{k<v} k/theta - v + theta/2 = v(v-1)/(2 theta) - v + theta/2
        u_a = (xs * (xs - 1.0) / (2.0 * theta) - xs + theta / 2.0).sum(axis=1)
        return np.concatenate([u_t, u_a[:, None]], axis=1)
    s1, sk, _, _, _ = _negbin_partials(theta, a, xs)
    u_t = s1 - np.log1p(a) / a
    u_a = (sk - xs / (1.0 + a) + theta[None, :] * _g(a)).sum(axis=1)
    return np.concatenate([u_t, u_a[:, None]], axis=1)


def score_and_information(m, x_samples):
    """Total score vector and observed information matrix (negative
    Hessian of the complete-data log likelihood), summed over samples.

    Poisson: dimension r, diagonal information sum_t x_tj / theta_j^2.
    negbin: dimension r+1 with parameter order (theta_1..theta_r,
    alpha); the theta block is diagonal, alpha couples to every theta.
    """
    xs = _check_counts(np.atleast_2d(np.asarray(x_samples)), m.r)
    theta = m.theta
    M = xs.shape[0]
    if m.kind == "poisson":
        u = (xs / theta - 1.0).sum(axis=0)
        info = np.diag(xs.sum(axis=0) / theta**2)
        return u, info
    a = m.alpha
    if a == 0.0:
        raise ValidationError(
            "negbin information at alpha = 0 is degenerate; "
            "fit with poisson instead"
        )
    s1, sk, q1, qk, qk2 = _negbin_partials(theta, a, xs)
    u_t = (s1 - np.log1p(a) / a).sum(axis=0)
    u_a = (sk - xs / (1.0 + a) + theta[None, :] * _g(a)).sum()
    u = np.concatenate([u_t, [u_a]])
    d = m.n_params
    info = np.zeros((d, d))
    info[np.arange(m.r), np.arange(m.r)] = q1.sum(axis=0)
    cross = (qk + 1.0 / (a * (1.0 + a)) - np.log1p(a) / a**2).sum(axis=0)
    info[: m.r, -1] = cross
    info[-1, : m.r] = cross
    info[-1, -1] = (
        qk2 - xs / (1.0 + a) ** 2 - theta[None, :] * _gprime(a)
    ).sum()
    return u, info
