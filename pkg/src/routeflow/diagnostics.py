"""Chain quality metrics and oracle-comparison utilities.

Everything here is post-processing on a finished ChainOutput: no
randomness, deterministic given the trace.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .models import log_mass
from .polytope import DEFAULT_ENUM_CAP, enumerate_feasible

__all__ = [
    "ChainSummary",
    "effective_sample_size",
    "summarize",
    "tv_distance_vs_oracle",
    "rhat",
]


def _autocovariance(v):
    """Biased autocovariance sequence of a 1-D trace via FFT."""
    n = v.shape[0]
    d = v - v.mean()
    size = 1
    while size < 2 * n:
        size <<= 1
    f = np.fft.rfft(d, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n].real
    return acov / n


def effective_sample_size(trace):
    """ESS of one scalar trace by initial-positive-sequence truncation.

    Pairs of consecutive autocorrelations are summed and accumulated
    while the pair sums stay positive; the integrated autocorrelation
    time is 2 * (accumulated sum) - 1 and the ESS is n over that,
    clipped to [1, n].  A zero-variance trace has no meaningful ESS
    and returns (nan, True).
    """
    v = np.asarray(trace, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] == 0:
        raise ValidationError("trace must be a nonempty 1-D array")
    n = v.shape[0]
    if n == 1:
        return 1.0, False
    acov = _autocovariance(v)
    if acov[0] <= 0.0 or not np.isfinite(acov[0]):
        return float("nan"), True
    rho = acov / acov[0]
    total = 0.0
    m = 0
    while 2 * m + 1 < n:
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0.0:
            break
        total += pair
        m += 1
    tau = max(2.0 * total - 1.0, 1.0)
    ess = n / tau
    return float(min(max(ess, 1.0), n)), False


@dataclass(frozen=True)
class ChainSummary:
    """Per-chain quality metrics.

    Fields
    ------
    ess : per-route ESS over retained main-phase draws (nan where
        degenerate).
    degenerate : per-route flag, True for zero-variance traces.
    mean_slack_by_phase : phase name -> mean recorded slack.
    update_coverage : phase name -> fraction of routes whose flow
        changed at least once during the phase.
    acceptance_rate : free route id -> accepted proposals per sweep in
        the main phase.
    n_draws : number of retained main-phase draws the ESS refers to.
    """

    ess: np.ndarray
    degenerate: np.ndarray
    mean_slack_by_phase: dict[str, float]
    update_coverage: dict[str, float]
    acceptance_rate: dict[int, float]
    n_draws: int

    def to_json(self, file=None):
        """Serialize as JSON; returns the string, and writes to
        `file` (path or file-like) when given."""
        doc = {
            "n_draws": self.n_draws,
            "ess": [None if not np.isfinite(e) else float(e)
                    for e in self.ess],
            "degenerate": [bool(b) for b in self.degenerate],
            "mean_slack_by_phase": {
                k: float(v) for k, v in self.mean_slack_by_phase.items()
            },
            "update_coverage": {
                k: float(v) for k, v in self.update_coverage.items()
            },
            "acceptance_rate": {
                str(k): float(v) for k, v in self.acceptance_rate.items()
            },
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


def summarize(chain, thin=1):
    """ChainSummary for a finished chain.

    ESS is computed on the main-phase draws, thinned by `thin` before
    estimation; slack and coverage are reported for every phase.
    """
    if not chain.records:
        raise ValidationError("chain has no recorded sweeps")
    if not isinstance(thin, (int, np.integer)) or thin < 1:
        raise ValidationError("thin must be a positive integer")
    flows = chain.main_flows()
    if flows.shape[0] == 0:
        raise ValidationError("chain has no main-phase records")
    flows = flows[::thin]
    r = flows.shape[1]
    ess = np.empty(r)
    degen = np.zeros(r, dtype=bool)
    for j in range(r):
        ess[j], degen[j] = effective_sample_size(flows[:, j])
    slack = {}
    coverage = {}
    acc = {}
    for st in chain.phase_stats:
        slack[st.name] = st.mean_slack
        coverage[st.name] = float(
            (st.changed_by_route > 0).sum() / st.changed_by_route.shape[0]
        )
        if st.name == "main" and st.n_sweeps > 0:
            acc = {c: cnt / st.n_sweeps
                   for c, cnt in st.accepted_by_free_route.items()}
    return ChainSummary(
        ess=ess,
        degenerate=degen,
        mean_slack_by_phase=slack,
        update_coverage=coverage,
        acceptance_rate=acc,
        n_draws=int(flows.shape[0]),
    )


def tv_distance_vs_oracle(chain, A, y, m, cap=DEFAULT_ENUM_CAP,
                          phase="main"):
    """Total-variation distance between the retained draws of one
    phase and the exact conditional law on the enumerated feasible
    set.  Draws falling outside the enumerated set (impossible for a
    correct chain) count fully against the distance."""
    flows = chain.flows(phase)
    if flows.shape[0] == 0:
        raise ValidationError(f"chain has no {phase!r} records")
    pts = enumerate_feasible(A, y, cap=cap)
    lw = np.array([log_mass(m, s.x) for s in pts])
    w = np.exp(lw - lw.max())
    w /= w.sum()
    index = {tuple(int(v) for v in s.x): i for i, s in enumerate(pts)}
    emp = np.zeros(len(pts))
    outside = 0
    for row in flows:
        i = index.get(tuple(int(v) for v in row))
        if i is None:
            outside += 1
        else:
            emp[i] += 1.0
    emp /= flows.shape[0]
    tv = 0.5 * (np.abs(emp - w).sum() + outside / flows.shape[0])
    return float(tv)


def rhat(traces):
    """Between/within variance ratio over parallel chains.

    `traces` is a sequence of equal-length per-chain arrays, either
    (N,) for one scalar or (N, r) for per-route traces; returns a
    float or an (r,) array.  Chains with zero within-variance give
    nan.  This is the split-free classical ratio, a coarse screen
    rather than a full convergence diagnostic.
    """
    arrs = [np.asarray(t, dtype=np.float64) for t in traces]
    if len(arrs) < 2:
        raise ValidationError("rhat needs at least two chains")
    shape = arrs[0].shape
    if any(a.shape != shape for a in arrs):
        raise ValidationError("chains must have identical shapes")
    if arrs[0].shape[0] < 2:
        raise ValidationError("chains must have at least two draws")
    stacked = np.stack(arrs)  # (C, N) or (C, N, r)
    n = stacked.shape[1]
    means = stacked.mean(axis=1)
    w = stacked.var(axis=1, ddof=1).mean(axis=0)
    b = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * w + b / n
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sqrt(var_plus / w)
    if np.ndim(out) == 0:
        return float(out)
    return out
