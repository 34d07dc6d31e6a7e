"""Conditional route-flow samplers.

Two entry points: run_fixed is the classical fixed-partition
componentwise sampler (the comparison baseline), and run_phased is the
adaptive scheme: pilot phases that reorder the columns so that
high-flow routes form the basis block (the "swap space"), then a
frozen partition for burn-in and the main run.

A chain may also carry gamma priors on the Poisson means, in which
case each iteration appends a conjugate redraw of theta given the
current flows; the chain output then includes the theta draws.  This
is the single-observation Gibbs sampler; multi-observation inference
drives several chains and lives in the inference module.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import StuckChainWarning, ValidationError
from .intlin import Partition, greedy_reorder, make_partition, null_basis
from .models import TrafficModel, log_mass_table
from .polytope import FlowState, initial_feasible

__all__ = [
    "SamplerConfig",
    "SweepRecord",
    "PhaseStats",
    "ChainOutput",
    "sweep",
    "run_phased",
    "run_fixed",
]

_PROPOSALS = {"uniform": kernels.PROPOSAL_UNIFORM,
              "gibbs-exact": kernels.PROPOSAL_GIBBS}


@dataclass(frozen=True)
class SamplerConfig:
    """Run lengths and proposal choices for one chain."""

    main_iters: int
    seed: int
    burn_in: int = 0
    pilot_iters: int = 10000
    n_pilot_phases: int = 2
    proposal: str = "uniform"
    score_statistic: str = "mean"
    percentile_q: float = 0.05
    sweep_order: str = "fixed"
    thin: int = 1

    def __post_init__(self):
        for name in ("main_iters", "burn_in", "pilot_iters",
                     "n_pilot_phases"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ValidationError(f"{name} must be a nonnegative integer")
        if self.proposal not in _PROPOSALS:
            raise ValidationError(f"unknown proposal {self.proposal!r}")
        if self.score_statistic not in ("mean", "low-percentile"):
            raise ValidationError(
                f"unknown score statistic {self.score_statistic!r}"
            )
        if not 0.0 < self.percentile_q < 1.0:
            raise ValidationError("percentile_q must lie in (0, 1)")
        if self.sweep_order not in ("fixed", "random"):
            raise ValidationError(f"unknown sweep order {self.sweep_order!r}")
        if not isinstance(self.thin, (int, np.integer)) or self.thin < 1:
            raise ValidationError("thin must be a positive integer")


@dataclass(frozen=True)
class SweepRecord:
    """One recorded sweep: the state snapshot and sweep bookkeeping."""

    iter: int
    x: np.ndarray
    n_accepted: int
    n_changed: int
    slack: float
    phase: str
    basis_cols: tuple[int, ...]


@dataclass(frozen=True)
class PhaseStats:
    """Aggregate counters for one phase of a chain."""

    name: str
    n_sweeps: int
    basis_cols: tuple[int, ...]
    accepted_by_free_route: dict[int, int]
    changed_by_route: np.ndarray
    mean_slack: float


@dataclass
class ChainOutput:
    """Everything a finished chain hands back: recorded sweeps
    (pilot and main phases; burn-in is never recorded), per-phase
    stats, and the final state.  theta holds per-record posterior
    draws when the chain carried priors, else None."""

    records: list[SweepRecord]
    phase_stats: list[PhaseStats]
    final_state: FlowState
    final_partition: Partition
    theta: np.ndarray | None = None

    def flows(self, phase=None):
        """Recorded flow vectors as an array, optionally filtered by
        phase name ("main", "pilot-1", ...)."""
        rows = [r.x for r in self.records
                if phase is None or r.phase == phase]
        r = self.final_state.r
        if not rows:
            return np.zeros((0, r), dtype=np.int64)
        return np.stack(rows)

    def main_flows(self):
        return self.flows("main")

    def to_csv(self, file):
        """Write records as CSV: iter, phase, slack, n_accepted,
        n_changed, x_1..x_r."""
        close = False
        if isinstance(file, (str, bytes)) or hasattr(file, "__fspath__"):
            file = open(file, "w", encoding="utf-8")
            close = True
        try:
            r = self.final_state.r
            head = ["iter", "phase", "slack", "n_accepted", "n_changed"]
            head += [f"x_{j + 1}" for j in range(r)]
            file.write(",".join(head) + "\n")
            for rec in self.records:
                row = [str(rec.iter), rec.phase, repr(rec.slack),
                       str(rec.n_accepted), str(rec.n_changed)]
                row += [str(int(v)) for v in rec.x]
                file.write(",".join(row) + "\n")
        finally:
            if close:
                file.close()


class _Chain:
    """Mutable driver for one observation's conditional chain.

    Keeps the current partition, null-basis step matrix, state in
    partition order, and sliced log-mass tables, and runs kernel
    sweeps.  The inference module drives these directly; run_phased
    and run_fixed wrap one of them in the phased schedule.
    """

    def __init__(self, A, y, model, cfg, rng, basis_cols=None,
                 initial=None):
        self.A = A
        self.ent = np.ascontiguousarray(A.entries, dtype=np.int64)
        y = np.asarray(getattr(y, "counts", y), dtype=np.int64)
        if y.ndim == 2 and y.shape[0] == 1:
            y = y[0]
        if y.ndim != 1 or y.shape[0] != self.ent.shape[0]:
            raise ValidationError("count vector does not match matrix")
        self.y = y
        self.n, self.r = self.ent.shape
        self.k = self.r - self.n
        if model.r != self.r:
            raise ValidationError(
                f"model has {model.r} per-route means but the matrix "
                f"has {self.r} routes"
            )
        self.cfg = cfg
        self.rng = rng
        self.proposal = _PROPOSALS[cfg.proposal]
        self.random_scan = 1 if cfg.sweep_order == "random" else 0
        self.V = int(y.max()) + 1 if y.size else 1
        if initial is None:
            initial = initial_feasible(A, y, "any")
        state_x = np.asarray(getattr(initial, "x", initial),
                             dtype=np.int64)
        if state_x.shape != (self.r,):
            raise ValidationError("initial state has the wrong length")
        if (state_x < 0).any() or not np.array_equal(
            self.ent @ state_x, y
        ):
            raise ValidationError("initial state is not feasible")
        if basis_cols is None:
            part = greedy_reorder(A, np.ones(self.r))
        else:
            part = make_partition(A, basis_cols)
        self._x = state_x.copy()
        self.model = model
        self.iter_no = 0
        self._set_partition(part)
        self.set_model(model)

    # -- partition and model plumbing

    def _set_partition(self, part):
        self.partition = part
        self.U = null_basis(part, self.A)
        if not self.U.is_integer():
            raise ValidationError("partition is not unimodular")
        self.W = np.ascontiguousarray(self.U.top_block_int().T)
        self.basis_idx = np.array([c - 1 for c in part.basis_cols],
                                  dtype=np.int64)
        self.free_idx = np.array([c - 1 for c in part.free_cols],
                                 dtype=np.int64)
        self.x1 = self._x[self.basis_idx].copy()
        self.x2 = self._x[self.free_idx].copy()

    def _slice_tables(self):
        self.lm_basis = np.ascontiguousarray(self.lm[self.basis_idx])
        self.lm_free = np.ascontiguousarray(self.lm[self.free_idx])

    def set_model(self, model):
        """Swap in new parameters and rebuild the log-mass tables."""
        self.model = model
        self.lm = np.ascontiguousarray(log_mass_table(model, self.V))
        self._slice_tables()

    def repartition(self, scores):
        """Re-optimize the basis for the given per-route scores; the
        flow vector itself is unchanged, only its coordinate view."""
        x_now = self.x_full()
        part = greedy_reorder(self.A, scores)
        self._x = x_now
        self._set_partition(part)
        self._slice_tables()

    def set_basis(self, basis_cols):
        x_now = self.x_full()
        self._x = x_now
        self._set_partition(make_partition(self.A, basis_cols))
        self._slice_tables()

    # -- state access

    def x_full(self):
        """Current flows in original route order."""
        x = np.zeros(self.r, dtype=np.int64)
        x[self.basis_idx] = self.x1
        x[self.free_idx] = self.x2
        return x

    def state(self):
        return FlowState(self.x_full(), partition_ref=self.partition)

    def assert_feasible(self):
        x = self.x_full()
        if (x < 0).any() or not np.array_equal(self.ent @ x, self.y):
            raise AssertionError("chain state left the feasible set")

    # -- sweeping

    def run(self, n_sweeps, thin=0):
        """Advance n_sweeps sweeps; record every thin-th sweep (thin=0
        records nothing).  Returns (out_x, out_acc, out_chg,
        acc_coord, chg_route); the per-record arrays are empty when
        not recording."""
        n_rec = n_sweeps // thin if thin else 0
        out_x = np.zeros((n_rec, self.r), dtype=np.int64)
        out_acc = np.zeros(n_rec, dtype=np.int64)
        out_chg = np.zeros(n_rec, dtype=np.int64)
        acc_coord = np.zeros(self.k, dtype=np.int64)
        chg_route = np.zeros(self.r, dtype=np.int64)
        kernels.run_sweeps(
            self.W, self.x1, self.x2, self.lm_basis, self.lm_free,
            self.proposal, self.random_scan, n_sweeps, self.rng,
            thin, out_x, out_acc, out_chg, acc_coord, chg_route,
        )
        self.iter_no += n_sweeps
        return out_x, out_acc, out_chg, acc_coord, chg_route


def sweep(state, m, p, U, cfg, rng):
    """One componentwise sweep, exact reference implementation.

    Walks the free coordinates in ascending order using the exact
    move bounds and log-mass ratio, consuming uniforms in the same
    pattern as the kernels: one draw for the candidate, and a second
    only when the acceptance ratio is below one.  Returns the new
    state and its record.  This is the slow path used for validation;
    the kernels do the same arithmetic on lookup tables.
    """
    from math import exp

    from .models import log_mass_ratio_for_move
    from .polytope import move_bounds

    if cfg.sweep_order != "fixed":
        raise ValidationError("reference sweep supports fixed order only")
    x = state.x.copy()
    k = len(p.free_cols)
    n_acc = 0
    n_chg = 0
    for j in range(k):
        cur = FlowState(x, partition_ref=p)
        b = move_bounds(cur, p, U, j)
        t_cur = int(x[p.free_cols[j] - 1])
        if cfg.proposal == "uniform":
            u = rng.random()
            t = b.lo + int(u * (b.hi - b.lo + 1))
            if t > b.hi:
                t = b.hi
            if t == t_cur:
                n_acc += 1
                continue
            delta = log_mass_ratio_for_move(m, cur, j, t, p, U)
            accept = delta >= 0.0 or rng.random() < exp(delta)
            if not accept:
                continue
        else:
            lps = [log_mass_ratio_for_move(m, cur, j, t, p, U)
                   for t in range(b.lo, b.hi + 1)]
            best = max(lps)
            ws = [exp(v - best) for v in lps]
            total = sum(ws)
            u = rng.random() * total
            csum = 0.0
            pick = len(ws) - 1
            for idx, wv in enumerate(ws):
                csum += wv
                if u < csum:
                    pick = idx
                    break
            t = b.lo + pick
            n_acc += 1
            if t == t_cur:
                continue
        d = t - t_cur
        x[p.free_cols[j] - 1] = t
        for i, c in enumerate(p.basis_cols):
            x[c - 1] += d * int(U.U[i][j])
        n_acc += 1 if cfg.proposal == "uniform" else 0
        n_chg += 1
    new_state = FlowState(x, partition_ref=p)
    slack = float(np.mean([x[c - 1] for c in p.basis_cols]))
    rec = SweepRecord(iter=1, x=new_state.x, n_accepted=n_acc,
                      n_changed=n_chg, slack=slack, phase="main",
                      basis_cols=p.basis_cols)
    return new_state, rec


def _phase_scores(cfg, flows):
    if cfg.score_statistic == "mean":
        return flows.mean(axis=0)
    return np.percentile(flows, 100.0 * cfg.percentile_q, axis=0)


def _run_one_phase(chain, phase_name, n_sweeps, cfg, records, prior,
                   theta_rows):
    """Advance one recorded phase, appending SweepRecords (and theta
    draws when sampling the posterior)."""
    basis_cols = chain.partition.basis_cols
    chg_total = np.zeros(chain.r, dtype=np.int64)
    acc_total = {c: 0 for c in chain.partition.free_cols}
    slack_sum = 0.0
    n_rec = 0
    start_iter = chain.iter_no

    if prior is None:
        out_x, out_acc, out_chg, acc_coord, chg_route = chain.run(
            n_sweeps, thin=cfg.thin
        )
        for rrow, arow, crow, idx in zip(
            out_x, out_acc, out_chg,
            range(cfg.thin, n_sweeps + 1, cfg.thin),
        ):
            # snapshots come back in partition order
            x = np.zeros(chain.r, dtype=np.int64)
            x[chain.basis_idx] = rrow[:chain.n]
            x[chain.free_idx] = rrow[chain.n:]
            slack = float(rrow[:chain.n].mean())
            records.append(SweepRecord(
                iter=start_iter + idx, x=x,
                n_accepted=int(arow), n_changed=int(crow),
                slack=slack, phase=phase_name, basis_cols=basis_cols,
            ))
            slack_sum += slack
            n_rec += 1
        for pos, c in enumerate(chain.partition.order):
            chg_total[c - 1] += int(chg_route[pos])
        for j, c in enumerate(chain.partition.free_cols):
            acc_total[c] += int(acc_coord[j])
    else:
        for s in range(1, n_sweeps + 1):
            _, _, _, acc_coord, chg_route = chain.run(1, thin=0)
            shape = prior.shape + chain.x_full()
            rate = prior.rate + 1.0
            theta = chain.rng.gamma(shape, 1.0 / rate)
            chain.set_model(chain.model.with_params(theta))
            for pos, c in enumerate(chain.partition.order):
                chg_total[c - 1] += int(chg_route[pos])
            for j, c in enumerate(chain.partition.free_cols):
                acc_total[c] += int(acc_coord[j])
            if s % cfg.thin == 0:
                x = chain.x_full()
                slack = float(x[chain.basis_idx].mean())
                records.append(SweepRecord(
                    iter=chain.iter_no, x=x,
                    n_accepted=int(acc_coord.sum()),
                    n_changed=int(chg_route.sum()),
                    slack=slack, phase=phase_name,
                    basis_cols=basis_cols,
                ))
                theta_rows.append(theta)
                slack_sum += slack
                n_rec += 1

    if n_sweeps > 0 and int(chg_total.sum()) == 0:
        warnings.warn(
            f"chain made no moves during phase {phase_name} "
            f"({n_sweeps} sweeps); the partition leaves it stuck",
            StuckChainWarning,
            stacklevel=3,
        )
    chain.assert_feasible()
    return PhaseStats(
        name=phase_name,
        n_sweeps=n_sweeps,
        basis_cols=basis_cols,
        accepted_by_free_route=acc_total,
        changed_by_route=chg_total,
        mean_slack=slack_sum / n_rec if n_rec else float("nan"),
    )


def _run_schedule(chain, cfg, prior, do_pilots):
    records = []
    theta_rows = []
    stats = []
    if do_pilots:
        for ph in range(1, cfg.n_pilot_phases + 1):
            name = f"pilot-{ph}"
            n0 = len(records)
            stats.append(_run_one_phase(
                chain, name, cfg.pilot_iters, cfg, records, prior,
                theta_rows,
            ))
            phase_flows = np.stack([r.x for r in records[n0:]]) \
                if len(records) > n0 else None
            if phase_flows is not None and cfg.pilot_iters > 0:
                chain.repartition(_phase_scores(cfg, phase_flows))
    if cfg.burn_in > 0:
        if prior is None:
            chain.run(cfg.burn_in, thin=0)
        else:
            for _ in range(cfg.burn_in):
                chain.run(1, thin=0)
                shape = prior.shape + chain.x_full()
                theta = chain.rng.gamma(shape, 1.0 / (prior.rate + 1.0))
                chain.set_model(chain.model.with_params(theta))
    stats.append(_run_one_phase(
        chain, "main", cfg.main_iters, cfg, records, prior, theta_rows,
    ))
    theta = np.stack(theta_rows) if theta_rows else None
    return ChainOutput(
        records=records,
        phase_stats=stats,
        final_state=chain.state(),
        final_partition=chain.partition,
        theta=theta,
    )


def run_phased(A, y, m, prior=None, cfg=None, rng=None,
               initial_basis=None, initial_state=None):
    """Adaptive-partition chain: pilot phases with partition updates
    from the sampled flows, then burn-in and the main run at the
    frozen partition.

    With a PriorSpec, the model must be Poisson and each iteration
    ends with a conjugate redraw of theta given the current flows;
    the output's theta array then holds one draw per record.
    """
    if cfg is None:
        raise ValidationError("a SamplerConfig is required")
    if prior is not None and m.kind != "poisson":
        raise ValidationError("posterior sampling requires the poisson model")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    chain = _Chain(A, y, m, cfg, rng, basis_cols=initial_basis,
                   initial=initial_state)
    return _run_schedule(chain, cfg, prior, do_pilots=True)


def run_fixed(A, y, m, cfg=None, rng=None, initial_basis=None,
              initial_state=None):
    """Fixed-partition baseline: no pilots, no partition updates;
    burn-in then the main run on the initial partition (greedy with
    unit scores unless basis columns are given)."""
    if cfg is None:
        raise ValidationError("a SamplerConfig is required")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    chain = _Chain(A, y, m, cfg, rng, basis_cols=initial_basis,
                   initial=initial_state)
    return _run_schedule(chain, cfg, prior=None, do_pilots=False)
