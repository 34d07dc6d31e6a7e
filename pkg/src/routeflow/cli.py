"""Command line front end binding the library into reproducible runs.

Subcommands:

  check      structural report on a routing matrix (and optional counts)
  enumerate  list every integer flow vector consistent with one count row
  sample     draw conditional route flows by MCMC at fixed parameters
  em         maximum-likelihood fit of mean route flows (stochastic EM)
  bayes      posterior sampling of mean route flows under gamma priors
  summarize  chain diagnostics recomputed from a stored sample CSV

Exit codes: 0 success, 1 usage error, 2 invalid input data, 3 numerical
failure (inconsistent counts, empty feasible set, no unimodular basis).
Results go to --out or standard output; diagnostics go to standard
error.  Every long flag may instead come from a JSON --config file;
values given on the command line win.  A seed is mandatory for sample,
em and bayes: there are no silently nondeterministic runs.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .diagnostics import effective_sample_size, rhat, summarize
from .errors import (
    NumericalError,
    ParseError,
    RouteflowError,
    ValidationError,
)
from .inference import EmConfig, bayes_poisson, stochastic_em
from .models import PriorSpec, TrafficModel
from .netmodel import (
    check_identifiability_preconditions,
    consistency_check,
    load_counts,
    load_network,
)
from .polytope import DEFAULT_ENUM_CAP, enumerate_feasible, flows_to_csv
from .sampler import SamplerConfig, run_phased

__all__ = ["main", "build_parser"]


class _Usage(Exception):
    """A problem with how the command was invoked (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; this artifact
    reserves 2 for data errors, so usage problems exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# Defaults applied after the config-file merge.  argparse itself leaves
# every flag at None so that "explicitly given on the command line" is
# distinguishable from "fill from config or default".  Keys without a
# flag of their own (the EM inner knobs, the pilot scoring controls)
# can only come from a config file.
_DEFAULTS = {
    "check": {},
    "enumerate": {"cap": DEFAULT_ENUM_CAP},
    "sample": {
        "model": "poisson",
        "iters": 10000,
        "burn_in": 0,
        "pilot_iters": 10000,
        "pilot_phases": 2,
        "proposal": "uniform",
        "chains": 1,
        "thin": 1,
        "score_statistic": "mean",
        "percentile_q": 0.05,
        "sweep_order": "fixed",
    },
    "em": {
        "model": "poisson",
        "iters": 100,
        "burn_in": 2000,
        "pilot_iters": 1000,
        "pilot_phases": 2,
        "proposal": "uniform",
        "sweep_order": "fixed",
        "m_init": 2000,
        "m_growth_factor": 1.5,
        "confidence": 0.90,
        "increase_tol": 0.01,
    },
    "bayes": {
        "iters": 10000,
        "burn_in": 0,
        "pilot_iters": 10000,
        "pilot_phases": 2,
        "proposal": "uniform",
        "chains": 1,
        "thin": 1,
    },
    "summarize": {"thin": 1},
}

_REQUIRED = {
    "check": ("matrix",),
    "enumerate": ("matrix", "counts"),
    "sample": ("matrix", "counts", "seed"),
    "em": ("matrix", "counts", "seed"),
    "bayes": ("matrix", "counts", "priors", "seed"),
    "summarize": (),
}

_INT_KEYS = ("iters", "burn_in", "pilot_iters", "pilot_phases", "seed",
             "chains", "thin", "cap", "m_init")
_FLOAT_KEYS = ("alpha", "m_growth_factor", "confidence", "increase_tol",
               "percentile_q")


def build_parser():
    parser = _Parser(
        prog="routeflow",
        description="Route-flow sampling and mean inference from "
                    "link counts.",
    )
    sub = parser.add_subparsers(dest="cmd", metavar="subcommand",
                                parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON file supplying any flag; "
                                        "explicit flags win")
        p.add_argument("--out", help="output path (default: stdout)")

    p = sub.add_parser("check", help="structural report on a matrix")
    p.add_argument("--matrix", help="routing matrix CSV")
    p.add_argument("--counts", help="optional link counts CSV")
    common(p)

    p = sub.add_parser("enumerate", help="list the feasible flows")
    p.add_argument("--matrix", help="routing matrix CSV")
    p.add_argument("--counts", help="link counts CSV (one row)")
    p.add_argument("--cap", type=int, help="abort beyond this many "
                                           "feasible points")
    common(p)

    def sampling_flags(p, chains=True):
        p.add_argument("--iters", type=int, help="main-phase sweeps")
        p.add_argument("--burn-in", type=int, dest="burn_in")
        p.add_argument("--pilot-iters", type=int, dest="pilot_iters")
        p.add_argument("--pilot-phases", type=int, dest="pilot_phases")
        p.add_argument("--proposal", choices=("uniform", "gibbs-exact"))
        p.add_argument("--seed", type=int, help="RNG seed (mandatory)")
        p.add_argument("--thin", type=int, help="record every k-th sweep")
        if chains:
            p.add_argument("--chains", type=int,
                           help="independent chains; files suffixed "
                                "_chain1, _chain2, ...")

    p = sub.add_parser("sample", help="conditional flows at fixed "
                                      "parameters")
    p.add_argument("--matrix", help="routing matrix CSV")
    p.add_argument("--counts", help="link counts CSV (one row)")
    p.add_argument("--priors", help="per-route means CSV "
                                    "(route_id,theta); default all one")
    p.add_argument("--model", choices=("poisson", "negbin"))
    p.add_argument("--alpha", type=float,
                   help="negbin dispersion (with --model negbin)")
    sampling_flags(p)
    common(p)

    p = sub.add_parser("em", help="stochastic-EM fit of route means")
    p.add_argument("--matrix", help="routing matrix CSV")
    p.add_argument("--counts", help="link counts CSV, one row per "
                                    "observation period")
    p.add_argument("--model", choices=("poisson", "negbin"))
    sampling_flags(p, chains=False)
    common(p)

    p = sub.add_parser("bayes", help="posterior sampling of route means")
    p.add_argument("--matrix", help="routing matrix CSV")
    p.add_argument("--counts", help="link counts CSV, one row per "
                                    "observation period")
    p.add_argument("--priors", help="gamma priors CSV "
                                    "(route_id,shape,rate)")
    sampling_flags(p)
    common(p)

    p = sub.add_parser("summarize", help="diagnostics from a sample CSV")
    p.add_argument("chain", help="CSV written by the sample subcommand")
    p.add_argument("--matrix", help="routing matrix CSV, enables "
                                    "per-sweep acceptance rates")
    p.add_argument("--thin", type=int, help="re-thin before the ESS")
    common(p)

    return parser


def _apply_config(args, defaults):
    supplied = {}
    if args.config is not None:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"config file {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ParseError("config file must hold a JSON object")
        supplied = {str(k).replace("-", "_"): v for k, v in doc.items()}
        known = set(defaults)
        known.update(k for k in vars(args) if k not in ("cmd", "config"))
        unknown = sorted(set(supplied) - known)
        if unknown:
            raise ParseError(
                f"config file {args.config}: unknown keys: "
                + ", ".join(unknown)
            )
    for key, value in supplied.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    for key, value in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    for key in _INT_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            try:
                setattr(args, key, int(value))
            except (TypeError, ValueError):
                raise ParseError(f"{key} must be an integer, got "
                                 f"{value!r}") from None
    for key in _FLOAT_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            try:
                setattr(args, key, float(value))
            except (TypeError, ValueError):
                raise ParseError(f"{key} must be a number, got "
                                 f"{value!r}") from None
    seed = getattr(args, "seed", None)
    if seed is not None and seed < 0:
        raise ValidationError("seed must be a nonnegative integer")
    thin = getattr(args, "thin", None)
    if thin is not None and thin < 1:
        raise ValidationError("thin must be a positive integer")
    return args


def _require(args, names):
    missing = ["--" + n.replace("_", "-") for n in names
               if getattr(args, n, None) is None]
    if missing:
        raise _Usage("missing required flag(s): " + ", ".join(missing))


def _load_matrix(path):
    with open(path, encoding="utf-8") as fh:
        return load_network(fh)


def _load_counts(path, n_links):
    with open(path, encoding="utf-8") as fh:
        return load_counts(fh, n_links=n_links)


def _single_row(sample, cmd):
    if sample.n_obs != 1:
        raise ValidationError(
            f"{cmd} expects exactly one observation row, got "
            f"{sample.n_obs}"
        )
    return sample.counts[0]


def _numeric_rows(path, width, what):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [row for row in csv.reader(fh)
                if row and any(cell.strip() for cell in row)]
    if not rows:
        raise ParseError(f"{what} file {path} contains no rows")

    def numeric(cell):
        try:
            float(cell)
            return True
        except ValueError:
            return False

    if any(not numeric(cell) for cell in rows[0]):
        rows = rows[1:]
        if not rows:
            raise ParseError(f"{what} file {path} has a header but no "
                             f"rows")
    out = []
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(
                f"{what} row {i + 1} has {len(row)} cells, expected "
                f"{width}"
            )
        try:
            out.append([float(cell) for cell in row])
        except ValueError as exc:
            raise ParseError(f"{what} row {i + 1}: {exc}") from exc
    return out


def _by_route(rows, r, what):
    """Collect per-route values from (route_id, v1, ...) rows into
    columns indexed 0..r-1, requiring each route exactly once."""
    width = len(rows[0]) - 1
    cols = np.full((width, r), np.nan)
    for row in rows:
        if row[0] != int(row[0]) or not 1 <= row[0] <= r:
            raise ValidationError(
                f"{what}: route id {row[0]} outside 1..{r}"
            )
        j = int(row[0]) - 1
        if not np.isnan(cols[0, j]):
            raise ValidationError(f"{what}: route {j + 1} listed twice")
        cols[:, j] = row[1:]
    missing = np.flatnonzero(np.isnan(cols[0])) + 1
    if missing.size:
        raise ValidationError(
            f"{what}: missing route(s) {', '.join(map(str, missing))}"
        )
    return cols


def _load_priors(path, r):
    rows = _numeric_rows(path, 3, "priors")
    shape, rate = _by_route(rows, r, "priors")
    return PriorSpec(shape=shape, rate=rate)


def _load_params(path, r):
    rows = _numeric_rows(path, 2, "parameters")
    return _by_route(rows, r, "parameters")[0]


def _sanitize(obj):
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_sanitize(v) for v in obj]
    return obj


def _write_text(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _write_json(doc, out):
    _write_text(json.dumps(_sanitize(doc), indent=2) + "\n", out)


def _chain_seeds(seed, k):
    if k < 1:
        raise ValidationError("chains must be at least 1")
    if k == 1:
        return [int(seed)]
    return [int(s) for s in
            np.random.SeedSequence(int(seed)).generate_state(k)]


def _chain_path(out, i, k):
    if k == 1:
        return out
    p = Path(out)
    return str(p.with_name(f"{p.stem}_chain{i}{p.suffix}"))


def _cmd_check(args):
    net = _load_matrix(args.matrix)
    report = check_identifiability_preconditions(net)
    doc = {
        "matrix": args.matrix,
        "n_links": net.n_links,
        "n_routes": net.n_routes,
        "rows_removed": list(net.rows_removed),
        "duplicate_columns": list(net.duplicate_columns),
        "identifiable": report.identifiability_ok,
        "basis_column_sums_coprime": report.coprime_ok,
        "total_unimodularity": report.tu_status,
    }
    code = 0
    if args.counts is not None:
        sample = _load_counts(args.counts, net.n_links)
        doc["counts"] = args.counts
        doc["n_observations"] = sample.n_obs
        doc["counts_consistent"] = consistency_check(net, sample)
        if not doc["counts_consistent"]:
            code = 3
    _write_json(doc, args.out)
    if code:
        print("routeflow check: counts admit no nonnegative rational "
              "solution", file=sys.stderr)
    return code


def _cmd_enumerate(args):
    net = _load_matrix(args.matrix)
    y = _single_row(_load_counts(args.counts, net.n_links), "enumerate")
    states = enumerate_feasible(net, y, cap=args.cap)
    if not states:
        print("routeflow enumerate: no integer flow vector reproduces "
              "the counts", file=sys.stderr)
        return 3
    if args.out is None:
        flows_to_csv(states, sys.stdout)
    else:
        flows_to_csv(states, args.out)
    print(f"routeflow enumerate: {len(states)} feasible flow vectors",
          file=sys.stderr)
    return 0


def _make_model(args, r):
    theta = (np.ones(r) if args.priors is None
             else _load_params(args.priors, r))
    if args.model == "negbin":
        if args.alpha is None:
            raise _Usage("--alpha is required with --model negbin")
        return TrafficModel("negbin", theta, args.alpha)
    if args.alpha is not None:
        raise _Usage("--alpha applies only to --model negbin")
    return TrafficModel("poisson", theta)


def _cmd_sample(args):
    net = _load_matrix(args.matrix)
    y = _single_row(_load_counts(args.counts, net.n_links), "sample")
    model = _make_model(args, net.n_routes)
    if args.chains > 1 and args.out is None:
        raise _Usage("--chains above one requires --out")
    seeds = _chain_seeds(args.seed, args.chains)
    for i, chain_seed in enumerate(seeds, start=1):
        cfg = SamplerConfig(
            main_iters=args.iters,
            seed=chain_seed,
            burn_in=args.burn_in,
            pilot_iters=args.pilot_iters,
            n_pilot_phases=args.pilot_phases,
            proposal=args.proposal,
            score_statistic=args.score_statistic,
            percentile_q=args.percentile_q,
            sweep_order=args.sweep_order,
            thin=args.thin,
        )
        chain = run_phased(net, y, model, cfg=cfg)
        out = _chain_path(args.out, i, len(seeds))
        if out is None:
            chain.to_csv(sys.stdout)
        else:
            chain.to_csv(out)
        stats = summarize(chain).to_json()
        if out is not None:
            Path(out).with_suffix(".stats.json").write_text(
                stats + "\n", encoding="utf-8")
        label = f" chain {i}" if len(seeds) > 1 else ""
        print(f"routeflow sample{label}: seed {chain_seed}, "
              f"{cfg.main_iters} main sweeps", file=sys.stderr)
        print(stats, file=sys.stderr)
    return 0


def _cmd_em(args):
    net = _load_matrix(args.matrix)
    sample = _load_counts(args.counts, net.n_links)
    cfg = EmConfig(
        m_init=args.m_init,
        burn_in_per_estep=args.burn_in,
        max_outer_iters=args.iters,
        m_growth_factor=args.m_growth_factor,
        confidence=args.confidence,
        increase_tol=args.increase_tol,
        pilot_iters=args.pilot_iters,
        n_pilot_phases=args.pilot_phases,
        proposal=args.proposal,
        sweep_order=args.sweep_order,
    )
    result = stochastic_em(net, sample.counts, args.model, cfg,
                           np.random.default_rng(args.seed))
    _write_text(result.to_json() + "\n", args.out)
    state = "converged" if result.converged else \
        "NOT converged (flag recorded in the result)"
    print(f"routeflow em: {state} after {result.n_outer} outer "
          f"iterations, final M {result.m_final}", file=sys.stderr)
    return 0


def _cmd_bayes(args):
    net = _load_matrix(args.matrix)
    sample = _load_counts(args.counts, net.n_links)
    prior = _load_priors(args.priors, net.n_routes)
    if args.chains > 1 and args.out is None:
        raise _Usage("--chains above one requires --out")
    seeds = _chain_seeds(args.seed, args.chains)
    posts = []
    for i, chain_seed in enumerate(seeds, start=1):
        cfg = SamplerConfig(
            main_iters=args.iters,
            seed=chain_seed,
            burn_in=args.burn_in,
            pilot_iters=args.pilot_iters,
            n_pilot_phases=args.pilot_phases,
            proposal=args.proposal,
            thin=args.thin,
        )
        post = bayes_poisson(net, sample.counts, prior, cfg=cfg)
        posts.append(post)
        _write_text(post.to_json() + "\n",
                    _chain_path(args.out, i, len(seeds)))
        label = f" chain {i}" if len(seeds) > 1 else ""
        print(f"routeflow bayes{label}: seed {chain_seed}, "
              f"{post.theta_draws.shape[0]} retained draws, min ESS "
              f"{np.nanmin(post.ess):.0f}", file=sys.stderr)
    if len(posts) > 1:
        ratio = rhat([p.theta_draws for p in posts])
        with np.printoptions(precision=3):
            print(f"routeflow bayes: rhat by route {ratio}",
                  file=sys.stderr)
    return 0


def _read_chain_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if head is None or head[:5] != ["iter", "phase", "slack",
                                        "n_accepted", "n_changed"]:
            raise ParseError(
                f"{path} is not a sample CSV (unexpected header)"
            )
        r = len(head) - 5
        if r < 1:
            raise ParseError(f"{path} has no flow columns")
        phases, slack, accepted, flows = [], [], [], []
        for i, row in enumerate(reader):
            if len(row) != len(head):
                raise ParseError(
                    f"{path} row {i + 2}: {len(row)} cells, expected "
                    f"{len(head)}"
                )
            phases.append(row[1])
            slack.append(float(row[2]))
            accepted.append(int(row[3]))
            flows.append([int(v) for v in row[5:]])
    if not phases:
        raise ValidationError(f"{path} holds no recorded sweeps")
    return (phases, np.array(slack), np.array(accepted),
            np.array(flows, dtype=np.int64))


def _cmd_summarize(args):
    phases, slack, accepted, flows = _read_chain_csv(args.chain)
    k = None
    if args.matrix is not None:
        net = _load_matrix(args.matrix)
        if net.n_routes != flows.shape[1]:
            raise ValidationError(
                f"matrix has {net.n_routes} routes but the chain "
                f"recorded {flows.shape[1]}"
            )
        k = net.n_routes - net.n_links
    order = list(dict.fromkeys(phases))
    idx = {p: np.array([i for i, q in enumerate(phases) if q == p])
           for p in order}

    doc = {
        "chain": args.chain,
        "thin": args.thin,
        "mean_slack_by_phase": {},
        "mean_accepted_by_phase": {},
        "update_coverage_by_phase": {},
    }
    if k is not None:
        doc["acceptance_rate_by_phase"] = {}
    for p in order:
        rows = idx[p]
        doc["mean_slack_by_phase"][p] = float(slack[rows].mean())
        doc["mean_accepted_by_phase"][p] = float(accepted[rows].mean())
        if rows.size > 1:
            moved = (np.diff(flows[rows], axis=0) != 0).any(axis=0)
            coverage = float(moved.mean())
        else:
            coverage = float("nan")
        doc["update_coverage_by_phase"][p] = coverage
        if k is not None:
            doc["acceptance_rate_by_phase"][p] = (
                float(accepted[rows].mean() / k) if k > 0 else
                float("nan")
            )

    main = flows[idx["main"]] if "main" in idx else \
        np.zeros((0, flows.shape[1]), dtype=np.int64)
    main = main[::args.thin]
    ess, degenerate = [], []
    for j in range(main.shape[1]):
        if main.shape[0] == 0:
            e, d = float("nan"), True
        else:
            e, d = effective_sample_size(main[:, j].astype(float))
        ess.append(float(e))
        degenerate.append(bool(d))
    doc["n_draws"] = int(main.shape[0])
    doc["ess"] = ess
    doc["degenerate"] = degenerate
    _write_json(doc, args.out)
    return 0


_DISPATCH = {
    "check": _cmd_check,
    "enumerate": _cmd_enumerate,
    "sample": _cmd_sample,
    "em": _cmd_em,
    "bayes": _cmd_bayes,
    "summarize": _cmd_summarize,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else int(exc.code)
    if args.cmd is None:
        parser.print_usage(sys.stderr)
        print("routeflow: a subcommand is required", file=sys.stderr)
        return 1
    try:
        _apply_config(args, _DEFAULTS[args.cmd])
        _require(args, _REQUIRED[args.cmd])
        return _DISPATCH[args.cmd](args)
    except _Usage as exc:
        print(f"routeflow {args.cmd}: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"routeflow {args.cmd}: {exc}", file=sys.stderr)
        return 3
    except (RouteflowError, OSError) as exc:
        print(f"routeflow {args.cmd}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
