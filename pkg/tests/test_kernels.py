"""Backend contract: the compiled and pure-Python sweep kernels must
be bit-for-bit interchangeable, consume the identical RNG stream, and
sample the exact conditional law under the gibbs proposal."""

import collections
import subprocess
import sys

import numpy as np
import pytest

from routeflow import _kernels_py as kpy
from routeflow import intlin, kernels, models, polytope
from routeflow.models import TrafficModel

kc = pytest.importorskip(
    "routeflow._kernels", reason="compiled kernel not built"
)


@pytest.fixture(scope="module")
def arena(request):
    """Partition, null-basis step matrix, mass tables, and a starting
    point on the 20-point junction fiber."""
    junction = request.getfixturevalue("junction")
    y = np.array([10, 20, 19, 9])
    p = intlin.make_partition(junction, (1, 2, 3, 5))
    U = intlin.null_basis(p, junction)
    W = np.ascontiguousarray(U.top_block_int().T)  # (k, n)
    m = TrafficModel("negbin", [3.0, 5.0, 9.0, 1.0, 6.0, 2.0], 0.8)
    tab = models.log_mass_table(m, int(y.max()) + 1)
    lm_basis = np.ascontiguousarray(tab[[c - 1 for c in p.basis_cols]])
    lm_free = np.ascontiguousarray(tab[[c - 1 for c in p.free_cols]])
    s0 = polytope.initial_feasible(junction, y, "max-L1")
    return {
        "A": junction, "y": y, "p": p, "W": W, "m": m,
        "lm_basis": lm_basis, "lm_free": lm_free,
        "x1": s0.x1(p), "x2": s0.x2(p),
    }


def drive(mod, arena, proposal, random_scan, n_sweeps, thin, seed):
    """Run one kernel and return every output plus an RNG stream
    fingerprint (the next uniform after the run)."""
    p = arena["p"]
    n, k = p.n, len(p.free_cols)
    x1 = arena["x1"].copy()
    x2 = arena["x2"].copy()
    n_rec = n_sweeps // thin
    out_x = np.zeros((n_rec, n + k), dtype=np.int64)
    out_acc = np.zeros(n_rec, dtype=np.int64)
    out_chg = np.zeros(n_rec, dtype=np.int64)
    acc = np.zeros(k, dtype=np.int64)
    chg = np.zeros(n + k, dtype=np.int64)
    rng = np.random.default_rng(seed)
    mod.run_sweeps(arena["W"], x1, x2, arena["lm_basis"],
                   arena["lm_free"], proposal, random_scan, n_sweeps,
                   rng, thin, out_x, out_acc, out_chg, acc, chg)
    return x1, x2, out_x, out_acc, out_chg, acc, chg, rng.random()


def unpack(row, p):
    """Recorded row (partition order) back to original route order."""
    x = np.zeros(len(p.order), dtype=np.int64)
    for pos, c in enumerate(p.order):
        x[c - 1] = row[pos]
    return x


@pytest.mark.parametrize("proposal", [kernels.PROPOSAL_UNIFORM,
                                      kernels.PROPOSAL_GIBBS])
@pytest.mark.parametrize("random_scan", [0, 1])
@pytest.mark.parametrize("seed", [1, 7, 12345])
def test_backends_bit_identical(arena, proposal, random_scan, seed):
    ra = drive(kc, arena, proposal, random_scan, 500, 10, seed)
    rb = drive(kpy, arena, proposal, random_scan, 500, 10, seed)
    for a, b in zip(ra[:-1], rb[:-1]):
        assert np.array_equal(a, b)
    assert ra[-1] == rb[-1], "RNG streams diverged"


@pytest.mark.parametrize("proposal", [kernels.PROPOSAL_UNIFORM,
                                      kernels.PROPOSAL_GIBBS])
def test_recorded_states_feasible(arena, proposal):
    ra = drive(kc, arena, proposal, 0, 500, 10, 7)
    ent, y, p = arena["A"].entries, arena["y"], arena["p"]
    for row in ra[2]:
        x = unpack(row, p)
        assert (x >= 0).all()
        assert (ent @ x == y).all()


def test_acceptance_counters_consistent(arena):
    _, _, out_x, out_acc, out_chg, acc, chg, _ = drive(
        kc, arena, kernels.PROPOSAL_UNIFORM, 0, 400, 1, 3)
    p = arena["p"]
    n, k = p.n, len(p.free_cols)
    # with thin=1 the per-sweep records partition the cumulative counts
    assert out_acc.sum() == acc.sum()
    assert (out_acc <= k).all()
    # a changed sweep requires at least one accepted proposal
    assert ((out_chg == 0) | (out_acc > 0)).all()
    # a free coordinate changes at most once per acceptance
    assert (chg[n:] <= acc).all()
    # every transition between recorded states was counted as a change
    diffs = (np.diff(out_x, axis=0) != 0).sum(axis=0)
    assert (chg >= diffs).all()


def test_gibbs_matches_exact_conditional(arena):
    """Empirical law over the 20-point fiber vs the enumerated one."""
    n_sweeps = 200000
    ra = drive(kc, arena, kernels.PROPOSAL_GIBBS, 0, n_sweeps, 1, 99)
    counts = collections.Counter(
        tuple(unpack(row, arena["p"])) for row in ra[2]
    )
    pts = polytope.enumerate_feasible(arena["A"], arena["y"])
    lw = {tuple(int(v) for v in s.x): models.log_mass(arena["m"], s.x)
          for s in pts}
    mx = max(lw.values())
    z = sum(np.exp(v - mx) for v in lw.values())
    tv = 0.5 * sum(
        abs(np.exp(v - mx) / z - counts.get(key, 0) / n_sweeps)
        for key, v in lw.items()
    )
    assert tv < 0.01, tv
    assert sum(counts.values()) == n_sweeps


def test_tu_scan_backends_agree(junction, smallnet):
    mats = [
        junction.entries,
        smallnet.entries,
        np.ones((1, 5), dtype=np.int64),
        np.eye(4, dtype=np.int64),
        np.array([[1, 1, 0], [0, 1, 1], [1, 0, 1]], dtype=np.int64),
    ]
    seen = set()
    for M in mats:
        M = np.ascontiguousarray(M, dtype=np.int64)
        a, b = kc.tu_scan(M), kpy.tu_scan(M)
        assert a == b
        seen.add(bool(a))
    assert seen == {True, False}


def test_backend_selection_reporting():
    assert kernels.BACKEND in ("c", "python")
    assert kernels.PROPOSAL_UNIFORM == 0
    assert kernels.PROPOSAL_GIBBS == 1


CROSS_BACKEND_SNIPPET = r"""
import io
import sys
import numpy as np
from routeflow import kernels, netmodel
from routeflow.models import TrafficModel
from routeflow.sampler import SamplerConfig, run_phased
A = netmodel.load_network(
    "1,1,1,0,0,0\n1,1,1,1,1,1\n0,1,1,0,1,1\n0,0,1,0,0,1\n")
m = TrafficModel("negbin", np.array([3.0, 1.0, 4.0, 1.5, 5.0, 2.0]),
                 alpha=0.7)
cfg = SamplerConfig(main_iters=300, seed=5, burn_in=20, pilot_iters=100,
                    n_pilot_phases=2, proposal="gibbs-exact", thin=3,
                    sweep_order="random")
out = run_phased(A, np.array([10, 20, 19, 9]), m, cfg=cfg)
buf = io.StringIO()
out.to_csv(buf)
sys.stdout.write(kernels.BACKEND + "\n" + buf.getvalue())
"""


def test_cross_process_backend_equality():
    """A full phased run must serialize identically under both
    backends; ROUTEFLOW_PURE=1 forces the pure-Python kernels."""
    r_c = subprocess.run(
        [sys.executable, "-c", CROSS_BACKEND_SNIPPET],
        capture_output=True, text=True,
        env={"PATH": "/usr/bin:/bin"},
    )
    r_py = subprocess.run(
        [sys.executable, "-c", CROSS_BACKEND_SNIPPET],
        capture_output=True, text=True,
        env={"PATH": "/usr/bin:/bin", "ROUTEFLOW_PURE": "1"},
    )
    assert r_c.returncode == 0, r_c.stderr
    assert r_py.returncode == 0, r_py.stderr
    head_c, _, body_c = r_c.stdout.partition("\n")
    head_py, _, body_py = r_py.stdout.partition("\n")
    assert head_c == "c"
    assert head_py == "python"
    assert body_c == body_py
    assert len(body_c.splitlines()) == 1 + 2 * (100 // 3) + 300 // 3
