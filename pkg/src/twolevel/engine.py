"""Event-driven simulation of the two-level point process.

Two interchangeable engines share the channel formulas of params.py:

* a reference engine (SimState/step) written for clarity, used by unit
  tests and as the law oracle for the compiled path;
* the compiled replicate kernel in _kernels.py, used by simulate() for
  anything with real event traffic.

simulate() is fully deterministic given (seed, config): replicate r draws
from an RNG stream derived from (master seed, r), so results do not depend
on the number of worker threads.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as k
from . import forms
from .errors import EventBudgetExceeded, Extinct, NumericalError, RejectionStall
from .params import (FU, ChannelRates, EffectiveParams, Population,
                     channel_rates, competition_field, sample_mutant_trait)

KIND_NAMES = ("clonal_birth", "mutant_birth", "death",
              "cell1_birth", "cell2_birth", "cell1_death", "cell2_death")

OBS_COLUMNS = ("I", "mass", "y1", "y2", "y1sq", "y2sq", "y1y2", "n2raw")
TF_COLUMNS = ("pairing", "drift_int", "emp_qv", "model_qv", "limit_qv")


@dataclass
class Event:
    kind: str
    actor: int
    time: float
    offset: Optional[np.ndarray] = None  # mutation step, mutant births only


@dataclass
class SimState:
    """Reference simulation state: population + clock + seeded generator."""

    pop: Population
    time: float = 0.0
    event_count: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))


def total_rate(state):
    """Sum of all channel rates over all individuals."""
    return state.pop.total_rate()


def step(state):
    """Apply exactly one transition (direct Gillespie method).

    Returns (Event, state); raises Extinct when the total rate is zero.
    The population caches are rebuilt from scratch after every event, which
    is the point: this engine is the slow, obviously-correct oracle.
    """
    pop = state.pop
    lam = total_rate(state)
    if lam <= 0.0:
        raise Extinct("total event rate is zero")
    dt = state.rng.exponential(1.0 / lam)
    u = state.rng.uniform(0.0, lam)
    cum = 0.0
    idx, ch = pop.size - 1, 6
    done = False
    for i in range(pop.size):
        for c in range(7):
            cum += pop.chan[i, c]
            if u < cum:
                idx, ch = i, c
                done = True
                break
        if done:
            break
    t = state.time + dt
    offset = None
    if ch == 0 or ch == 1:
        newx = pop.x[idx].copy()
        if ch == 1:
            newx = sample_mutant_trait(pop.x[idx], pop.eff, state.rng)
            offset = newx - pop.x[idx]
        pop.x = np.vstack([pop.x, newx[None, :]])
        pop.n1 = np.append(pop.n1, pop.n1[idx])
        pop.n2 = np.append(pop.n2, pop.n2[idx])
    elif ch == 2:
        keep = np.arange(pop.size) != idx
        pop.x = pop.x[keep]
        pop.n1 = pop.n1[keep]
        pop.n2 = pop.n2[keep]
    elif ch == 3:
        pop.n1[idx] += 1
    elif ch == 4:
        pop.n2[idx] += 1
    elif ch == 5:
        pop.n1[idx] -= 1
    else:
        pop.n2[idx] -= 1
    pop.comp = np.zeros(pop.size)
    pop.chan = np.zeros((pop.size, 7))
    pop.rebuild()
    state.time = t
    state.event_count += 1
    return Event(KIND_NAMES[ch], idx, t, offset), state


@dataclass
class Trajectory:
    """Observables of one replicate on the observation grid."""

    times: np.ndarray
    obs: np.ndarray          # (ngrid, 8), columns OBS_COLUMNS
    tf: np.ndarray           # (ngrid, ntf, 5), columns TF_COLUMNS
    tf_names: tuple
    meta: np.ndarray
    log: Optional[dict] = None

    def col(self, name):
        return self.obs[:, OBS_COLUMNS.index(name)]

    @property
    def mass(self):
        return self.col("mass")

    @property
    def extinct_time(self):
        et = self.meta[k.M_EXTINCT_T]
        return None if et < 0 else float(et)

    @property
    def events(self):
        return int(self.meta[k.M_EVENTS])


@dataclass
class ReplicateSet:
    """Per-replicate trajectories of one experiment, in replicate order."""

    times: np.ndarray
    obs: np.ndarray          # (nrep, ngrid, 8)
    tf: np.ndarray           # (nrep, ngrid, ntf, 5)
    tf_names: tuple
    meta: np.ndarray         # (nrep, META_LEN)
    logs: Optional[list] = None

    @property
    def nrep(self):
        return self.obs.shape[0]

    def trajectory(self, r):
        log = None if self.logs is None else self.logs[r]
        return Trajectory(self.times, self.obs[r], self.tf[r], self.tf_names,
                          self.meta[r], log)

    def col(self, name):
        return self.obs[:, :, OBS_COLUMNS.index(name)]

    def tf_col(self, tf_name, col_name):
        j = self.tf_names.index(tf_name)
        return self.tf[:, :, j, TF_COLUMNS.index(col_name)]

    def mean_se(self, name):
        v = self.col(name)
        return v.mean(axis=0), v.std(axis=0, ddof=1) / math.sqrt(v.shape[0])

    def moment_flags(self, mass_ceiling, n2_ceiling):
        """Replicates whose running sup breached a moment ceiling."""
        bad_mass = self.meta[:, k.M_SUP_MASS] > mass_ceiling
        bad_n2 = self.meta[:, k.M_SUP_N2] > n2_ceiling
        return np.where(bad_mass | bad_n2)[0]


def _check_tfs(eff, tfs):
    """f-forms need an analytic mutation expectation when mutation is live."""
    p_row = eff.funcs[5]
    p_is_zero = int(p_row[0]) == forms.CONST and p_row[1] == 0.0
    if p_is_zero:
        return
    for name, (f, g1, g2) in tfs.items():
        if int(f[0]) not in (forms.CONST, forms.EXPNEG_X):
            raise NumericalError(
                f"test function {name!r}: f-form lacks an analytic expectation "
                "under the mutation kernel; use const/expneg_x or set p = 0")


def simulate(eff, init_x, init_n1, init_n2, T, obs_times, seed,
             n_replicates=1, tfs=None, event_budget=50_000_000,
             capacity=None, sumtree_threshold=4096, audit_every=10_000,
             log_capacity=0, check_flags=True):
    """Run replicates of the jump process and collect grid observables.

    eff          -- EffectiveParams (raw or rescaled pack)
    init_*       -- initial individuals, shared by all replicates
    obs_times    -- ascending observation grid, all <= T (cadlag sampling)
    tfs          -- {name: (f_row, g1_row, g2_row)} packed test functions;
                    pairings, event-exact drift integrals, empirical and
                    model quadratic variation are accumulated for each
    seed         -- master seed; replicate r uses stream (seed, r)

    Returns a ReplicateSet.  Raises EventBudgetExceeded / RejectionStall /
    NumericalError if any replicate trips a guard (set check_flags=False to
    get the partial data instead).
    """
    init_x = np.ascontiguousarray(np.atleast_2d(np.asarray(init_x, dtype=float)))
    if init_x.shape[0] == 1 and len(init_n1) > 1:
        init_x = np.repeat(init_x, len(init_n1), axis=0)
    init_n1 = np.asarray(init_n1, dtype=np.int64)
    init_n2 = np.asarray(init_n2, dtype=np.int64)
    obs_times = np.asarray(obs_times, dtype=float)
    if np.any(np.diff(obs_times) < 0) or (obs_times.size and obs_times[-1] > T + 1e-12):
        raise ValueError("obs_times must be ascending and <= T")
    tfs = dict(tfs or {})
    _check_tfs(eff, tfs)
    ntf = len(tfs)
    tf_pack = np.zeros((ntf, 3, 5))
    for j, (name, rows) in enumerate(tfs.items()):
        for s in range(3):
            tf_pack[j, s] = rows[s]

    I0 = init_n1.shape[0]
    if capacity is None:
        capacity = max(4 * I0 + 64, 1024)
    use_tree = capacity > sumtree_threshold or I0 > sumtree_threshold
    u_row = eff.funcs[FU]
    const_u = int(u_row[0]) == forms.CONST
    u0 = u_row[1] if const_u else 0.0

    ngrid = obs_times.shape[0]
    obs_out = np.zeros((n_replicates, ngrid, k.NOBS))
    tf_out = np.zeros((n_replicates, ngrid, ntf, k.NTFCOL))
    meta = np.zeros((n_replicates, k.META_LEN))
    lc = int(log_capacity)
    log_t = np.zeros((n_replicates, lc))
    log_kind = np.zeros((n_replicates, lc), dtype=np.int64)
    log_actor = np.zeros((n_replicates, lc), dtype=np.int64)
    log_iafter = np.zeros((n_replicates, lc), dtype=np.int64)

    lam = eff.lam_eff
    k.run_replicates(
        n_replicates, eff.funcs, eff.box_lo, eff.box_hi, eff.w, eff.a1, eff.a2,
        eff.accel_indiv, eff.cacc1, eff.cacc2, eff.u_scale,
        lam[0, 0], lam[0, 1], lam[1, 0], lam[1, 1],
        eff.mut_scale, eff.cbar, eff.smax, const_u, u0,
        init_x, init_n1, init_n2, float(T), obs_times, tf_pack, ntf > 0,
        np.uint64(seed), int(event_budget), int(audit_every), use_tree,
        int(capacity), obs_out, tf_out, meta,
        log_t, log_kind, log_actor, log_iafter, lc)

    logs = None
    if lc > 0:
        logs = []
        for r in range(n_replicates):
            n = int(meta[r, k.M_LOG_LEN])
            logs.append({"t": log_t[r, :n].copy(), "kind": log_kind[r, :n].copy(),
                         "actor": log_actor[r, :n].copy(), "I_after": log_iafter[r, :n].copy()})

    if check_flags:
        if np.any(meta[:, k.M_STALL] > 0):
            raise RejectionStall("mutation rejection sampling stalled in some replicate")
        if np.any(meta[:, k.M_BUDGET] > 0):
            raise EventBudgetExceeded(
                f"event budget {event_budget} exhausted in replicate(s) "
                f"{np.where(meta[:, k.M_BUDGET] > 0)[0].tolist()}")
        if np.any(meta[:, k.M_CAPACITY] > 0):
            raise NumericalError("population outgrew the engine capacity; raise engine.capacity")
    return ReplicateSet(obs_times, obs_out, tf_out, tuple(tfs.keys()), meta, logs)


def simulate_reference(eff, init_x, init_n1, init_n2, T, obs_times, seed,
                       event_budget=200_000):
    """Reference-engine run of a single replicate (small systems only).

    Same cadlag sampling convention as the compiled engine: the value at a
    grid time is the state left by the last event at or before it.
    """
    obs_times = np.asarray(obs_times, dtype=float)
    init_x = np.atleast_2d(np.asarray(init_x, dtype=float))
    if init_x.shape[0] == 1 and len(init_n1) > 1:
        init_x = np.repeat(init_x, len(init_n1), axis=0)
    pop = Population(init_x, init_n1, init_n2, eff)
    state = SimState(pop, rng=np.random.default_rng(seed))
    out = np.zeros((obs_times.shape[0], len(OBS_COLUMNS)))
    events = []

    def snapshot():
        w, a1, a2 = eff.w, eff.a1, eff.a2
        y1 = pop.n1 * a1
        y2 = pop.n2 * a2
        return np.array([pop.size, w * pop.size, w * y1.sum(), w * y2.sum(),
                         w * (y1 ** 2).sum(), w * (y2 ** 2).sum(),
                         w * (y1 * y2).sum(),
                         float(((pop.n1 + pop.n2) ** 2).sum())])

    ig = 0
    ngrid = obs_times.shape[0]
    while True:
        if total_rate(state) <= 0.0 or state.event_count >= event_budget:
            cur = snapshot()
            while ig < ngrid:
                out[ig] = cur
                ig += 1
            break
        pre = snapshot()
        ev, _ = step(state)
        if state.time > T:
            # the jump lands beyond the horizon: the grid never sees it
            while ig < ngrid:
                out[ig] = pre
                ig += 1
            break
        while ig < ngrid and obs_times[ig] < state.time:
            out[ig] = pre
            ig += 1
        events.append(ev)
    traj = Trajectory(obs_times, out, np.zeros((obs_times.shape[0], 0, 5)), (),
                      np.zeros(k.META_LEN))
    return traj, events, state
