"""Asynchronous gradient-tracking optimizer over digraphs.

Each event runs one agent through local descent, a consensus mix of delayed
neighbor descent states, and a sum-push gradient-tracking update whose
perturbation is the agent's own gradient increment. The same purged age
counter gates both the consensus inputs and the tracking masses. Synchronous
baselines (the lockstep ratio-tracking iteration and the parallel Jacobi
round) live here too.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics as _metrics
from .graph import DiGraph, WeightMatrices
from .objectives import Objective
from .pushsum import _History
from .schedule import Schedule


class DivergenceError(RuntimeError):
    """Iterates blew past the guard radius: the step size is too large."""


@dataclass(frozen=True)
class StepSizePolicy:
    """Constant step, or a per-agent diminishing sequence on local clocks.

    The local rule alpha <- alpha * (1 - c * alpha) is applied each time an
    agent activates, so uncoordinated agents consume their own copies of one
    decaying sequence without any shared counter.
    """

    kind: str
    gamma: float = 0.0
    alpha0: float = 0.0
    c: float = 0.0

    @staticmethod
    def constant(gamma: float) -> "StepSizePolicy":
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        return StepSizePolicy(kind="constant", gamma=gamma)

    @staticmethod
    def local_diminishing(alpha0: float, c: float) -> "StepSizePolicy":
        if alpha0 <= 0 or c <= 0 or c * alpha0 >= 1:
            raise ValueError("need alpha0 > 0, c > 0 and c * alpha0 < 1")
        return StepSizePolicy(kind="local-diminishing", alpha0=alpha0, c=c)


@dataclass
class OptState:
    g: DiGraph
    W: np.ndarray
    A: np.ndarray
    objective: Objective
    n: int
    x: np.ndarray          # (I, n)
    z: np.ndarray          # (I, n) tracking variables
    v_hist: list           # per agent, history of descent states v^t
    rho: dict
    rho_tilde: dict
    tau: dict
    tau_v: dict            # separate ages for the consensus stream (aliased when coupled)
    grad_cache: np.ndarray  # (I, n), gradient of f_i at x_i
    alpha: np.ndarray      # (I,) current local step values
    t_local: np.ndarray    # (I,) activation counts
    k: int = 0
    D_pad: int = 0
    couple_delays: bool = True


def init(objective: Objective, g: DiGraph, weights: WeightMatrices, x0,
         schedule_D: int, policy: StepSizePolicy = None,
         couple_delays: bool = True) -> OptState:
    """Seed tracking variables with local gradients; zero-pad the v history."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    I, n = x0.shape
    if I != g.node_count:
        raise ValueError("x0 must provide one row per agent")
    grad0 = np.vstack([objective.grad_i(i, x0[i]) for i in range(I)])
    zero_vec = np.zeros(n)
    v_hist = [_History(zero_vec) for _ in range(I)]
    rho, rho_tilde, tau = {}, {}, {}
    for e in g.edge_list:
        rho[e] = _History(zero_vec)
        rho_tilde[e] = zero_vec
        tau[e] = -schedule_D
    tau_v = tau if couple_delays else dict(tau)
    alpha0 = policy.alpha0 if (policy and policy.kind == "local-diminishing") else 0.0
    return OptState(
        g=g, W=weights.W, A=weights.A, objective=objective, n=n,
        x=x0.copy(), z=grad0.copy(), v_hist=v_hist,
        rho=rho, rho_tilde=rho_tilde, tau=tau, tau_v=tau_v,
        grad_cache=grad0, alpha=np.full(I, alpha0), t_local=np.zeros(I, dtype=int),
        k=0, D_pad=schedule_D, couple_delays=couple_delays)


def _policy_gamma(state: OptState, policy: StepSizePolicy, agent: int) -> float:
    if policy.kind == "constant":
        return policy.gamma
    return float(state.alpha[agent])


def step(state: OptState, event, policy: StepSizePolicy) -> float:
    """One global iteration; returns the step size the active agent used."""
    i = event.agent
    k = event.k
    g, W, A = state.g, state.W, state.A
    ins = g.in_neighbors(i)

    for j in ins:
        e = (j, i)
        t = k - event.delays[j]
        if t > state.tau[e]:
            state.tau[e] = t
        if not state.couple_delays:
            dv = event.v_delays[j] if getattr(event, "v_delays", None) else event.delays[j]
            tv = k - dv
            if tv > state.tau_v[e]:
                state.tau_v[e] = tv

    gamma = _policy_gamma(state, policy, i)
    v_new = state.x[i] - gamma * state.z[i]
    state.v_hist[i].append(k + 1, v_new)

    x_new = W[i, i] * v_new
    for j in ins:
        x_new = x_new + W[i, j] * state.v_hist[j].at(state.tau_v[(j, i)])

    g_new = state.objective.grad_i(i, x_new)
    zhalf = state.z[i] + (g_new - state.grad_cache[i])
    for j in ins:
        e = (j, i)
        zhalf = zhalf + (state.rho[e].at(state.tau[e]) - state.rho_tilde[e])

    state.z[i] = A[i, i] * zhalf
    for j in g.out_neighbors(i):
        e = (i, j)
        state.rho[e].append(k + 1, state.rho[e].current() + A[j, i] * zhalf)
    cutoff = k - state.D_pad
    for j in ins:
        e = (j, i)
        state.rho_tilde[e] = state.rho[e].at(state.tau[e])
        state.rho[e].prune(min(state.tau[e], cutoff))
    state.v_hist[i].prune(cutoff)

    state.x[i] = x_new
    state.grad_cache[i] = g_new
    state.t_local[i] += 1
    if policy.kind == "local-diminishing":
        a = state.alpha[i]
        state.alpha[i] = a * (1.0 - policy.c * a)
    state.k = k + 1
    return gamma


def tracking_mass_residual(state: OptState) -> float:
    """Relative gap in the invariant: agent plus in-flight tracking mass
    equals the sum of current local gradients."""
    m = state.z.sum(axis=0)
    for e in state.g.edge_list:
        m = m + (state.rho[e].current() - state.rho_tilde[e])
    target = state.grad_cache.sum(axis=0)
    return float(np.linalg.norm(m - target) / (1.0 + np.linalg.norm(target)))


@dataclass
class OptTrace:
    k: np.ndarray
    round: np.ndarray
    Msc: np.ndarray
    MF: np.ndarray
    J: np.ndarray
    mass_residual: np.ndarray
    gamma: np.ndarray
    final_x: np.ndarray

    def rows(self):
        for t in range(len(self.k)):
            yield (int(self.k[t]), int(self.round[t]), self.Msc[t], self.MF[t],
                   self.J[t], self.mass_residual[t], self.gamma[t])


def _record(objective, state_x, x_star, mass_res, gamma):
    I = state_x.shape[0]
    if x_star is not None:
        msc = _metrics.merit_Msc(state_x, x_star)
        J = msc / I
    else:
        msc = np.nan
        J = np.nan
    mf = _metrics.merit_MF(state_x, objective)
    return msc, mf, J, mass_res, gamma


def run(objective: Objective, g: DiGraph, weights: WeightMatrices,
        schedule: Schedule, policy: StepSizePolicy, x0,
        metrics_stride: int = 1, round_index=None,
        couple_delays: bool = True) -> OptTrace:
    """Drive the engine through a certified schedule, recording merit traces.

    Metric rows are emitted every `metrics_stride` events (plus the final
    one). Aborts with DivergenceError when iterates leave the guard radius.
    """
    state = init(objective, g, weights, x0, schedule.certified_D, policy,
                 couple_delays=couple_delays)
    guard = 1e8 * (1.0 + float(np.linalg.norm(state.x)))
    K = schedule.horizon
    record_at = set(range(0, K, metrics_stride))
    record_at.add(K - 1)
    ks, rounds, mscs, mfs, js, residuals, gammas = [], [], [], [], [], [], []
    I = g.node_count
    for ev in schedule.events:
        gamma = step(state, ev, policy)
        if float(np.linalg.norm(state.x[ev.agent])) > guard:
            raise DivergenceError(
                f"iterate norm exceeded guard at k={ev.k}; reduce the step size")
        if ev.k in record_at:
            msc, mf, J, res, gm = _record(
                objective, state.x, objective.x_star,
                tracking_mass_residual(state), gamma)
            ks.append(ev.k)
            rounds.append(int(round_index[ev.k]) if round_index is not None
                          else ev.k // I + 1)
            mscs.append(msc)
            mfs.append(mf)
            js.append(J)
            residuals.append(res)
            gammas.append(gm)
    return OptTrace(k=np.array(ks), round=np.array(rounds), Msc=np.array(mscs),
                    MF=np.array(mfs), J=np.array(js),
                    mass_residual=np.array(residuals), gamma=np.array(gammas),
                    final_x=state.x.copy())


def induced_global_steps(schedule: Schedule, policy: StepSizePolicy) -> np.ndarray:
    """Global step sequence gamma^k produced by uncoordinated local clocks."""
    if policy.kind != "local-diminishing":
        raise ValueError("induced steps are defined for the local-diminishing policy")
    alpha = np.full(schedule.n_agents, policy.alpha0)
    out = np.empty(schedule.horizon)
    for ev in schedule.events:
        out[ev.k] = alpha[ev.agent]
        a = alpha[ev.agent]
        alpha[ev.agent] = a * (1.0 - policy.c * a)
    return out


# ---------------------------------------------------------------------------
# synchronous baselines
# ---------------------------------------------------------------------------

def sync_tracking_run(objective: Objective, g: DiGraph, weights: WeightMatrices,
                    alpha_sequence, x0, rounds: int) -> OptTrace:
    """Lockstep baseline: descent-and-mix on x, ratio push-sum tracking on z/phi.

    `alpha_sequence` is a constant, an array indexed by round, or a callable
    round -> step size.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    I, n = x0.shape
    W, A = weights.W, weights.A
    x = x0.copy()
    grads = np.vstack([objective.grad_i(i, x[i]) for i in range(I)])
    z = grads.copy()
    y = grads.copy()
    phi = np.ones(I)
    guard = 1e8 * (1.0 + float(np.linalg.norm(x0)))

    def alpha_at(r):
        if callable(alpha_sequence):
            return float(alpha_sequence(r))
        if np.ndim(alpha_sequence) == 0:
            return float(alpha_sequence)
        return float(alpha_sequence[r])

    ks, rds, mscs, mfs, js, residuals, gammas = [], [], [], [], [], [], []
    for r in range(rounds):
        a_r = alpha_at(r)
        x = W @ (x - a_r * y)
        new_grads = np.vstack([objective.grad_i(i, x[i]) for i in range(I)])
        z = A @ z + (new_grads - grads)
        phi = A @ phi
        y = z / phi[:, None]
        grads = new_grads
        if float(np.linalg.norm(x)) > guard:
            raise DivergenceError(f"synchronous iterate diverged at round {r}")
        res = float(np.linalg.norm(z.sum(axis=0) - grads.sum(axis=0))
                    / (1.0 + np.linalg.norm(grads.sum(axis=0))))
        msc, mf, J, res, gm = _record(objective, x, objective.x_star, res, a_r)
        ks.append(r)
        rds.append(r + 1)
        mscs.append(msc)
        mfs.append(mf)
        js.append(J)
        residuals.append(res)
        gammas.append(gm)
    return OptTrace(k=np.array(ks), round=np.array(rds), Msc=np.array(mscs),
                    MF=np.array(mfs), J=np.array(js),
                    mass_residual=np.array(residuals), gamma=np.array(gammas),
                    final_x=x.copy())


def run_parallel_rounds(objective: Objective, g: DiGraph, weights: WeightMatrices,
                        gamma: float, x0, rounds: int):
    """Synchronous parallel (Jacobi) execution of the asynchronous update map.

    Every agent simultaneously applies one full event using the previous
    round's snapshot of every other agent's state. The event-driven engine
    under a `jacobi_rounds` schedule reproduces this trajectory exactly,
    regardless of the within-round serialization order.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    I, n = x0.shape
    W, A = weights.W, weights.A
    x = x0.copy()
    grads = np.vstack([objective.grad_i(i, x[i]) for i in range(I)])
    z = grads.copy()
    v_prev = np.zeros((I, n))
    rho = {e: np.zeros(n) for e in g.edge_list}
    rho_tilde = {e: np.zeros(n) for e in g.edge_list}
    xs = [x.copy()]
    zs = [z.copy()]
    for _ in range(rounds):
        v_new = x - gamma * z
        x_next = np.empty_like(x)
        zhalf = np.empty_like(z)
        for i in range(I):
            acc = W[i, i] * v_new[i]
            for j in g.in_neighbors(i):
                acc = acc + W[i, j] * v_prev[j]
            x_next[i] = acc
        new_grads = np.vstack([objective.grad_i(i, x_next[i]) for i in range(I)])
        for i in range(I):
            s = z[i] + (new_grads[i] - grads[i])
            for j in g.in_neighbors(i):
                e = (j, i)
                s = s + (rho[e] - rho_tilde[e])
            zhalf[i] = s
        z_next = np.empty_like(z)
        rho_next = dict(rho)
        for i in range(I):
            z_next[i] = A[i, i] * zhalf[i]
            for j in g.out_neighbors(i):
                e = (i, j)
                rho_next[e] = rho[e] + A[j, i] * zhalf[i]
        for e in g.edge_list:
            rho_tilde[e] = rho[e]
        rho = rho_next
        v_prev, x, z, grads = v_new, x_next, z_next, new_grads
        xs.append(x.copy())
        zs.append(z.copy())
    return xs, zs
