"""Multi-day discrete-event engine.

Each day runs Stage I (booking requests and cancellations replayed through
an admission rule) and Stage II (check-ins, walk-ins, and the confirmation
reveal replayed through a check-in rule), with inter-day coupling only
through the occupancy ledger. The benchmark trajectory concatenates
single-day offline optima with clairvoyant Stage-I selection on the same
realizations (common random numbers); a hybrid trajectory (offline-optimal
Stage II on top of the policy's Stage-I acceptances) splits the regret into
Stage-I and Stage-II components.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .benchmarks import clairvoyant_stage1_select
from .flows import (
    DayRealization,
    StageProfiles,
    attach_stage2_outcomes,
    sample_stage1_day,
    sample_walkins,
    substream,
)
from .policies import (
    StageTwoState,
    dass2_decide_walkin,
    heuristic2_decide_walkin,
    heuristic_stage1_threshold,
    heuristic_stage2_standard,
    max_bookings_within,
    stage1_threshold,
    type1_checkin_decide,
)
from .policies import estimated_capacity as _estimated_capacity


class CapacityError(RuntimeError):
    """Committed rooms exceeded physical capacity (engine invariant)."""


@dataclass
class ScenarioConfig:
    """Full generative and economic description of one instance."""

    T: int
    C: int
    k0: int
    v: float
    reward: float
    overbook_penalty: float
    profiles: StageProfiles | list
    seed: int = 0
    warm_start: bool = True

    def __post_init__(self):
        if self.T < 0 or self.C < 1 or self.k0 < 1:
            raise ValueError("invalid scenario dimensions")
        if not -self.k0 < self.v <= 1.0:
            raise ValueError("confirmation time outside (-k0, 1]")
        if isinstance(self.profiles, list) and len(self.profiles) != self.T:
            raise ValueError("per-day profile list must have length T")

    def profiles_for(self, k):
        if isinstance(self.profiles, list):
            return self.profiles[k - 1]
        return self.profiles

    @property
    def v_effective(self):
        """A call during Stage I behaves like a call at the day start."""
        return max(self.v, 0.0)


class OccupancyLedger:
    """Committed room-nights by absolute day, truncated at the horizon."""

    def __init__(self, C, T):
        self.C = C
        self.T = T
        self.committed = {}
        self.total_room_nights = 0

    def occupied(self, day):
        return self.committed.get(day, 0)

    def admit(self, day, duration):
        last = min(day + duration - 1, self.T)
        for j in range(day, last + 1):
            n = self.committed.get(j, 0) + 1
            if n > self.C:
                raise CapacityError(f"day {j}: committed {n} > capacity {self.C}")
            self.committed[j] = n
        self.total_room_nights += max(0, last - day + 1)


# ---------------------------------------------------------------------------
# policies

@dataclass(frozen=True)
class AdaptivePolicy:
    """Safety-stock booking control + expected shown-ups check-in control."""

    iota: float
    alpha: float


@dataclass(frozen=True)
class HeuristicPolicy:
    """Fixed booking cap (1+beta) delta C / q1 + constant q1 B standard."""

    beta: float


@dataclass(frozen=True)
class OraclePolicy:
    """Clairvoyant Stage-I fill + single-day offline-optimal Stage II."""


hat_capacity = lru_cache(maxsize=None)(_estimated_capacity)


def replay_stage1(bookings, decide):
    """Run booking requests and cancellations of accepted bookings in time
    order through an admission rule decide(t, B_alive) -> bool.

    Cancellations are processed before requests at equal timestamps.
    Returns the accepted records.
    """
    cancels = []
    alive = 0
    accepted = []
    for rec in bookings:
        while cancels and cancels[0] <= rec.request_time:
            heapq.heappop(cancels)
            alive -= 1
        if decide(rec.request_time, alive):
            alive += 1
            accepted.append(rec)
            if not rec.survives_stage1:
                heapq.heappush(cancels, rec.cancel_time)
    return accepted


def stage1_accept(policy, bookings, profiles, C):
    """Accepted bookings for one day under the given policy's Stage-I rule."""
    law = profiles.duration_law
    q1 = profiles.show_prob
    curve = profiles.keep_curve
    if isinstance(policy, AdaptivePolicy):
        hat_C = hat_capacity(law, C, q1, policy.iota)
        iota = policy.iota

        def decide(t, alive):
            p = float(curve.value(t))
            return stage1_threshold(alive + 1, p, iota) <= hat_C

    elif isinstance(policy, HeuristicPolicy):
        from .policies import HeuristicParams
        cap = heuristic_stage1_threshold(HeuristicParams(policy.beta), law, C, q1)

        def decide(t, alive):
            return alive + 1 <= cap

    else:
        raise TypeError(f"no Stage-I rule for {type(policy).__name__}")
    return replay_stage1(bookings, decide)


@dataclass
class Stage2Result:
    served_type1: list
    served_walkins: list
    overbooked: int


def replay_stage2(survivors, walkins, C_tilde, C_rooms, v, q1, alpha,
                  walkin_rate, kind, standard=None):
    """Replay one service day through a check-in rule.

    kind: "adaptive" (confirmation reveal at v), "oracle" (reveal at 0),
    or "heuristic" (constant standard, no reveal). Reserved customers are
    processed before walk-ins at equal timestamps; the reveal is processed
    before any event at or after v.
    """
    if kind == "oracle":
        kind, v = "adaptive", 0.0
    events = [(r.arrival_time, 0, r) for r in survivors]
    events += [(r.arrival_time, 1, r) for r in walkins]
    events.sort(key=lambda e: (e[0], e[1]))

    state = StageTwoState(B=len(survivors), C_tilde=C_tilde, C_rooms=C_rooms)
    shows_total = sum(1 for r in survivors if r.shows)
    served_t1, served_wk = [], []
    overbooked = 0
    revealed = False

    def reveal():
        # confirmed future check-ins = total shows minus those already decided
        state.revealed_B3 = shows_total - state.B1 - overbooked

    if kind == "adaptive" and v <= 0.0:
        reveal()
        revealed = True
    for u, tag, rec in events:
        if kind == "adaptive" and not revealed and u >= v:
            reveal()
            revealed = True
        if tag == 0:  # reserved customer
            if rec.shows:
                if revealed:
                    state.revealed_B3 -= 1
                if type1_checkin_decide(state):
                    state.B1 += 1
                    served_t1.append(rec)
                else:
                    overbooked += 1
            else:
                state.B2 += 1
        else:  # walk-in
            if kind == "adaptive":
                if not revealed:
                    state.remaining_walkin_mass = walkin_rate.mass_after(u)
                accept = dass2_decide_walkin(state, u, v, q1, alpha)
            else:
                accept = heuristic2_decide_walkin(state, standard)
            if accept:
                served_wk.append(rec)
    return Stage2Result(served_t1, served_wk, overbooked)


def stage2_run(policy, survivors, walkins, C_tilde, C_rooms, profiles, v):
    q1 = profiles.show_prob
    if isinstance(policy, AdaptivePolicy):
        return replay_stage2(survivors, walkins, C_tilde, C_rooms, max(v, 0.0),
                             q1, policy.alpha, profiles.walkin_rate, "adaptive")
    if isinstance(policy, HeuristicPolicy):
        standard = heuristic_stage2_standard(len(survivors), q1)
        return replay_stage2(survivors, walkins, C_tilde, C_rooms, max(v, 0.0),
                             q1, 0.0, profiles.walkin_rate, "heuristic",
                             standard=standard)
    raise TypeError(f"no Stage-II rule for {type(policy).__name__}")


def oracle_stage2(survivors, walkins, C_rooms):
    """Single-day offline optimum on realized outcomes: serve all showing
    reserved customers if they fit, then the earliest walk-ins."""
    finals = [r for r in survivors if r.shows]
    finals.sort(key=lambda r: r.arrival_time)
    if len(finals) <= C_rooms:
        served_wk = walkins[:C_rooms - len(finals)]
        return Stage2Result(finals, served_wk, 0)
    return Stage2Result(finals[:C_rooms], [], len(finals) - C_rooms)


# ---------------------------------------------------------------------------
# day and horizon execution

@dataclass
class DayOutcome:
    day: int
    B_accepted: int
    type1_served: int
    walkins_served: int
    overbooked: int
    idle: int
    day_loss: float
    C_tilde_used: float


def allocated_capacity(scenario, ledger, k, profiles):
    """(threshold value, physical rooms) available for day k."""
    law = profiles.duration_law
    if law.kind == "constant":
        return scenario.C / law.d, scenario.C // law.d
    free = scenario.C - ledger.occupied(k)
    return float(free), free


def _finish_day(scenario, ledger, k, B, result, C_tilde):
    for rec in result.served_type1:
        ledger.admit(k, rec.duration)
    for rec in result.served_walkins:
        ledger.admit(k, rec.duration)
    idle = scenario.C - ledger.occupied(k)
    loss = (scenario.overbook_penalty * result.overbooked
            + scenario.reward * idle)
    return DayOutcome(
        day=k, B_accepted=B,
        type1_served=len(result.served_type1),
        walkins_served=len(result.served_walkins),
        overbooked=result.overbooked, idle=idle, day_loss=loss,
        C_tilde_used=C_tilde,
    )


def run_day(k, realization, stage1_policy, stage2_policy, ledger, scenario,
            accepted=None):
    """One day of the policy trajectory; admits guests into the ledger."""
    profiles = scenario.profiles_for(k)
    if accepted is None:
        accepted = stage1_accept(stage1_policy, realization.bookings,
                                 profiles, scenario.C)
    survivors = [r for r in accepted if r.survives_stage1]
    C_tilde, C_rooms = allocated_capacity(scenario, ledger, k, profiles)
    result = stage2_run(stage2_policy, survivors, realization.walkins,
                        C_tilde, C_rooms, profiles, scenario.v)
    return _finish_day(scenario, ledger, k, len(survivors), result, C_tilde)


def run_oracle_day(k, survivors, walkins, ledger, scenario):
    """One day with offline-optimal Stage II on a given surviving set."""
    profiles = scenario.profiles_for(k)
    C_tilde, C_rooms = allocated_capacity(scenario, ledger, k, profiles)
    result = oracle_stage2(survivors, walkins, C_rooms)
    return _finish_day(scenario, ledger, k, len(survivors), result, C_tilde)


def run_benchmark_day(k, realization, ledger, scenario):
    """Clairvoyant Stage-I fill + offline-optimal Stage II."""
    profiles = scenario.profiles_for(k)
    C_tilde, C_rooms = allocated_capacity(scenario, ledger, k, profiles)
    selected = clairvoyant_stage1_select(realization.bookings, C_rooms)
    result = oracle_stage2(selected, realization.walkins, C_rooms)
    return _finish_day(scenario, ledger, k, len(selected), result, C_tilde)


def warm_start_ledger(scenario, rng):
    """Initial occupancy: full house with residual stays.

    Geometric: C guests whose extra nights follow the memoryless law (0
    extra nights frees the room on day 1). Constant(d): floor(C/d) guests
    per residual-age class.
    """
    ledger = OccupancyLedger(scenario.C, scenario.T)
    if not scenario.warm_start or scenario.T == 0:
        return ledger
    law = scenario.profiles_for(1).duration_law
    if law.kind == "geometric":
        if law.q_stay > 0.0:
            extras = rng.geometric(1.0 - law.q_stay, scenario.C) - 1
            for extra in extras:
                if extra > 0:
                    ledger.admit(1, int(extra))
    else:
        per_class = scenario.C // law.d
        for age in range(1, law.d):
            for _ in range(per_class):
                ledger.admit(1, law.d - age)
    return ledger


def realize_day(scenario, rep, k):
    """Sample day k's realization from the documented stream-split rule:
    SeedSequence([master, rep, day, sub]) with sub 1=bookings,
    2=check-in outcomes, 3=walk-ins (0 is the warm start)."""
    profiles = scenario.profiles_for(k)
    bookings = sample_stage1_day(profiles, k, substream(scenario.seed, rep, k, 1))
    attach_stage2_outcomes(bookings, profiles, substream(scenario.seed, rep, k, 2))
    walkins = sample_walkins(profiles, substream(scenario.seed, rep, k, 3))
    return DayRealization(day=k, bookings=bookings, walkins=walkins)


def run_horizon(scenario, stage1_policy, stage2_policy, seed=None, rep=0):
    """Policy trajectory over days 1..T. Deterministic given the seed."""
    if seed is not None:
        scenario = _reseeded(scenario, seed)
    ledger = warm_start_ledger(scenario, substream(scenario.seed, rep, 0, 0))
    outcomes = []
    for k in range(1, scenario.T + 1):
        realization = realize_day(scenario, rep, k)
        outcomes.append(run_day(k, realization, stage1_policy, stage2_policy,
                                ledger, scenario))
    return outcomes


def _reseeded(scenario, seed):
    from dataclasses import replace
    return replace(scenario, seed=seed)


# ---------------------------------------------------------------------------
# regret accounting

@dataclass
class RegretReport:
    policy_loss: np.ndarray
    benchmark_loss: np.ndarray
    regret: np.ndarray
    cumulative_regret: np.ndarray
    stage1_component: np.ndarray | None
    stage2_component: np.ndarray | None
    first_cycle_allowance: float


def first_cycle_allowance(scenario):
    """Idle loss forced in the first duration cycle by the capacity split:
    sum over the first d days of C (d-k)/d r for constant durations, zero
    for geometric."""
    law = scenario.profiles_for(1).duration_law
    if law.kind != "constant":
        return 0.0
    d = law.d
    return sum(scenario.C * (d - k) / d * scenario.reward
               for k in range(1, min(d, scenario.T) + 1))


def compute_regret(policy_outcomes, benchmark_outcomes, scenario,
                   hybrid_outcomes=None):
    if len(policy_outcomes) != len(benchmark_outcomes):
        raise ValueError("mismatched trajectory lengths")
    pol = np.array([o.day_loss for o in policy_outcomes])
    ben = np.array([o.day_loss for o in benchmark_outcomes])
    regret = pol - ben
    s1 = s2 = None
    if hybrid_outcomes is not None:
        hyb = np.array([o.day_loss for o in hybrid_outcomes])
        s1 = hyb - ben
        s2 = pol - hyb
    return RegretReport(
        policy_loss=pol, benchmark_loss=ben, regret=regret,
        cumulative_regret=np.cumsum(regret),
        stage1_component=s1, stage2_component=s2,
        first_cycle_allowance=first_cycle_allowance(scenario),
    )


def run_experiment(scenario, policies, rep=0):
    """All policy trajectories plus hybrid and benchmark on one realization.

    policies: dict name -> AdaptivePolicy | HeuristicPolicy | OraclePolicy.
    Stage-I acceptances depend only on the Stage-I stream, so each policy's
    accepted set is shared between its own and its hybrid trajectory.
    Returns dict name -> RegretReport.
    """
    names = list(policies)
    warm = lambda: warm_start_ledger(  # noqa: E731 - one-line factory
        scenario, substream(scenario.seed, rep, 0, 0))
    bench_ledger = warm()
    ledgers = {n: warm() for n in names}
    hybrid_ledgers = {n: warm() for n in names}
    outcomes = {n: [] for n in names}
    hybrid_outcomes = {n: [] for n in names}
    bench_outcomes = []
    for k in range(1, scenario.T + 1):
        realization = realize_day(scenario, rep, k)
        bench_outcomes.append(run_benchmark_day(k, realization, bench_ledger,
                                                scenario))
        profiles = scenario.profiles_for(k)
        for n in names:
            policy = policies[n]
            if isinstance(policy, OraclePolicy):
                outcomes[n].append(run_benchmark_day(
                    k, realization, ledgers[n], scenario))
                hybrid_outcomes[n].append(run_benchmark_day(
                    k, realization, hybrid_ledgers[n], scenario))
                continue
            accepted = stage1_accept(policy, realization.bookings, profiles,
                                     scenario.C)
            survivors = [r for r in accepted if r.survives_stage1]
            outcomes[n].append(run_day(k, realization, policy, policy,
                                       ledgers[n], scenario, accepted=accepted))
            hybrid_outcomes[n].append(run_oracle_day(
                k, survivors, realization.walkins, hybrid_ledgers[n], scenario))
    return {n: compute_regret(outcomes[n], bench_outcomes, scenario,
                              hybrid_outcomes[n])
            for n in names}


@dataclass
class AggregateReport:
    """Monte Carlo aggregate of one policy's regret across replications."""

    n_reps: int
    mean_cumulative: np.ndarray
    stderr_cumulative: np.ndarray
    per_rep_total: np.ndarray
    first_cycle_allowance: float

    @property
    def mean_total(self):
        return float(self.mean_cumulative[-1]) if len(self.mean_cumulative) else 0.0

    @property
    def stderr_total(self):
        return float(self.stderr_cumulative[-1]) if len(self.stderr_cumulative) else 0.0


def aggregate(curves):
    """Stack per-rep cumulative-regret curves into mean and standard error."""
    curves = np.asarray(curves, dtype=float)
    n = curves.shape[0]
    mean = curves.mean(axis=0)
    if n > 1:
        stderr = curves.std(axis=0, ddof=1) / np.sqrt(n)
    else:
        stderr = np.zeros_like(mean)
    return n, mean, stderr


def monte_carlo_set(scenario, policies, n_reps):
    """Independent replications of run_experiment; order-independent
    commutative aggregation."""
    if n_reps < 1:
        raise ValueError("n_reps must be at least 1")
    curves = {n: [] for n in policies}
    allowance = first_cycle_allowance(scenario)
    for rep in range(n_reps):
        reports = run_experiment(scenario, policies, rep=rep)
        for n, rpt in reports.items():
            curves[n].append(rpt.cumulative_regret)
    out = {}
    for n, cs in curves.items():
        n_reps_, mean, stderr = aggregate(cs)
        out[n] = AggregateReport(
            n_reps=n_reps_, mean_cumulative=mean, stderr_cumulative=stderr,
            per_rep_total=np.asarray([c[-1] for c in cs]),
            first_cycle_allowance=allowance,
        )
    return out


def monte_carlo(scenario, policy, n_reps):
    """Single-policy aggregate (see monte_carlo_set)."""
    return monte_carlo_set(scenario, {"policy": policy}, n_reps)["policy"]


# ---------------------------------------------------------------------------
# single-day cells (fixed surviving bookings, Stage II only)

def single_day_cell(B, C, profiles, v, alpha, kind, n_sims, master_seed,
                    reward=1.0, overbook_penalty=1.0, cell=()):
    """Replications of a single service day with B surviving bookings and
    full capacity C. Returns (policy_losses, oracle_losses,
    rejected_walkins) arrays; the last one supports a capacity-mismatch
    objective that also charges turned-away walk-in demand.

    kind: "adaptive", "heuristic", or "oracle". The offline optimum depends
    on the realization only through the show and walk-in counts, so oracle
    losses (and adaptive at v <= 0, which is identical) are computed from
    counts directly.
    """
    q1 = profiles.show_prob
    pol_losses = np.empty(n_sims)
    ora_losses = np.empty(n_sims)
    rejected = np.empty(n_sims)
    count_based = kind == "oracle" or (kind == "adaptive" and v <= 0.0)
    for i in range(n_sims):
        rng = substream(master_seed, *cell, i)
        if count_based:
            finals = rng.binomial(B, q1)
            n_wk = rng.poisson(profiles.walkin_rate.mass)
            ora = _count_loss(finals, n_wk, C, reward, overbook_penalty)
            pol_losses[i] = ora_losses[i] = ora
            rejected[i] = n_wk - min(n_wk, max(0, C - finals))
            continue
        from .flows import sample_stage2_day
        type1, walkins = sample_stage2_day(profiles, B, 1, rng)
        finals = sum(1 for r in type1 if r.shows)
        ora_losses[i] = _count_loss(finals, len(walkins), C, reward,
                                    overbook_penalty)
        if kind == "adaptive":
            res = replay_stage2(type1, walkins, float(C), C, max(v, 0.0), q1,
                                alpha, profiles.walkin_rate, "adaptive")
        else:
            res = replay_stage2(type1, walkins, float(C), C, 0.0, q1, 0.0,
                                profiles.walkin_rate, "heuristic",
                                standard=heuristic_stage2_standard(B, q1))
        idle = C - len(res.served_type1) - len(res.served_walkins)
        pol_losses[i] = overbook_penalty * res.overbooked + reward * idle
        rejected[i] = len(walkins) - len(res.served_walkins)
    return pol_losses, ora_losses, rejected


def _count_loss(finals, n_walkins, C, reward, overbook_penalty):
    over = max(0, finals - C)
    idle = max(0, C - finals - n_walkins)
    return overbook_penalty * over + reward * idle
