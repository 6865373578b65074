"""Customer flow sampling: booking requests, in-window cancellations,
check-ins, and walk-ins.

All randomness flows through explicit numpy Generators, so identical seeds
yield bit-identical event streams. Arrival intensities are stored as a total
mass plus a normalized density, which makes a scaled Beta density and a
piecewise-constant rate interchangeable, and lets non-homogeneous Poisson
streams be sampled exactly by count-then-order-statistics (draw a Poisson
count for the total mass, then i.i.d. times from the density).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc


def substream(master_seed, *path):
    """Generator for one sub-process, derived from the master seed.

    The split rule is SeedSequence([master, *path]) with integer path
    components, conventionally (replication, day, subprocess id). Distinct
    paths give statistically independent streams.
    """
    entropy = [int(master_seed)] + [int(x) for x in path]
    return np.random.default_rng(np.random.SeedSequence(entropy))


class RateFunction:
    """Nonnegative arrival intensity over an interval.

    Stored as (mass, normalized density). Supported shapes: piecewise
    constant over contiguous intervals, and a Beta(a, b) density scaled to a
    total mass.
    """

    def __init__(self, kind, t0, t1, mass, breaks=None, piece_mass=None,
                 a=None, b=None):
        if t1 < t0:
            raise ValueError("empty domain")
        if mass < 0:
            raise ValueError("negative total mass")
        self.kind = kind
        self.t0 = float(t0)
        self.t1 = float(t1)
        self.mass = float(mass)
        self.breaks = breaks
        self.piece_mass = piece_mass
        self.a = a
        self.b = b

    @classmethod
    def constant(cls, rate, t0=0.0, t1=1.0):
        return cls.piecewise([((t0, t1), rate)])

    @classmethod
    def piecewise(cls, pieces):
        """pieces: list of ((lo, hi), rate) with contiguous intervals."""
        if not pieces:
            raise ValueError("no pieces")
        breaks = [pieces[0][0][0]]
        masses = []
        for (lo, hi), rate in pieces:
            if rate < 0:
                raise ValueError("negative rate")
            if hi < lo:
                raise ValueError("piece with hi < lo")
            if abs(lo - breaks[-1]) > 1e-12:
                raise ValueError("pieces not contiguous")
            breaks.append(hi)
            masses.append(rate * (hi - lo))
        breaks = np.asarray(breaks, dtype=float)
        masses = np.asarray(masses, dtype=float)
        return cls("piecewise", breaks[0], breaks[-1], float(masses.sum()),
                   breaks=breaks, piece_mass=masses)

    @classmethod
    def beta_shaped(cls, mass, a, b, t0=0.0, t1=1.0):
        if a <= 0 or b <= 0:
            raise ValueError("Beta parameters must be positive")
        return cls("beta", t0, t1, mass, a=a, b=b)

    def sample_times(self, n, rng):
        """n i.i.d. times from the normalized density (unsorted)."""
        if n == 0:
            return np.empty(0)
        if self.kind == "beta":
            return self.t0 + (self.t1 - self.t0) * rng.beta(self.a, self.b, n)
        if self.mass <= 0:
            raise ValueError("cannot sample from a zero-mass rate")
        w = self.piece_mass / self.mass
        idx = rng.choice(len(w), size=n, p=w)
        u = rng.random(n)
        lo = self.breaks[idx]
        hi = self.breaks[idx + 1]
        return lo + u * (hi - lo)

    def mass_between(self, lo, hi):
        lo = max(lo, self.t0)
        hi = min(hi, self.t1)
        if hi <= lo:
            return 0.0
        if self.kind == "beta":
            span = self.t1 - self.t0
            zlo = (lo - self.t0) / span
            zhi = (hi - self.t0) / span
            return self.mass * float(betainc(self.a, self.b, zhi)
                                     - betainc(self.a, self.b, zlo))
        cum = np.concatenate([[0.0], np.cumsum(self.piece_mass)])

        def cdf(x):
            i = np.searchsorted(self.breaks, x, side="right") - 1
            i = min(max(i, 0), len(self.piece_mass) - 1)
            seg = self.breaks[i + 1] - self.breaks[i]
            frac = 0.0 if seg == 0 else (x - self.breaks[i]) / seg
            return cum[i] + frac * self.piece_mass[i]

        return float(cdf(hi) - cdf(lo))

    def mass_after(self, u):
        return self.mass_between(u, self.t1)


class KeepCurve:
    """Nondecreasing keep probability p over the booking window.

    A request alive at time t ultimately survives the window with
    probability p(t); the curve must end at 1. Piecewise linear between
    knots; a repeated knot time encodes a jump. Flat segments carry no
    cancellation mass, so the conditional cancel-time law
    P(cancel by tau | booked at s) = 1 - p(s)/p(tau) is sampled by inverting
    the curve.
    """

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.values.shape:
            raise ValueError("times/values shape mismatch")
        if len(self.times) < 2:
            raise ValueError("need at least two knots")
        if np.any(np.diff(self.times) < 0):
            raise ValueError("knot times must be nondecreasing")
        if np.any(np.diff(self.values) < 0):
            raise ValueError("keep probability must be nondecreasing")
        if np.any((self.values < 0) | (self.values > 1)):
            raise ValueError("keep probability outside [0, 1]")
        if self.values[-1] != 1.0:
            raise ValueError("keep probability must equal 1 at the window end")

    @classmethod
    def constant(cls, p, t0, t1):
        """p everywhere inside the window, jumping to 1 at the end."""
        if p == 1.0:
            return cls([t0, t1], [1.0, 1.0])
        return cls([t0, t1, t1], [p, p, 1.0])

    @classmethod
    def linear(cls, p0, t0, t1, p1=1.0):
        return cls([t0, t1], [p0, p1])

    @classmethod
    def always(cls, t0, t1):
        return cls([t0, t1], [1.0, 1.0])

    @property
    def t_start(self):
        return float(self.times[0])

    @property
    def t_end(self):
        return float(self.times[-1])

    def value(self, t):
        return np.interp(t, self.times, self.values)

    def _inverse(self, y):
        """inf{t : p(t) >= y} for scalar y in (0, 1]."""
        i = int(np.searchsorted(self.values, y, side="left"))
        if i == 0:
            return float(self.times[0])
        v0, v1 = self.values[i - 1], self.values[i]
        t0, t1 = self.times[i - 1], self.times[i]
        if v1 == v0:
            return float(t0)
        return float(t0 + (y - v0) / (v1 - v0) * (t1 - t0))

    def cancel_time(self, s, rng):
        """Cancellation time for a non-surviving request booked at s."""
        p_s = float(self.value(s))
        if p_s >= 1.0:
            raise ValueError("a request with keep probability 1 cannot cancel")
        if p_s <= 0.0:
            # survival is impossible; the request cancels immediately
            return min(self.t_end, s + 1e-12 * max(1.0, self.t_end - self.t_start))
        u = 1.0 - rng.random()  # in (0, 1]
        y = p_s / (1.0 - u * (1.0 - p_s))
        tau = self._inverse(min(y, 1.0))
        return max(tau, s)


@dataclass(frozen=True)
class DurationLaw:
    """Occupancy duration in whole nights.

    kind "geometric": P(D >= j+1 | D >= j) = q_stay, so D >= 1 with mean
    1/(1 - q_stay). kind "constant": always d nights. delta is the effective
    per-day departure fraction.
    """

    kind: str
    q_stay: float = 0.0
    d: int = 1

    def __post_init__(self):
        if self.kind not in ("geometric", "constant"):
            raise ValueError(f"unknown duration law {self.kind!r}")
        if self.kind == "geometric" and not 0.0 <= self.q_stay < 1.0:
            raise ValueError("q_stay must be in [0, 1)")
        if self.kind == "constant" and (self.d < 1 or self.d != int(self.d)):
            raise ValueError("d must be a positive integer")

    @property
    def delta(self):
        if self.kind == "geometric":
            return 1.0 - self.q_stay
        return 1.0 / self.d

    def sample(self, rng, size=None):
        if self.kind == "constant":
            if size is None:
                return self.d
            return np.full(size, self.d, dtype=int)
        return rng.geometric(1.0 - self.q_stay, size)


@dataclass
class StageProfiles:
    """Per-day generative profile of the two-stage customer flow."""

    stage1_rate: RateFunction      # over the booking window [0, k0]
    keep_curve: KeepCurve          # same domain; ends at 1
    show_prob: float               # q1: Type-I show probability
    arrival_density: RateFunction  # mass 1 over the service day [0, 1]
    walkin_rate: RateFunction      # over the service day [0, 1]
    duration_law: DurationLaw

    def __post_init__(self):
        if not 0.0 < self.show_prob <= 1.0:
            raise ValueError("show probability must be in (0, 1]")
        if abs(self.arrival_density.mass - 1.0) > 1e-9:
            raise ValueError("arrival density must integrate to 1")
        if abs(self.keep_curve.t_end - self.stage1_rate.t1) > 1e-9:
            raise ValueError("keep curve and booking rate domains differ")

    @property
    def window(self):
        return self.stage1_rate.t1 - self.stage1_rate.t0


@dataclass
class BookingRecord:
    """One Stage-I booking request with its realized outcome.

    request_time and cancel_time are relative to the window start.
    arrival_time/shows hold the would-be Stage-II outcome of this customer;
    they are attached at sampling time so that different admission policies
    replay the same randomness.
    """

    request_time: float
    survives_stage1: bool
    cancel_time: float | None
    duration: int
    arrival_time: float | None = None
    shows: bool | None = None

    def __post_init__(self):
        if self.survives_stage1 != (self.cancel_time is None):
            raise ValueError("cancel_time must be present iff the booking cancels")
        if self.cancel_time is not None and self.cancel_time < self.request_time:
            raise ValueError("cancel_time before request_time")


@dataclass
class CheckInRecord:
    """A Stage-II arrival: reserved customer (type1) or walk-in (type2)."""

    arrival_time: float
    shows: bool
    duration: int
    kind: str  # "type1" | "type2"

    def __post_init__(self):
        if self.kind not in ("type1", "type2"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.kind == "type2" and not self.shows:
            raise ValueError("walk-ins always show")


@dataclass
class DayRealization:
    """One sampled day: the full Stage-I and Stage-II event stream."""

    day: int
    bookings: list = field(default_factory=list)   # sorted by request_time
    walkins: list = field(default_factory=list)    # sorted by arrival_time


def sample_nhpp(rate, rng):
    """Sorted event times of a non-homogeneous Poisson process.

    The count is Poisson(total mass); given the count, times are i.i.d.
    from the normalized density.
    """
    if rate.mass <= 0:
        return np.empty(0)
    n = rng.poisson(rate.mass)
    return np.sort(rate.sample_times(n, rng))


def sample_stage1_day(profiles, k, rng):
    """Booking requests for day k with survival and cancellation outcomes."""
    curve = profiles.keep_curve
    if curve.values[-1] != 1.0:
        raise ValueError("keep probability must equal 1 at the window end")
    times = sample_nhpp(profiles.stage1_rate, rng)
    n = len(times)
    p = np.atleast_1d(curve.value(times))
    survives = rng.random(n) < p
    durations = profiles.duration_law.sample(rng, n)
    records = []
    for i in range(n):
        cancel = None if survives[i] else curve.cancel_time(times[i], rng)
        records.append(BookingRecord(
            request_time=float(times[i]),
            survives_stage1=bool(survives[i]),
            cancel_time=cancel,
            duration=int(durations[i]),
        ))
    return records


def sample_stage2_day(profiles, B, k, rng):
    """Stage-II events for day k given B surviving bookings.

    Returns (type1_checkins, walkins), both time-sorted. Type-I records get
    an arrival time from the arrival density and show with probability q1;
    walk-ins follow the walk-in rate and always show.
    """
    if B < 0:
        raise ValueError("B must be nonnegative")
    arr, shows, dur = _sample_type1(profiles, B, rng)
    order = np.argsort(arr, kind="stable")
    type1 = [CheckInRecord(float(arr[i]), bool(shows[i]), int(dur[i]), "type1")
             for i in order]
    walkins = sample_walkins(profiles, rng)
    return type1, walkins


def _sample_type1(profiles, n, rng):
    """Unsorted Stage-II outcome arrays for n reserved customers."""
    if n == 0:
        z = np.empty(0)
        return z, z.astype(bool), z.astype(int)
    arr = profiles.arrival_density.sample_times(n, rng)
    shows = rng.random(n) < profiles.show_prob
    dur = profiles.duration_law.sample(rng, n)
    return arr, shows, np.atleast_1d(dur)


def sample_walkins(profiles, rng):
    times = sample_nhpp(profiles.walkin_rate, rng)
    dur = profiles.duration_law.sample(rng, len(times))
    return [CheckInRecord(float(t), True, int(d), "type2")
            for t, d in zip(times, np.atleast_1d(dur))]


def attach_stage2_outcomes(bookings, profiles, rng):
    """Attach would-be Stage-II outcomes to every booking request.

    Outcomes are drawn for all requests, admitted or not, so clairvoyant
    selection and any admission policy replay identical randomness.
    """
    arr, shows, dur = _sample_type1(profiles, len(bookings), rng)
    for i, rec in enumerate(bookings):
        rec.arrival_time = float(arr[i])
        rec.shows = bool(shows[i])
    return bookings


def sample_day(profiles, k, rng):
    """Full realization of day k: bookings with outcomes, plus walk-ins."""
    bookings = sample_stage1_day(profiles, k, rng)
    attach_stage2_outcomes(bookings, profiles, rng)
    walkins = sample_walkins(profiles, rng)
    return DayRealization(day=k, bookings=bookings, walkins=walkins)
