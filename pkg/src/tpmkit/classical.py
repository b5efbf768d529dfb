"""Classical temporal point processes: Poisson, Hawkes and self-correcting.

Every quantity is conditioned on a :class:`History`, i.e. it describes the
waiting time to the next event after the last recorded one.  Intensities
count *all* history events, so ``intensity(model, t_j, h)`` is the right
limit at the last event.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from numba import njit
from scipy.optimize import minimize

from .numerics import IntegrationError, Tolerance, integrate_adaptive

logger = logging.getLogger(__name__)

FAMILIES = ("poisson", "hawkes", "self-correcting")


class UnsupportedModelError(TypeError):
    pass


class ConvergenceWarning(UserWarning):
    pass


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not (value > 0 and math.isfinite(value)):
        raise ValueError(f"{name} must be positive and finite, got {value!r}")
    return value


@dataclass(frozen=True)
class PoissonParams:
    lam: float

    family = "poisson"

    def __post_init__(self):
        object.__setattr__(self, "lam", _positive("lambda", self.lam))


@dataclass(frozen=True)
class HawkesParams:
    lam: float
    alpha: float
    gamma: float

    family = "hawkes"

    def __post_init__(self):
        for name in ("lam", "alpha", "gamma"):
            object.__setattr__(self, name, _positive(name, getattr(self, name)))


@dataclass(frozen=True)
class SelfCorrectingParams:
    mu: float
    alpha: float

    family = "self-correcting"

    def __post_init__(self):
        for name in ("mu", "alpha"):
            object.__setattr__(self, name, _positive(name, getattr(self, name)))


ClassicalModel = Union[PoissonParams, HawkesParams, SelfCorrectingParams]


@dataclass(frozen=True)
class History:
    """Past event times of one sequence plus the time the sequence started."""

    event_times: tuple = ()
    origin: float = 0.0

    def __post_init__(self):
        times = tuple(float(t) for t in self.event_times)
        object.__setattr__(self, "event_times", times)
        object.__setattr__(self, "origin", float(self.origin))
        if times:
            arr = np.asarray(times)
            if not np.all(np.isfinite(arr)):
                raise ValueError("event times must be finite")
            if np.any(np.diff(arr) <= 0):
                raise ValueError("event times must be strictly increasing")
            if arr[0] < self.origin:
                raise ValueError("event times must not precede the origin")

    @property
    def last(self) -> float:
        """t_j: the last event time, or the origin when there are no events."""
        return self.event_times[-1] if self.event_times else self.origin

    def __len__(self) -> int:
        return len(self.event_times)

    def prefix(self, n: int) -> "History":
        return History(self.event_times[:n], self.origin)


def model_to_dict(model: ClassicalModel) -> dict:
    if isinstance(model, PoissonParams):
        params = {"lambda": model.lam}
    elif isinstance(model, HawkesParams):
        params = {"lambda": model.lam, "alpha": model.alpha, "gamma": model.gamma}
    elif isinstance(model, SelfCorrectingParams):
        params = {"mu": model.mu, "alpha": model.alpha}
    else:
        raise UnsupportedModelError(f"unknown model type {type(model).__name__}")
    return {"family": model.family, "params": params}


def model_from_dict(data: dict) -> ClassicalModel:
    family = data["family"]
    p = data["params"]
    if family == "poisson":
        return PoissonParams(p["lambda"])
    if family == "hawkes":
        return HawkesParams(p["lambda"], p["alpha"], p["gamma"])
    if family == "self-correcting":
        return SelfCorrectingParams(p["mu"], p["alpha"])
    raise UnsupportedModelError(f"unknown family {family!r}")


# --------------------------------------------------------------------------
# intensities, compensators, densities


def _check_time(t: float, history: History) -> float:
    t = float(t)
    if not t >= history.last:
        raise ValueError(f"t={t} precedes the last history event at {history.last}")
    return t


def _hawkes_excitation_at_last(model: HawkesParams, history: History) -> float:
    """Sum of alpha e^{-gamma (t_j - t_i)} over all history events."""
    if not history.event_times:
        return 0.0
    times = np.asarray(history.event_times)
    return float(model.alpha * np.sum(np.exp(-model.gamma * (history.last - times))))


def _sc_log_level(model: SelfCorrectingParams, history: History) -> float:
    """log of the self-correcting intensity at t_j (right limit)."""
    return model.mu * (history.last - history.origin) - model.alpha * len(history)


def _hazard_and_compensator(model: ClassicalModel, x, history: History):
    """Intensity and compensator at ``t_j + x`` for an array of offsets ``x >= 0``."""
    x = np.asarray(x, dtype=float)
    if isinstance(model, PoissonParams):
        return np.full_like(x, model.lam), model.lam * x
    if isinstance(model, HawkesParams):
        exc = _hawkes_excitation_at_last(model, history)
        decay = np.exp(-model.gamma * x)
        lam = model.lam + exc * decay
        comp = model.lam * x - exc * np.expm1(-model.gamma * x) / model.gamma
        return lam, comp
    if isinstance(model, SelfCorrectingParams):
        level = _sc_log_level(model, history)
        with np.errstate(over="ignore"):
            lam = np.exp(level + model.mu * x)
            comp = np.exp(level) * np.expm1(model.mu * x) / model.mu
        return lam, comp
    raise UnsupportedModelError(f"unknown model type {type(model).__name__}")


def intensity(model: ClassicalModel, t: float, history: History) -> float:
    """Conditional intensity lambda*(t) for t >= t_j."""
    t = _check_time(t, history)
    lam, _ = _hazard_and_compensator(model, t - history.last, history)
    return float(lam)


def compensator(model: ClassicalModel, t: float, history: History) -> float:
    """Integrated intensity from t_j to t, in closed form."""
    t = _check_time(t, history)
    _, comp = _hazard_and_compensator(model, t - history.last, history)
    return float(comp)


def next_event_pdf_cdf(
    model: ClassicalModel,
    t: float,
    history: History,
    *,
    method: str = "closed",
    tol: Optional[Tolerance] = None,
) -> tuple[float, float]:
    """Density and CDF of the next event time evaluated at ``t``.

    ``method="quadrature"`` integrates the intensity numerically instead of
    using the closed-form compensator; both must agree.
    """
    t = _check_time(t, history)
    lam = intensity(model, t, history)
    if method == "closed":
        comp = compensator(model, t, history)
    elif method == "quadrature":
        comp = integrate_adaptive(
            lambda u: intensity(model, u, history), history.last, t, tol or Tolerance()
        )
    else:
        raise ValueError(f"unknown method {method!r}")
    survival = math.exp(-comp)
    return lam * survival, -math.expm1(-comp)


# --------------------------------------------------------------------------
# validity of an arbitrary intensity


@dataclass
class IntensityValidity:
    positive: bool
    divergent: bool
    saturated: bool
    horizons: list
    compensators: list
    cdf_at_max: float
    min_intensity: float

    @property
    def valid(self) -> bool:
        return self.positive and self.divergent


class _Overflow(Exception):
    pass


def validate_intensity(
    intensity_fn: Callable[[float], float],
    t_j: float,
    horizon_schedule: Sequence[float],
    *,
    eps: float = 1e-6,
    plateau: float = 1e-6,
    samples_per_segment: int = 64,
    tol: Optional[Tolerance] = None,
) -> IntensityValidity:
    """Check that ``intensity_fn`` defines a proper next-event distribution.

    The intensity must be positive and its integral from ``t_j`` must grow
    without bound.  Growth is judged along ``horizon_schedule`` (absolute
    times): if the compensator grows by less than ``plateau`` relative
    between the last two horizons it is reported as non-divergent.
    """
    horizons = [float(h) for h in horizon_schedule]
    if not horizons:
        raise ValueError("horizon schedule must be nonempty")
    if any(b <= a for a, b in zip([t_j] + horizons[:-1], horizons)):
        raise ValueError("horizon schedule must be increasing and start after t_j")
    tol = tol or Tolerance(abs=1e-300, rel=1e-13, max_subdivisions=5000)

    def guarded(u: float) -> float:
        v = float(intensity_fn(u))
        if v == math.inf:
            raise _Overflow
        return v

    min_seen = math.inf
    comps: list[float] = []
    total = 0.0
    lo = float(t_j)
    overflowed = False
    for hi in horizons:
        if not overflowed:
            try:
                grid = np.linspace(lo, hi, samples_per_segment)
                min_seen = min(min_seen, min(guarded(u) for u in grid))
                total += integrate_adaptive(guarded, lo, hi, tol)
            except (_Overflow, IntegrationError):
                overflowed = True
        comps.append(math.inf if overflowed else total)
        lo = hi

    positive = min_seen > 0.0
    last = comps[-1]
    if math.isinf(last):
        divergent = True
    elif len(comps) >= 2 and comps[-2] > 0:
        divergent = (last - comps[-2]) / comps[-2] >= plateau
    else:
        divergent = -math.expm1(-last) >= 1.0 - eps
    cdf = 1.0 if math.isinf(last) else -math.expm1(-last)
    return IntensityValidity(
        positive=positive,
        divergent=divergent,
        saturated=cdf >= 1.0 - eps,
        horizons=horizons,
        compensators=comps,
        cdf_at_max=cdf,
        min_intensity=min_seen,
    )


# --------------------------------------------------------------------------
# simulation


def sample_thinning(
    model: ClassicalModel,
    t_start: float,
    t_end: float,
    seed: int,
    history: Optional[History] = None,
) -> np.ndarray:
    """Simulate event times in ``(t_start, t_end]`` by Ogata thinning.

    Each family supplies a local upper bound on the intensity: constant for
    Poisson, the current level for Hawkes (valid until the next event since
    the kernel decays), and the level at the end of a lookahead window for
    the increasing self-correcting intensity.
    """
    t_start, t_end = float(t_start), float(t_end)
    if not t_start < t_end:
        raise ValueError("t_start must be smaller than t_end")
    rng = np.random.default_rng(seed)
    history = history or History((), t_start)
    out: list[float] = []

    if isinstance(model, PoissonParams):
        t = t_start
        while True:
            t += rng.exponential(1.0 / model.lam)
            if t > t_end:
                break
            out.append(t)
        return np.asarray(out)

    if isinstance(model, HawkesParams):
        t = max(t_start, history.last)
        exc = _hawkes_excitation_at_last(model, history) * math.exp(-model.gamma * (t - history.last))
        while True:
            bound = model.lam + exc
            w = rng.exponential(1.0 / bound)
            t += w
            if t > t_end:
                break
            exc *= math.exp(-model.gamma * w)
            if rng.uniform() * bound <= model.lam + exc:
                out.append(t)
                exc += model.alpha
        return np.asarray(out)

    if isinstance(model, SelfCorrectingParams):
        t = max(t_start, history.last)
        count = len(history)
        origin = history.origin
        window = 1.0 / model.mu
        while True:
            until = t + window
            bound = math.exp(model.mu * (until - origin) - model.alpha * count)
            t_cand = t + rng.exponential(1.0 / bound)
            if t_cand > until:
                t = until
                if t > t_end:
                    break
                continue
            t = t_cand
            if t > t_end:
                break
            lam = math.exp(model.mu * (t - origin) - model.alpha * count)
            if rng.uniform() * bound <= lam:
                out.append(t)
                count += 1
        return np.asarray(out)

    raise UnsupportedModelError(f"no intensity upper bound for {type(model).__name__}")


# --------------------------------------------------------------------------
# likelihood and fitting


def _pack(sequences: Sequence[History]):
    times = [np.asarray(h.event_times, dtype=float) for h in sequences]
    lengths = np.array([len(t) for t in times], dtype=np.int64)
    flat = np.concatenate(times) if times else np.zeros(0)
    origins = np.array([h.origin for h in sequences], dtype=float)
    return flat, lengths, origins


@njit(cache=True)
def _hawkes_ll_grad(flat, lengths, origins, lam, alpha, gamma):
    ll = 0.0
    g_lam = 0.0
    g_alpha = 0.0
    g_gamma = 0.0
    pos = 0
    for s in range(lengths.shape[0]):
        prev = origins[s]
        exc = 0.0  # sum_i e^{-gamma (prev - t_i)} right after prev
        dexc = 0.0  # d exc / d gamma
        for k in range(lengths[s]):
            t = flat[pos + k]
            dt = t - prev
            decay = math.exp(-gamma * dt)
            a = exc * decay
            da = decay * (dexc - dt * exc)
            rate = lam + alpha * a
            one_minus = -math.expm1(-gamma * dt)
            ll += math.log(rate) - lam * dt - alpha * exc * one_minus / gamma
            g_lam += 1.0 / rate - dt
            g_alpha += a / rate - exc * one_minus / gamma
            d_term = (dexc * one_minus + exc * dt * decay) / gamma - exc * one_minus / (gamma * gamma)
            g_gamma += alpha * da / rate - alpha * d_term
            exc = a + 1.0
            dexc = da
            prev = t
        pos += lengths[s]
    return ll, g_lam, g_alpha, g_gamma


def _sc_ll_grad(flat, lengths, origins, mu, alpha):
    ll = 0.0
    g = np.zeros(2)
    pos = 0
    for s, n in enumerate(lengths):
        t = flat[pos:pos + n] - origins[s]
        pos += n
        if n == 0:
            continue
        prev = np.concatenate([[0.0], t[:-1]])
        k = np.arange(n, dtype=float)  # events before t_k
        dt = t - prev
        level = mu * prev - alpha * k
        c = np.exp(level)
        em1 = np.expm1(mu * dt)
        gfun = em1 / mu
        comp = c * gfun
        ll += float(np.sum(mu * t - alpha * k) - np.sum(comp))
        dg_dmu = dt * (em1 + 1.0) / mu - gfun / mu
        g[0] += float(np.sum(t) - np.sum(c * (prev * gfun + dg_dmu)))
        g[1] += float(-np.sum(k) + np.sum(k * comp))
    return ll, g


def log_likelihood(model: ClassicalModel, sequences: Sequence[History]) -> float:
    """Summed log f*(t_k) over all events (no terminal survival term)."""
    flat, lengths, origins = _pack(sequences)
    if isinstance(model, PoissonParams):
        total_time = float(sum(h.last - h.origin for h in sequences))
        return float(flat.size * math.log(model.lam) - model.lam * total_time)
    if isinstance(model, HawkesParams):
        return float(_hawkes_ll_grad(flat, lengths, origins, model.lam, model.alpha, model.gamma)[0])
    if isinstance(model, SelfCorrectingParams):
        return _sc_ll_grad(flat, lengths, origins, model.mu, model.alpha)[0]
    raise UnsupportedModelError(f"unknown model type {type(model).__name__}")


@dataclass
class FitInfo:
    converged: bool
    grad_norm: float
    n_iter: int
    log_likelihood: float
    message: str = ""
    history: list = field(default_factory=list)


def _family_name(family) -> str:
    if isinstance(family, str):
        name = family.lower().replace("_", "-")
    else:
        name = getattr(family, "family", None)
    if name not in FAMILIES:
        raise UnsupportedModelError(f"unknown family {family!r}")
    return name


def fit_mle(
    sequences: Sequence[History],
    family,
    *,
    max_iter: int = 1000,
    gtol: float = 1e-6,
    full_output: bool = False,
):
    """Maximum-likelihood fit pooled over all ``sequences``.

    Parameters are optimised in log space.  The objective is the mean
    per-event log-likelihood; convergence means its gradient (w.r.t. the
    log-parameters) has max-norm below ``gtol``.  If that is not reached a
    :class:`ConvergenceWarning` is issued and the best iterate returned.
    """
    name = _family_name(family)
    sequences = list(sequences)
    flat, lengths, origins = _pack(sequences)
    n = int(flat.size)
    if n == 0:
        raise ValueError("cannot fit a point process to data without events")
    total_time = float(sum(h.last - h.origin for h in sequences))
    if total_time <= 0:
        raise ValueError("total observed time must be positive")
    rate = n / total_time

    if name == "poisson":
        model = PoissonParams(rate)
        info = FitInfo(True, 0.0, 0, log_likelihood(model, sequences), "closed form n/T")
        return (model, info) if full_output else model

    if name == "hawkes":
        gamma0 = 1.0 / (np.mean(np.diff(flat)) if n > 1 else 1.0)
        gamma0 = abs(float(gamma0)) or 1.0
        theta0 = np.log([0.5 * rate, 0.5 * gamma0, gamma0])

        def objective(theta):
            lam, alpha, gamma = np.exp(theta)
            ll, gl, ga, gg = _hawkes_ll_grad(flat, lengths, origins, lam, alpha, gamma)
            grad = np.array([gl * lam, ga * alpha, gg * gamma])
            return -ll / n, -grad / n

        build = lambda th: HawkesParams(*np.exp(th))
    else:
        theta0 = np.log([rate, 1.0])

        def objective(theta):
            mu, alpha = np.exp(theta)
            ll, g = _sc_ll_grad(flat, lengths, origins, mu, alpha)
            return -ll / n, -(g * np.array([mu, alpha])) / n

        build = lambda th: SelfCorrectingParams(*np.exp(th))

    def safe(theta):
        with np.errstate(over="ignore", invalid="ignore"):
            val, grad = objective(theta)
        if not (np.isfinite(val) and np.all(np.isfinite(grad))):
            return 1e10, np.zeros_like(theta)
        return val, grad

    bounds = [(-25.0, 25.0)] * len(theta0)
    res = minimize(
        safe, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
        options={"maxiter": max_iter, "gtol": gtol * 1e-2, "ftol": 1e-16, "maxcor": 20},
    )
    theta = res.x
    # Polish with Newton-free BFGS restarts if L-BFGS stopped on ftol.
    for _ in range(5):
        _, grad = safe(theta)
        if np.max(np.abs(grad)) < gtol:
            break
        res = minimize(safe, theta, jac=True, method="BFGS",
                       options={"maxiter": max_iter, "gtol": gtol * 1e-2})
        theta = res.x
    _, grad = safe(theta)
    gnorm = float(np.max(np.abs(grad)))
    model = build(theta)
    converged = gnorm < gtol
    if not converged:
        warnings.warn(
            f"{name} MLE stopped with gradient norm {gnorm:.3g} >= {gtol:g}",
            ConvergenceWarning,
            stacklevel=2,
        )
    info = FitInfo(converged, gnorm, int(res.nit), log_likelihood(model, sequences), str(res.message))
    logger.info("fitted %s: %s (grad %.2e)", name, model, gnorm)
    return (model, info) if full_output else model


# --------------------------------------------------------------------------
# prediction


def _min_rate(model: ClassicalModel, history: History) -> float:
    if isinstance(model, PoissonParams):
        return model.lam
    if isinstance(model, HawkesParams):
        return model.lam
    # increasing between events
    return math.exp(_sc_log_level(model, history))


def expected_next_time(
    model: ClassicalModel, history: History, tol: Optional[Tolerance] = None
) -> float:
    """E[t_{j+1}] = int t f*(t) dt, evaluated by adaptive quadrature."""
    tol = tol or Tolerance(abs=1e-13, rel=1e-11, max_subdivisions=4000)
    t_j = history.last
    rate_floor = _min_rate(model, history)

    def integrand(x):
        lam, comp = _hazard_and_compensator(model, x, history)
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            out = x * lam * np.exp(-comp)
        return np.where(np.isfinite(comp), out, 0.0)

    def tail(x):
        _, comp = _hazard_and_compensator(model, x, history)
        return math.exp(-float(comp)) * (x + 1.0 / rate_floor)

    try:
        mean_wait = integrate_adaptive(integrand, 0.0, math.inf, tol, tail=tail, vectorized=True)
    except IntegrationError as exc:
        raise ArithmeticError(f"expected next time did not converge: {exc}") from exc
    if not (math.isfinite(mean_wait) and mean_wait > 0):
        raise ArithmeticError(f"invalid expected waiting time {mean_wait!r}")
    return t_j + mean_wait
