"""Outer-loop optimization: settings, state angle, noise resistance, sweeps.

Measurement settings live in the x-z plane by default (two angles per party);
all states considered have real amplitudes, so the optima do too.  The
full-sphere parametrization (polar + azimuth per setting) is available to
guard that assumption.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from . import bell, counting
from .bell import NoConclusiveEvents, SettingsQuad, local_bound_closed_form
from .counting import FixedPairs, Poisson, SourceModel
from .detectors import PerfectStep, ResponseFunction, SmoothStep
from .quantum import (
    Setting,
    TwoQubitState,
    add_white_noise,
    bloch_form,
    pure_state,
    singlet,
)

CH = "ch"
CHSH_PS = "chsh_ps"

# a value must exceed the bound by this much to count as a violation; keeps
# numerically-zero optima (e.g. product states reaching CH = 1e-15) out
VIOLATION_EPS = 1e-9

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

# Standard optimal single-pair settings: A1 = z, A2 = x, B1,2 = (z +- x)/sqrt2,
# plus the variant with Bob's directions reversed (optimal for anticorrelated
# states such as the singlet).
_TSIRELSON_ANGLES = (0.0, math.pi / 2.0, math.pi / 4.0, -math.pi / 4.0)
_TSIRELSON_ANGLES_FLIPPED = (0.0, math.pi / 2.0, math.pi + math.pi / 4.0, math.pi - math.pi / 4.0)


class NoViolation(RuntimeError):
    """Raised when even the noiseless state fails to violate the inequality."""


@dataclass(frozen=True)
class Scenario:
    """One experimental configuration, minus the swept quantities.

    ``state_family`` is one of 'pure', 'pure_plus_noise', 'singlet', 'werner';
    the pure families take the entanglement angle theta as a free argument,
    the noisy families additionally use ``noise_weight`` (overridable when
    bisecting noise).  ``functional`` selects the CH combination (no
    post-selection) or the post-selected CHSH.
    """

    state_family: str
    source: SourceModel
    response_a: ResponseFunction
    response_b: ResponseFunction | None = None
    functional: str = CH
    settings_plane: bool = True
    noise_weight: float = 1.0

    def __post_init__(self):
        if self.state_family not in ("pure", "pure_plus_noise", "singlet", "werner"):
            raise ValueError(f"unknown state family {self.state_family!r}")
        if self.functional not in (CH, CHSH_PS):
            raise ValueError(f"unknown functional {self.functional!r}")
        if not 0.0 <= self.noise_weight <= 1.0:
            raise ValueError(f"noise weight must lie in [0, 1], got {self.noise_weight}")
        if self.response_b is None:
            object.__setattr__(self, "response_b", self.response_a)

    @property
    def threshold(self) -> int:
        return self.response_a.threshold

    def state(self, theta: float = 0.0, weight: float | None = None) -> TwoQubitState:
        w = self.noise_weight if weight is None else weight
        if self.state_family in ("pure", "pure_plus_noise"):
            base = pure_state(theta)
        else:
            base = singlet()
        if w == 1.0:
            return base
        return add_white_noise(base, w)

    def violation_threshold(self) -> tuple[float, bool]:
        """(bound, heuristic?) — the value a violating configuration must exceed.

        CH certifies non-locality above 0 with no extra assumptions.  The
        post-selected CHSH is compared against the n-copy local bound, which
        strictly applies to sources emitting exactly n identical pairs; for
        Poisson sources (reasonable only when mu << n) and fixed sources with
        more pairs than the threshold it is used as a heuristic and flagged.
        """
        if self.functional == CH:
            return 0.0, False
        n = self.threshold
        bound = local_bound_closed_form(n)
        if isinstance(self.source, FixedPairs) and self.source.pairs == n:
            return bound, False
        return bound, True


@dataclass(frozen=True)
class OptimizerDiagnostics:
    n_starts: int
    n_evaluations: int
    best_two_spread: float
    converged: bool


@dataclass(frozen=True)
class ScenarioResult:
    """Outcome of one optimization: value, maximizer, bound, noise figures.

    ``noise_resistance`` is the maximal white-noise fraction (1 - w*) the
    configuration tolerates while still violating; ``critical_weight`` is the
    corresponding w*.  Both are None unless a noise bisection was run.
    """

    best_value: float
    optimal_settings: SettingsQuad
    optimal_angles: tuple[float, ...]
    optimal_theta: float | None
    local_bound: float
    bound_is_heuristic: bool
    diagnostics: OptimizerDiagnostics
    critical_weight: float | None = None

    @property
    def noise_resistance(self) -> float | None:
        if self.critical_weight is None:
            return None
        return 1.0 - self.critical_weight

    @property
    def violates(self) -> bool:
        return self.best_value > self.local_bound + VIOLATION_EPS


def _settings_vectors(angles: np.ndarray, plane: bool) -> tuple[np.ndarray, np.ndarray]:
    """(alice (2,3), bob (2,3)) Bloch vectors from the parameter vector."""
    angles = np.asarray(angles, dtype=float)
    if plane:
        if angles.shape != (4,):
            raise ValueError(f"planar settings need 4 angles, got shape {angles.shape}")
        vecs = np.column_stack(
            [np.sin(angles), np.zeros(4), np.cos(angles)]
        )
    else:
        if angles.shape != (8,):
            raise ValueError(f"full-sphere settings need 8 angles, got shape {angles.shape}")
        polar, azim = angles[0::2], angles[1::2]
        sp = np.sin(polar)
        vecs = np.column_stack([sp * np.cos(azim), sp * np.sin(azim), np.cos(polar)])
    return vecs[:2], vecs[2:]


def _quad_from_angles(angles: Sequence[float], plane: bool) -> SettingsQuad:
    a_vecs, b_vecs = _settings_vectors(np.asarray(angles, dtype=float), plane)
    return SettingsQuad(
        Setting(a_vecs[0]), Setting(a_vecs[1]), Setting(b_vecs[0]), Setting(b_vecs[1])
    )


def _pair_tables(
    a_vecs: np.ndarray, b_vecs: np.ndarray, r_a: np.ndarray, r_b: np.ndarray, corr: np.ndarray
) -> np.ndarray:
    """Single-pair outcome tables for the four setting pairs, shape (2,2,2,2).

    Indexed [i, j, alpha_idx, beta_idx]; uses the Bloch form
    p = (1 + alpha a.r_a + beta b.r_b + alpha beta a.T.b)/4.
    """
    u = a_vecs @ r_a
    v = b_vecs @ r_b
    t = a_vecs @ corr @ b_vecs.T
    pp = np.empty((2, 2, 2, 2))
    up = u[:, None]
    vp = v[None, :]
    pp[:, :, 0, 0] = 1.0 + up + vp + t
    pp[:, :, 0, 1] = 1.0 + up - vp - t
    pp[:, :, 1, 0] = 1.0 - up + vp - t
    pp[:, :, 1, 1] = 1.0 - up - vp + t
    return np.clip(pp / 4.0, 0.0, 1.0)


def _make_objective(scenario: Scenario, theta: float, weight: float | None):
    """Callable angles -> functional value, specialized for the scenario."""
    r_a, r_b, corr = bloch_form(scenario.state(theta, weight))
    f_a, f_b = scenario.response_a, scenario.response_b
    source = scenario.source
    plane = scenario.settings_plane
    functional = scenario.functional
    perfect_steps = isinstance(f_a, PerfectStep) and isinstance(f_b, PerfectStep)

    if functional == CH:
        if isinstance(source, FixedPairs):
            m = source.pairs

            def coincidences(pp_flat):
                return counting.coincidence_batch(m, f_a, f_b, pp_flat)

            def marginal(f, p_plus):
                return counting.marginal_fire_probability(m, f, p_plus)

        elif perfect_steps:
            mu = source.mu
            from scipy.special import gammainc

            def coincidences(pp_flat):
                return counting.poisson_perfect_coincidence_batch(
                    mu, f_a.threshold, f_b.threshold, pp_flat
                )

            def marginal(f, p_plus):
                return float(gammainc(float(f.threshold), mu * p_plus))

        else:
            mu = source.mu

            def coincidences(pp_flat):
                return np.array(
                    [counting.poisson_coincidence_probability(mu, f_a, f_b, t) for t in pp_flat]
                )

            def marginal(f, p_plus):
                return counting.poisson_marginal_fire_probability(mu, f, p_plus)

        def objective(angles: np.ndarray) -> float:
            a_vecs, b_vecs = _settings_vectors(angles, plane)
            pp = _pair_tables(a_vecs, b_vecs, r_a, r_b, corr)
            coinc = coincidences(pp.reshape(4, 2, 2))
            p_plus_a1 = marginal(f_a, float(pp[0, 0, 0, 0] + pp[0, 0, 0, 1]))
            p_plus_b1 = marginal(f_b, float(pp[0, 0, 0, 0] + pp[0, 0, 1, 0]))
            return float(coinc[0] + coinc[1] + coinc[2] - coinc[3] - p_plus_a1 - p_plus_b1)

    elif functional == CHSH_PS:
        if isinstance(source, FixedPairs):
            m = source.pairs

            def joints(pp_flat):
                return counting.outcome_tables_batch(m, f_a, f_b, pp_flat)

        else:

            def joints(pp_flat):
                return counting.poisson_outcome_tables_batch(source, f_a, f_b, pp_flat)

        def objective(angles: np.ndarray) -> float:
            a_vecs, b_vecs = _settings_vectors(angles, plane)
            pp = _pair_tables(a_vecs, b_vecs, r_a, r_b, corr)
            j = joints(pp.reshape(4, 2, 2))
            mass = j.sum(axis=(1, 2))
            if np.min(mass) < bell.CONCLUSIVE_MASS_FLOOR:
                return 0.0
            e = (j[:, 0, 0] + j[:, 1, 1] - j[:, 0, 1] - j[:, 1, 0]) / mass
            return float(abs(e[0] + e[1] + e[2] - e[3]))

    else:  # pragma: no cover - guarded by Scenario validation
        raise ValueError(f"unsupported functional {functional!r}")

    return objective


def evaluate_functional(
    scenario: Scenario,
    theta: float,
    angles: Sequence[float],
    weight: float | None = None,
) -> float:
    """One direct evaluation of the scenario's functional at explicit settings."""
    return float(_make_objective(scenario, theta, weight)(np.asarray(angles, dtype=float)))


def _seed_sequence(seed, *keys: int) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(entropy=seed.entropy, spawn_key=tuple(seed.spawn_key) + keys)
    return np.random.SeedSequence(entropy=seed, spawn_key=keys)


def _default_starts(plane: bool) -> list[np.ndarray]:
    if plane:
        return [np.array(_TSIRELSON_ANGLES), np.array(_TSIRELSON_ANGLES_FLIPPED)]
    starts = []
    for base in (_TSIRELSON_ANGLES, _TSIRELSON_ANGLES_FLIPPED):
        x = np.zeros(8)
        x[0::2] = base
        starts.append(x)
    return starts


def maximize_settings(
    scenario: Scenario,
    theta: float = 0.0,
    *,
    weight: float | None = None,
    seed=0,
    n_random_starts: int = 32,
    warm_starts: Sequence[Sequence[float]] = (),
    spread_tol: float = 1e-6,
    optimal_theta: float | None = None,
    polish: bool = True,
) -> ScenarioResult:
    """Derivative-free multi-start maximization over measurement settings.

    Starts from ``n_random_starts`` random angle vectors, the single-pair
    optimal quads, and any ``warm_starts``; each runs a Nelder-Mead ascent,
    and the best start is re-polished with tight tolerances (skippable for
    cheap inner probes).  ``converged`` is False when the best two starts
    disagree by more than ``spread_tol``.
    """
    objective = _make_objective(scenario, theta, weight)
    plane = scenario.settings_plane
    dim = 4 if plane else 8

    evaluations = 0

    def neg(x: np.ndarray) -> float:
        nonlocal evaluations
        evaluations += 1
        return -objective(x)

    rng = np.random.default_rng(_seed_sequence(seed))
    starts = _default_starts(plane)
    starts.extend(np.asarray(w, dtype=float) for w in warm_starts)
    starts.extend(rng.uniform(-math.pi, math.pi, size=dim) for _ in range(n_random_starts))

    stage_options = {"xatol": 1e-4, "fatol": 1e-9, "maxfev": 100 * dim}
    results = []
    for x0 in starts:
        res = minimize(neg, x0, method="Nelder-Mead", options=stage_options)
        results.append((-res.fun, res.x))
    results.sort(key=lambda r: r[0], reverse=True)

    best_value, best_angles = results[0]
    if polish:
        polished = minimize(
            neg,
            best_angles,
            method="Nelder-Mead",
            options={"xatol": 1e-9, "fatol": 1e-13, "maxfev": 600 * dim},
        )
        if -polished.fun > best_value:
            best_value, best_angles = -polished.fun, polished.x

    spread = results[0][0] - results[1][0] if len(results) > 1 else 0.0
    bound, heuristic = scenario.violation_threshold()
    return ScenarioResult(
        best_value=float(best_value),
        optimal_settings=_quad_from_angles(best_angles, plane),
        optimal_angles=tuple(float(a) for a in best_angles),
        optimal_theta=optimal_theta,
        local_bound=bound,
        bound_is_heuristic=heuristic,
        diagnostics=OptimizerDiagnostics(
            n_starts=len(starts),
            n_evaluations=evaluations,
            best_two_spread=float(spread),
            converged=bool(spread <= spread_tol),
        ),
    )


def maximize_over_theta(
    scenario: Scenario,
    *,
    theta_bounds: tuple[float, float] = (0.0, math.pi / 4.0),
    theta_grid: Sequence[float] | None = None,
    seed=0,
    golden_tol: float = 1e-4,
    n_random_starts: int = 32,
    probe_random_starts: int = 8,
) -> ScenarioResult:
    """Nested maximization over the state angle theta and the settings.

    By default golden-section search over ``theta_bounds`` (the objective is
    unimodal in theta in practice; a grid cross-check is available via
    ``theta_grid``).  Inner probes reuse the best settings found so far as
    warm starts; the final angle is re-optimized with the full start budget.
    """
    if scenario.state_family not in ("pure", "pure_plus_noise"):
        raise ValueError("theta optimization requires a pure-state family")

    cache: dict[float, ScenarioResult] = {}
    probe_idx = 0

    def probe(theta: float, full: bool = False) -> ScenarioResult:
        nonlocal probe_idx
        if theta in cache:
            return cache[theta]
        warm = []
        if cache:
            best_theta = max(cache, key=lambda t: cache[t].best_value)
            warm.append(cache[best_theta].optimal_angles)
        result = maximize_settings(
            scenario,
            theta,
            seed=_seed_sequence(seed, probe_idx),
            n_random_starts=n_random_starts if full else probe_random_starts,
            warm_starts=warm,
            polish=False,
        )
        probe_idx += 1
        cache[theta] = result
        return result

    if theta_grid is not None:
        for theta in theta_grid:
            probe(float(theta))
    else:
        lo, hi = theta_bounds
        probe(lo, full=True)
        probe(hi)
        c = hi - (hi - lo) * _GOLDEN
        d = lo + (hi - lo) * _GOLDEN
        fc, fd = probe(c).best_value, probe(d).best_value
        while hi - lo > golden_tol:
            if fc >= fd:
                hi, d, fd = d, c, fc
                c = hi - (hi - lo) * _GOLDEN
                fc = probe(c).best_value
            else:
                lo, c, fc = c, d, fd
                d = lo + (hi - lo) * _GOLDEN
                fd = probe(d).best_value

    best_theta = max(cache, key=lambda t: cache[t].best_value)
    final = maximize_settings(
        scenario,
        best_theta,
        seed=_seed_sequence(seed, 10_000),
        n_random_starts=n_random_starts,
        warm_starts=[cache[best_theta].optimal_angles],
        optimal_theta=best_theta,
    )
    if final.best_value < cache[best_theta].best_value:
        final = replace(cache[best_theta], optimal_theta=best_theta)
    return final


def noise_resistance(
    scenario: Scenario,
    theta: float = 0.0,
    *,
    tol: float = 1e-4,
    seed=0,
    n_random_starts: int = 32,
    probe_random_starts: int = 6,
) -> float:
    """Critical white-noise weight w*: the state violates for w > w* only.

    Bisection on the mixing weight w with a full settings optimization at each
    probe.  Violation is monotone in w (spot-checked by the bracketing
    invariant itself); the noiseless state must violate, otherwise
    ``NoViolation`` is raised.  The tolerated noise fraction is 1 - w*.
    """
    bound, _ = scenario.violation_threshold()
    top = maximize_settings(
        scenario, theta, weight=1.0, seed=_seed_sequence(seed, 0), n_random_starts=n_random_starts
    )
    if not top.best_value > bound + VIOLATION_EPS:
        raise NoViolation(
            f"no violation at w=1 (value {top.best_value}, bound {bound})"
        )
    warm = [top.optimal_angles]
    lo, hi = 0.0, 1.0
    probe_idx = 1
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        res = maximize_settings(
            scenario,
            theta,
            weight=mid,
            seed=_seed_sequence(seed, probe_idx),
            n_random_starts=probe_random_starts,
            warm_starts=warm,
            polish=False,
        )
        probe_idx += 1
        if res.best_value > bound + VIOLATION_EPS:
            hi = mid
            warm = [res.optimal_angles, top.optimal_angles]
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class SmallPhiReport:
    """CH values on the analytic small-angle settings family.

    For the maximally entangled state, threshold n, exactly n pairs, and
    settings A1 = z, A2 = cos(2 phi) z + sin(2 phi) x, B1,2 = cos(phi) z
    +- sin(phi) x, the CH value grows as (3 n / 2^(n+1)) phi^2, so the
    inequality is violated for every threshold at small enough phi.
    """

    n: int
    rows: tuple[tuple[float, float], ...]  # (phi, ch_value)
    fitted_coefficient: float
    predicted_coefficient: float

    @property
    def relative_error(self) -> float:
        return abs(self.fitted_coefficient - self.predicted_coefficient) / self.predicted_coefficient


def verify_small_phi_family(n: int, phi_list: Sequence[float]) -> SmallPhiReport:
    """Evaluate CH on the small-angle family and fit its quadratic coefficient."""
    if n < 1:
        raise ValueError(f"threshold must be >= 1, got {n}")
    scenario = Scenario(
        state_family="pure",
        source=FixedPairs(n),
        response_a=PerfectStep(n),
        functional=CH,
    )
    theta = math.pi / 4.0
    rows = []
    for phi in phi_list:
        angles = (0.0, 2.0 * phi, phi, -phi)
        rows.append((float(phi), evaluate_functional(scenario, theta, angles)))
    phis = np.array([r[0] for r in rows])
    values = np.array([r[1] for r in rows])
    nonzero = phis != 0.0
    if not np.any(nonzero):
        raise ValueError("phi_list must contain a non-zero angle to fit")
    fitted = float(values[nonzero] @ phis[nonzero] ** 2 / np.sum(phis[nonzero] ** 4))
    predicted = 3.0 * n / 2.0 ** (n + 1)
    return SmallPhiReport(n, tuple(rows), fitted, predicted)


@dataclass(frozen=True)
class SmoothCheckRow:
    n: int
    m: int
    eta: float
    best_value: float
    bound: float
    margin: float
    theta_opt: float
    converged: bool


def smooth_threshold_no_violation_check(
    n: int,
    m: int,
    eta_grid: Sequence[float],
    *,
    seed=0,
    golden_tol: float = 1e-3,
) -> list[SmoothCheckRow]:
    """Post-selected CHSH for a smooth threshold fed by more pairs than it needs.

    For each eta, maximizes over pure states and settings, and reports the
    margin against the n-copy local bound; a fixed source with m > n pairs is
    expected to never exceed it.
    """
    if m <= n:
        raise ValueError(f"this check targets m > n, got n={n}, m={m}")
    rows = []
    for k, eta in enumerate(eta_grid):
        response = PerfectStep(n) if eta == 1.0 else SmoothStep(n, float(eta))
        scenario = Scenario(
            state_family="pure",
            source=FixedPairs(m),
            response_a=response,
            functional=CHSH_PS,
        )
        result = maximize_over_theta(
            scenario, seed=_seed_sequence(seed, k), golden_tol=golden_tol
        )
        rows.append(
            SmoothCheckRow(
                n=n,
                m=m,
                eta=float(eta),
                best_value=result.best_value,
                bound=result.local_bound,
                margin=result.best_value - result.local_bound,
                theta_opt=result.optimal_theta,
                converged=result.diagnostics.converged,
            )
        )
    return rows


@dataclass(frozen=True)
class SweepPoint:
    parameter: str
    value: float
    theta: float | None
    result: ScenarioResult | None
    error: str | None = None


_SWEEPABLE = ("theta", "n", "mu", "m", "eta")


def _apply_parameter(scenario: Scenario, parameter: str, value: float) -> tuple[Scenario, float | None]:
    """Scenario with one swept parameter replaced; returns (scenario, theta or None)."""
    if parameter == "theta":
        return scenario, float(value)
    if parameter == "mu":
        return replace(scenario, source=Poisson.auto(float(value))), None
    if parameter == "m":
        return replace(scenario, source=FixedPairs(int(value))), None
    if parameter == "eta":
        resp = SmoothStep(scenario.threshold, float(value))
        return replace(scenario, response_a=resp, response_b=resp), None
    if parameter == "n":
        n = int(value)
        for field in ("response_a", "response_b"):
            resp = getattr(scenario, field)
            if isinstance(resp, PerfectStep):
                scenario = replace(scenario, **{field: PerfectStep(n)})
            elif isinstance(resp, SmoothStep):
                scenario = replace(scenario, **{field: SmoothStep(n, resp.eta)})
            else:
                raise ValueError("threshold sweeps support step and smooth responses only")
        return scenario, None
    raise ValueError(f"unknown sweep parameter {parameter!r}; expected one of {_SWEEPABLE}")


def _run_sweep_point(args) -> SweepPoint:
    (scenario, parameter, value, theta, seed_entropy, spawn_key, options) = args
    seed = np.random.SeedSequence(entropy=seed_entropy, spawn_key=spawn_key)
    try:
        point_scenario, swept_theta = _apply_parameter(scenario, parameter, value)
        point_theta = swept_theta if swept_theta is not None else theta
        if point_theta is None:
            result = maximize_over_theta(point_scenario, seed=seed, **options.get("theta_opt", {}))
        else:
            result = maximize_settings(
                point_scenario,
                point_theta,
                seed=seed,
                optimal_theta=point_theta,
                **options.get("settings_opt", {}),
            )
        if options.get("with_noise"):
            try:
                w_crit = noise_resistance(
                    point_scenario,
                    result.optimal_theta if result.optimal_theta is not None else 0.0,
                    seed=_seed_sequence(seed, 777),
                    **options.get("noise_opt", {}),
                )
                result = replace(result, critical_weight=w_crit)
            except NoViolation:
                pass  # no violation even noiseless: leave the noise fields empty
        return SweepPoint(parameter, float(value), point_theta, result)
    except (NoViolation, NoConclusiveEvents, ValueError) as exc:
        return SweepPoint(parameter, float(value), theta, None, error=str(exc))


def sweep(
    scenario: Scenario,
    parameter: str,
    grid: Sequence[float],
    *,
    theta: float | None = None,
    seed: int = 0,
    jobs: int = 1,
    with_noise: bool = False,
    options: dict | None = None,
) -> list[SweepPoint]:
    """One optimized ScenarioResult per grid value of the swept parameter.

    Points are independent: each draws its RNG stream from (seed, index), so
    serial and parallel runs produce identical results, in grid order.
    Per-point failures are recorded on the SweepPoint instead of aborting.
    """
    if parameter not in _SWEEPABLE:
        raise ValueError(f"unknown sweep parameter {parameter!r}; expected one of {_SWEEPABLE}")
    if len(grid) == 0:
        raise ValueError("sweep grid must be non-empty")
    opts = dict(options or {})
    opts["with_noise"] = with_noise
    jobs_args = [
        (scenario, parameter, float(value), theta, seed, (idx,), opts)
        for idx, value in enumerate(grid)
    ]
    if jobs <= 1:
        return [_run_sweep_point(a) for a in jobs_args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_sweep_point, jobs_args))
