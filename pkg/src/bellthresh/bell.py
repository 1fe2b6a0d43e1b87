"""Bell functionals: CH value, post-selected CHSH, closed forms, local bounds.

The CH form uses only "+" coincidences and marginals, so it needs no
post-selection.  The post-selected CHSH renormalizes on conclusive
coincidences; its local bound grows with the detection threshold because the
post-selection is setting-dependent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .counting import DetectionProbabilities
from .quantum import (
    Setting,
    TwoQubitState,
    pair_probabilities,
    werner,
)

CONCLUSIVE_MASS_FLOOR = 1e-300


class NoConclusiveEvents(ValueError):
    """Raised when the conclusive-coincidence mass underflows to nothing."""


@dataclass(frozen=True, eq=False)
class SettingsQuad:
    """The four measurement settings A1, A2, B1, B2."""

    a1: Setting
    a2: Setting
    b1: Setting
    b2: Setting

    @classmethod
    def from_xz_angles(cls, a1: float, a2: float, b1: float, b2: float) -> "SettingsQuad":
        return cls(
            Setting.from_xz_angle(a1),
            Setting.from_xz_angle(a2),
            Setting.from_xz_angle(b1),
            Setting.from_xz_angle(b2),
        )

    def negated(self) -> "SettingsQuad":
        return SettingsQuad(
            self.a1.negated(), self.a2.negated(), self.b1.negated(), self.b2.negated()
        )

    def pairs(self):
        """Setting pairs in the order (1,1), (1,2), (2,1), (2,2)."""
        return (
            (self.a1, self.b1),
            (self.a1, self.b2),
            (self.a2, self.b1),
            (self.a2, self.b2),
        )


@dataclass(frozen=True)
class LocalStrategyMixture:
    """Convex mixture over the 16 deterministic two-input/two-output strategies.

    Strategy index lam encodes (alpha(A1), alpha(A2), beta(B1), beta(B2)) with
    bit value 0 meaning "+" and 1 meaning "-":
    lam = 8*i_a1 + 4*i_a2 + 2*i_b1 + i_b2.
    """

    weights: tuple[float, ...]

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if len(w) != 16:
            raise ValueError(f"expected 16 weights, got {len(w)}")
        if min(w) < -1e-12:
            raise ValueError(f"weights must be non-negative, min is {min(w)}")
        if abs(sum(w) - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {sum(w)}")
        object.__setattr__(self, "weights", w)

    def single_copy_table(self) -> np.ndarray:
        """p(alpha, beta | i, j) as a (2, 2, 2, 2) array [i, j, alpha_idx, beta_idx]."""
        return np.einsum("l,lijab->ijab", np.array(self.weights), _strategy_tables())


_STRATEGY_CACHE: np.ndarray | None = None


def _strategy_tables() -> np.ndarray:
    """Deterministic strategy tables, shape (16, 2, 2, 2, 2)."""
    global _STRATEGY_CACHE
    if _STRATEGY_CACHE is None:
        tables = np.zeros((16, 2, 2, 2, 2))
        for lam in range(16):
            i_a = ((lam >> 3) & 1, (lam >> 2) & 1)  # alpha index for A1, A2
            i_b = ((lam >> 1) & 1, lam & 1)  # beta index for B1, B2
            for i in range(2):
                for j in range(2):
                    tables[lam, i, j, i_a[i], i_b[j]] = 1.0
        tables.setflags(write=False)
        _STRATEGY_CACHE = tables
    return _STRATEGY_CACHE


def ch_value(
    p11: DetectionProbabilities,
    p12: DetectionProbabilities,
    p21: DetectionProbabilities,
    p22: DetectionProbabilities,
) -> float:
    """Clauser-Horne combination; positive values certify non-locality.

    CH = P++(A1B1) + P++(A1B2) + P++(A2B1) - P++(A2B2) - P+(A1) - P+(B1) <= 0
    for any local model, with no fair-sampling assumption: outcomes are "+"
    versus "anything else", and no events are discarded.
    """
    return (
        p11.p_plus_plus
        + p12.p_plus_plus
        + p21.p_plus_plus
        - p22.p_plus_plus
        - p11.p_plus_a
        - p11.p_plus_b
    )


def postselected_correlator(p: DetectionProbabilities) -> float:
    """Correlator E = sum alpha beta P(alpha, beta) / (conclusive mass)."""
    return correlator_from_joint(p.joint)


def correlator_from_joint(joint: np.ndarray) -> float:
    joint = np.asarray(joint, dtype=float)
    mass = joint.sum()
    if mass < CONCLUSIVE_MASS_FLOOR:
        raise NoConclusiveEvents(f"conclusive mass {mass} below {CONCLUSIVE_MASS_FLOOR}")
    return float((joint[0, 0] + joint[1, 1] - joint[0, 1] - joint[1, 0]) / mass)


def chsh_value(e11: float, e12: float, e21: float, e22: float) -> float:
    """S = |E(A1,B1) + E(A1,B2) + E(A2,B1) - E(A2,B2)|."""
    return abs(e11 + e12 + e21 - e22)


def singlet_correlator_closed_form(n: int, cos_ab: float) -> float:
    """Post-selected correlator of the singlet, threshold n, exactly n pairs.

    E = [(1 - c)^n - (1 + c)^n] / [(1 - c)^n + (1 + c)^n] with c = a.b.
    Stronger than single-pair quantum correlations: an artifact of
    post-selecting the all-agree rounds.
    """
    if n < 1:
        raise ValueError(f"threshold must be >= 1, got {n}")
    c = float(cos_ab)
    lo, hi = (1.0 - c) ** n, (1.0 + c) ** n
    return (lo - hi) / (lo + hi)


def singlet_chsh_closed_form(n: int) -> float:
    """Post-selected CHSH of the singlet at the standard optimal settings.

    S(n) = 4 [(1 + 1/sqrt2)^n - (1 - 1/sqrt2)^n] / [(1 + 1/sqrt2)^n + (1 - 1/sqrt2)^n];
    S(1) recovers the Tsirelson value 2*sqrt(2) and S(n) -> 4.
    """
    if n < 1:
        raise ValueError(f"threshold must be >= 1, got {n}")
    s = 1.0 / np.sqrt(2.0)
    hi, lo = (1.0 + s) ** n, (1.0 - s) ** n
    return float(4.0 * (hi - lo) / (hi + lo))


def local_bound_closed_form(n: int) -> float:
    """Local bound for the post-selected CHSH with n i.i.d. copies: 4 (3^n - 1)/(3^n + 1)."""
    if n < 1:
        raise ValueError(f"threshold must be >= 1, got {n}")
    p = 3.0**n
    return float(4.0 * (p - 1.0) / (p + 1.0))


def singlet_chsh_limit_deficit(n: int) -> float:
    """4 - singlet_chsh_closed_form(n), computed without cancellation.

    Equals 8 r^n / (1 + r^n) with r = (1 - 1/sqrt2)/(1 + 1/sqrt2); stays
    meaningful long after the direct closed form saturates to 4.0 in floats.
    """
    if n < 1:
        raise ValueError(f"threshold must be >= 1, got {n}")
    r = (1.0 - 1.0 / np.sqrt(2.0)) / (1.0 + 1.0 / np.sqrt(2.0))
    rn = r**n
    return float(8.0 * rn / (1.0 + rn))


def local_bound_limit_deficit(n: int) -> float:
    """4 - local_bound_closed_form(n) = 8 / (3^n + 1), cancellation-free."""
    if n < 1:
        raise ValueError(f"threshold must be >= 1, got {n}")
    return float(8.0 / (3.0**n + 1.0))


def ncopy_postselected_chsh(table: np.ndarray, n: int) -> float:
    """Post-selected CHSH of n i.i.d. copies of a single-copy distribution.

    A party is conclusive only when all n copies agree (the threshold-n
    detection logic applied to n identical pairs), so the n-copy joint
    probabilities are the single-copy ones raised to the n-th power, then
    renormalized per setting pair.
    """
    if n < 1:
        raise ValueError(f"copy count must be >= 1, got {n}")
    table = np.asarray(table, dtype=float)
    if table.shape != (2, 2, 2, 2):
        raise ValueError(f"expected a (2,2,2,2) table [i,j,alpha,beta], got {table.shape}")
    powered = table**n
    e = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            e[i, j] = correlator_from_joint(powered[i, j])
    return chsh_value(e[0, 0], e[0, 1], e[1, 0], e[1, 1])


def optimal_settings_quad() -> SettingsQuad:
    """A1 = sigma_z, A2 = sigma_x, B1 = (sigma_z + sigma_x)/sqrt2, B2 = (sigma_z - sigma_x)/sqrt2."""
    return SettingsQuad.from_xz_angles(0.0, np.pi / 2.0, np.pi / 4.0, -np.pi / 4.0)


def facet_center_distribution() -> np.ndarray:
    """Uniform mixture of the eight deterministic strategies saturating CHSH at +2.

    Geometrically the center of the CHSH facet of the local polytope; the
    conjectured maximizer of the n-copy post-selected CHSH.  Concretely
    p(alpha = beta | ij) = 3/4 when i = 1 or j = 1 and 1/4 when i = j = 2.
    """
    weights = np.zeros(16)
    saturating = [lam for lam in range(16) if _deterministic_chsh(lam) == 2]
    weights[saturating] = 1.0 / len(saturating)
    return LocalStrategyMixture(tuple(weights)).single_copy_table()


def _deterministic_chsh(lam: int) -> int:
    signs = [1 - 2 * ((lam >> k) & 1) for k in (3, 2, 1, 0)]  # a1, a2, b1, b2
    a1, a2, b1, b2 = signs
    return a1 * b1 + a1 * b2 + a2 * b1 - a2 * b2


def werner_optimal_distribution() -> np.ndarray:
    """Single-pair distribution of the critical Werner state at the optimal settings.

    Evaluates the Werner state at weight 1/sqrt2 (where the single-pair CHSH
    violation vanishes) on the standard optimal settings, then flips Bob's
    outcome so that the singlet's anticorrelations read as correlations.  The
    result coincides with the facet-center distribution.
    """
    state = werner(1.0 / np.sqrt(2.0))
    quad = optimal_settings_quad()
    table = np.empty((2, 2, 2, 2))
    for (i, j), (a, b) in zip(((0, 0), (0, 1), (1, 0), (1, 1)), quad.pairs()):
        pp = pair_probabilities(state, a, b)
        table[i, j] = pp.table[:, ::-1]  # relabel Bob: + <-> -
    return table


def local_bound_numeric(
    n: int,
    *,
    seed: int = 0,
    n_random_starts: int = 64,
    spread_tol: float = 1e-4,
) -> tuple[float, LocalStrategyMixture, dict]:
    """Maximize the n-copy post-selected CHSH over local strategy mixtures.

    Multi-start derivative-free ascent over the 16-weight simplex (softmax
    parametrization): the 16 deterministic vertices, the facet-center mixture,
    and ``n_random_starts`` Dirichlet draws.  Returns the best value, the
    maximizing mixture, and diagnostics; ``converged`` is False when the two
    best starts disagree by more than ``spread_tol``.
    """
    from scipy.optimize import minimize

    if n < 1:
        raise ValueError(f"copy count must be >= 1, got {n}")
    if n > 6:
        raise ValueError(f"n-copy local search limited to n <= 6, got {n}")

    strategies = _strategy_tables()

    def value_of_weights(w: np.ndarray) -> float:
        table = np.einsum("l,lijab->ijab", w, strategies)
        try:
            return ncopy_postselected_chsh(table, n)
        except NoConclusiveEvents:
            return 0.0

    def neg_objective(z: np.ndarray) -> float:
        z = z - z.max()
        w = np.exp(z)
        w /= w.sum()
        return -value_of_weights(w)

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    starts = []
    for lam in range(16):
        z = np.full(16, -12.0)
        z[lam] = 0.0
        starts.append(z)
    center = facet_center_weights()
    starts.append(np.log(np.maximum(center, 1e-14)))
    for _ in range(n_random_starts):
        starts.append(np.log(rng.dirichlet(np.ones(16)) + 1e-14))

    nm_options = {"xatol": 1e-9, "fatol": 1e-12, "maxiter": 8000, "maxfev": 8000}
    results = []
    for z0 in starts:
        res = minimize(neg_objective, z0, method="Nelder-Mead", options=nm_options)
        # restart with a fresh simplex: Nelder-Mead stalls in 16 dimensions
        res = minimize(neg_objective, res.x, method="Nelder-Mead", options=nm_options)
        z = res.x - res.x.max()
        w = np.exp(z)
        w /= w.sum()
        results.append((-res.fun, w))

    results.sort(key=lambda r: r[0], reverse=True)
    best_value, best_w = results[0]
    spread = best_value - results[1][0]
    diagnostics = {
        "n_starts": len(starts),
        "best_two_spread": float(spread),
        "converged": bool(spread <= spread_tol),
    }
    return float(best_value), LocalStrategyMixture(tuple(best_w)), diagnostics


def facet_center_weights() -> np.ndarray:
    weights = np.zeros(16)
    saturating = [lam for lam in range(16) if _deterministic_chsh(lam) == 2]
    weights[saturating] = 1.0 / len(saturating)
    return weights
