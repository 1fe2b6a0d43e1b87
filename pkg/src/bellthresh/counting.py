"""Exact multi-pair detection probabilities for threshold detectors.

The source emits M pairs (fixed, or Poisson-distributed with mean mu); each
pair independently produces single-pair outcomes with probabilities
p(alpha, beta).  Party-level counts n_ab follow a multinomial distribution,
and a detector fires according to its response function applied to the photon
count at its output port.

Double-click convention: when both of a party's detectors fire, the party
outputs "+".  Per party, given counts (n_plus, n_minus),

    P(+)     = Theta(n_plus)
    P(-)     = Theta(n_minus) * (1 - Theta(n_plus))
    P(empty) = (1 - Theta(n_plus)) * (1 - Theta(n_minus))

For the "+,+" coincidence this reproduces the plain multinomial sum
sum_{n} Theta(n_+^A) Theta(n_+^B) M! prod p_ab^{n_ab} / n_ab!, and it fixes
the remaining outcome probabilities needed by post-selected functionals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Union

import numpy as np
from scipy.special import gammainc, gammaln

from .detectors import ResponseFunction
from .quantum import PairProbabilities

POISSON_TAIL_TOL = 1e-10
_ORACLE_MAX_PAIRS = 8
_EXACT_COEF_MAX_PAIRS = 20  # exact integer multinomials below, log-space above

# Channel order for a pair's outcome: (+,+), (+,-), (-,+), (-,-).
_CHANNELS = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass(frozen=True)
class FixedPairs:
    """Source emitting exactly ``pairs`` entangled pairs per round."""

    pairs: int

    def __post_init__(self):
        if int(self.pairs) < 1:
            raise ValueError(f"pair count must be >= 1, got {self.pairs}")
        object.__setattr__(self, "pairs", int(self.pairs))


@dataclass(frozen=True)
class Poisson:
    """Poissonian source with mean ``mu``, truncated at ``m_max`` pairs.

    The truncation must leave a tail mass below 1e-10; ``Poisson.auto`` picks
    the smallest such m_max. Rounds with zero pairs produce no clicks and
    therefore count as inconclusive.
    """

    mu: float
    m_max: int

    def __post_init__(self):
        if not self.mu > 0.0:
            raise ValueError(f"mean pair number must be positive, got {self.mu}")
        m_max = int(self.m_max)
        if m_max < 1:
            raise ValueError(f"truncation bound must be >= 1, got {m_max}")
        if poisson_tail_mass(self.mu, m_max) >= POISSON_TAIL_TOL:
            raise ValueError(
                f"truncation at M={m_max} leaves tail mass >= {POISSON_TAIL_TOL} "
                f"for mu={self.mu}"
            )
        object.__setattr__(self, "m_max", m_max)

    @classmethod
    def auto(cls, mu: float) -> "Poisson":
        if not mu > 0.0:
            raise ValueError(f"mean pair number must be positive, got {mu}")
        cap = int(math.ceil(mu + 12.0 * math.sqrt(mu) + 20.0))
        for m in range(1, cap + 1):
            if poisson_tail_mass(mu, m) < POISSON_TAIL_TOL:
                return cls(mu, m)
        raise RuntimeError(f"no adequate truncation found below {cap} for mu={mu}")


SourceModel = Union[FixedPairs, Poisson]


@dataclass(frozen=True, eq=False)
class DetectionProbabilities:
    """Firing probabilities for one setting pair under a multi-pair source.

    ``joint[i, j]`` is the probability that Alice outputs the sign with index i
    and Bob the sign with index j (0 for "+", 1 for "-").  The joint entries do
    not sum to 1 in general; the rest is the inconclusive mass.
    """

    p_plus_a: float
    p_plus_b: float
    joint: np.ndarray

    def __post_init__(self):
        joint = np.asarray(self.joint, dtype=float)
        if joint.shape != (2, 2):
            raise ValueError(f"joint table must be 2x2, got {joint.shape}")
        joint = joint.copy()
        joint.setflags(write=False)
        object.__setattr__(self, "joint", joint)

    @property
    def p_plus_plus(self) -> float:
        return float(self.joint[0, 0])

    @property
    def conclusive_mass(self) -> float:
        return float(self.joint.sum())


def poisson_survival(n, mu):
    """P(Poisson(mu) >= n), exact via the regularized incomplete gamma."""
    n_arr = np.atleast_1d(np.asarray(n))
    mu_arr = np.atleast_1d(np.asarray(mu, dtype=float))
    n_b, mu_b = np.broadcast_arrays(n_arr, mu_arr)
    out = np.ones(n_b.shape)
    mask = n_b >= 1
    out[mask] = gammainc(n_b[mask].astype(float), mu_b[mask])
    if np.isscalar(n) and np.isscalar(mu):
        return float(out[0])
    return out.reshape(np.broadcast_shapes(np.shape(n), np.shape(mu)))


def poisson_tail_mass(mu: float, m_max: int) -> float:
    """Mass of P(M > m_max) for M ~ Poisson(mu)."""
    return float(poisson_survival(m_max + 1, mu))


def _poisson_pmf(mu: float, m_max: int) -> np.ndarray:
    """p_M = exp(-mu) mu^M / M! for M = 0..m_max (uncached; any mu)."""
    if m_max < 0:
        return np.empty(0)
    pmf = np.empty(m_max + 1)
    pmf[0] = math.exp(-mu)
    for m in range(1, m_max + 1):
        pmf[m] = pmf[m - 1] * mu / m
    return pmf


@lru_cache(maxsize=512)
def poisson_pmf_table(mu: float, m_max: int) -> np.ndarray:
    """Cached pair-number distribution for a configured Poisson source."""
    pmf = _poisson_pmf(mu, m_max)
    pmf.setflags(write=False)
    return pmf


@lru_cache(maxsize=None)
def _compositions(m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """All (n_pp, n_pm, n_mp, n_mm) with sum m, plus multinomial coefficients.

    Returns (counts (K,4), coef (K,), n_plus_a (K,), n_plus_b (K,)).
    """
    if m == 0:
        counts = np.zeros((1, 4), dtype=np.int64)
        coef = np.ones(1)
    else:
        grid = np.indices((m + 1, m + 1, m + 1)).reshape(3, -1).T
        keep = grid.sum(axis=1) <= m
        grid = grid[keep]
        counts = np.column_stack([grid, m - grid.sum(axis=1)]).astype(np.int64)
        if m <= _EXACT_COEF_MAX_PAIRS:
            fact = math.factorial(m)
            coef = np.array(
                [
                    fact // (math.factorial(a) * math.factorial(b) * math.factorial(c) * math.factorial(d))
                    for a, b, c, d in counts
                ],
                dtype=float,
            )
        else:
            coef = np.exp(gammaln(m + 1) - gammaln(counts + 1.0).sum(axis=1))
    n_plus_a = counts[:, 0] + counts[:, 1]
    n_plus_b = counts[:, 0] + counts[:, 2]
    for arr in (counts, coef, n_plus_a, n_plus_b):
        arr.setflags(write=False)
    return counts, coef, n_plus_a, n_plus_b


def _pair_table(pp) -> np.ndarray:
    if isinstance(pp, PairProbabilities):
        return pp.table
    table = np.asarray(pp, dtype=float)
    if table.shape != (2, 2):
        raise ValueError(f"pair probabilities must be a 2x2 table, got {table.shape}")
    return table


def _party_weights(theta: np.ndarray, n_plus: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """(w_plus, w_minus) per composition for one party under the double-click rule."""
    t_plus = theta[n_plus]
    t_minus = theta[m - n_plus]
    return t_plus, t_minus * (1.0 - t_plus)


def outcome_table(m: int, f_a: ResponseFunction, f_b: ResponseFunction, pp) -> np.ndarray:
    """All four joint outcome probabilities P(alpha, beta) for m emitted pairs.

    Exact multinomial sum over compositions of m into the four single-pair
    channels; the heavy per-composition terms are shared across the four
    outcome signs.
    """
    m = int(m)
    if m < 0:
        raise ValueError(f"pair count must be non-negative, got {m}")
    table = _pair_table(pp)
    counts, coef, n_plus_a, n_plus_b = _compositions(m)
    p = table.reshape(-1)
    terms = coef * np.prod(np.power(p[None, :], counts), axis=1)
    wa_plus, wa_minus = _party_weights(f_a.table(m), n_plus_a, m)
    wb_plus, wb_minus = _party_weights(f_b.table(m), n_plus_b, m)
    out = np.empty((2, 2))
    out[0, 0] = terms @ (wa_plus * wb_plus)
    out[0, 1] = terms @ (wa_plus * wb_minus)
    out[1, 0] = terms @ (wa_minus * wb_plus)
    out[1, 1] = terms @ (wa_minus * wb_minus)
    return np.clip(out, 0.0, 1.0)


def outcome_probability(
    m: int,
    f_a: ResponseFunction,
    f_b: ResponseFunction,
    pp,
    alpha: int,
    beta: int,
) -> float:
    """P(party A outputs alpha, party B outputs beta) for m emitted pairs."""
    from .quantum import _sign_index

    return float(outcome_table(m, f_a, f_b, pp)[_sign_index(alpha), _sign_index(beta)])


def _weight_matrix(f_a: ResponseFunction, f_b: ResponseFunction, m: int, n_plus_a, n_plus_b):
    """(K, 4) outcome weights per composition, column order (++, +-, -+, --)."""
    wa_plus, wa_minus = _party_weights(f_a.table(m), n_plus_a, m)
    wb_plus, wb_minus = _party_weights(f_b.table(m), n_plus_b, m)
    return np.stack(
        [wa_plus * wb_plus, wa_plus * wb_minus, wa_minus * wb_plus, wa_minus * wb_minus],
        axis=1,
    )


def _multinomial_terms(m: int, pp_batch: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shared multinomial term values for a batch of pair tables, shape (P, K)."""
    counts, coef, n_plus_a, n_plus_b = _compositions(m)
    p = pp_batch.reshape(pp_batch.shape[0], 4)
    terms = coef[None, :] * np.prod(np.power(p[:, None, :], counts[None, :, :]), axis=2)
    return terms, n_plus_a, n_plus_b


def outcome_tables_batch(
    m: int, f_a: ResponseFunction, f_b: ResponseFunction, pp_batch: np.ndarray
) -> np.ndarray:
    """Joint outcome tables for a batch of pair tables, shape (P, 2, 2).

    Same sum as ``outcome_table``, vectorized over the leading axis (the
    optimizers evaluate the four setting pairs in one batch).
    """
    pp_batch = np.asarray(pp_batch, dtype=float)
    terms, n_plus_a, n_plus_b = _multinomial_terms(int(m), pp_batch)
    weights = _weight_matrix(f_a, f_b, int(m), n_plus_a, n_plus_b)
    return np.clip((terms @ weights).reshape(-1, 2, 2), 0.0, 1.0)


def coincidence_batch(
    m: int, f_a: ResponseFunction, f_b: ResponseFunction, pp_batch: np.ndarray
) -> np.ndarray:
    """P(+,+) for a batch of pair tables, shape (P,)."""
    pp_batch = np.asarray(pp_batch, dtype=float)
    terms, n_plus_a, n_plus_b = _multinomial_terms(int(m), pp_batch)
    wa_plus, _ = _party_weights(f_a.table(m), n_plus_a, int(m))
    wb_plus, _ = _party_weights(f_b.table(m), n_plus_b, int(m))
    return np.clip(terms @ (wa_plus * wb_plus), 0.0, 1.0)


def poisson_outcome_tables_batch(
    source: Poisson, f_a: ResponseFunction, f_b: ResponseFunction, pp_batch: np.ndarray
) -> np.ndarray:
    """Poisson-mixed joint outcome tables for a batch of pair tables."""
    pp_batch = np.asarray(pp_batch, dtype=float)
    pmf = poisson_pmf_table(source.mu, source.m_max)
    out = np.zeros((pp_batch.shape[0], 2, 2))
    for m in range(source.m_max + 1):
        out += pmf[m] * outcome_tables_batch(m, f_a, f_b, pp_batch)
    return out


def poisson_perfect_coincidence_batch(
    mu: float, n_a: int, n_b: int, pp_batch: np.ndarray
) -> np.ndarray:
    """P(+,+) under a Poisson source and perfect thresholds, shape (P,).

    Specialization of ``poisson_coincidence_probability`` to step responses:
    the conditional expectations reduce to Poisson survival functions,
    vectorized over the batch.
    """
    pp_batch = np.asarray(pp_batch, dtype=float)
    lam0 = mu * pp_batch[:, 0, 0]
    lam_a = mu * pp_batch[:, 0, 1]
    lam_b = mu * pp_batch[:, 1, 0]
    kappa = max(n_a, n_b)
    k = np.arange(kappa)

    def survival(n_vals, lam):
        # P(Poisson(lam) >= n) with n <= 0 meaning certainty; n_vals is (kappa,)
        g = gammainc(np.maximum(n_vals, 1)[None, :].astype(float), lam[:, None])
        return np.where(n_vals[None, :] <= 0, 1.0, g)

    g_a = survival(n_a - k, lam_a)
    g_b = survival(n_b - k, lam_b)
    pmf = np.empty((pp_batch.shape[0], kappa))
    pmf[:, 0] = np.exp(-lam0)
    for i in range(1, kappa):
        pmf[:, i] = pmf[:, i - 1] * lam0 / i
    tail = gammainc(float(kappa), lam0)
    return (pmf * g_a * g_b).sum(axis=1) + tail


def marginal_fire_probability(m: int, f: ResponseFunction, p_plus: float) -> float:
    """Probability that the "+" detector fires when m pairs are emitted.

    Binomial sum: sum_k Theta(k) C(m, k) p_plus^k (1 - p_plus)^(m - k).
    """
    m = int(m)
    if m < 0:
        raise ValueError(f"pair count must be non-negative, got {m}")
    if not 0.0 <= p_plus <= 1.0:
        raise ValueError(f"per-pair probability must lie in [0, 1], got {p_plus}")
    k = np.arange(m + 1)
    if m <= _EXACT_COEF_MAX_PAIRS:
        binom = np.array([math.comb(m, int(j)) for j in k], dtype=float)
    else:
        binom = np.exp(gammaln(m + 1) - gammaln(k + 1.0) - gammaln(m - k + 1.0))
    pmf = binom * np.power(p_plus, k) * np.power(1.0 - p_plus, m - k)
    return float(pmf @ f.table(m))


def poisson_mix(source: Poisson, per_m: Callable[[int], float]) -> float:
    """Truncated Poisson average sum_M p_M per_m(M) over M = 0..m_max."""
    if not isinstance(source, Poisson):
        raise TypeError(f"poisson_mix requires a Poisson source, got {type(source).__name__}")
    pmf = poisson_pmf_table(source.mu, source.m_max)
    return float(sum(pmf[m] * per_m(m) for m in range(source.m_max + 1)))


def poisson_outcome_table(
    source: Poisson, f_a: ResponseFunction, f_b: ResponseFunction, pp
) -> np.ndarray:
    """Poisson-weighted joint outcome table (truncated mixture over pair counts)."""
    pmf = poisson_pmf_table(source.mu, source.m_max)
    table = _pair_table(pp)
    out = np.zeros((2, 2))
    for m in range(source.m_max + 1):
        out += pmf[m] * outcome_table(m, f_a, f_b, table)
    return out


def _theta_tail_expectations(f: ResponseFunction, lam: float, kappa: int) -> np.ndarray:
    """g(k) = E[Theta(k + X)] for X ~ Poisson(lam) and k = 0..kappa-1, exact.

    Theta is constant from its saturation point on, so each expectation is a
    finite head sum plus a closed Poisson tail; no truncation error enters.
    """
    sat = f.saturation_point
    theta = np.asarray(f.table(sat))
    theta_sat = theta[sat]
    g = np.empty(kappa)
    if kappa == 0:
        return g
    ks = np.arange(kappa)
    n_free = np.maximum(sat - ks, 0)
    pmf = _poisson_pmf(lam, int(n_free.max()) - 1)
    tails = poisson_survival(n_free, lam)
    for idx in range(kappa):
        nf = int(n_free[idx])
        head = float(pmf[:nf] @ theta[idx : idx + nf]) if nf > 0 else 0.0
        g[idx] = head + theta_sat * tails[idx]
    return g


def poisson_marginal_fire_probability(mu: float, f: ResponseFunction, p_plus: float) -> float:
    """Poisson-source "+" firing probability via thinning.

    With M ~ Poisson(mu) and each pair independently routed to "+" with
    probability p_plus, the "+" photon count is Poisson(mu * p_plus); the
    expectation of Theta under it has a closed tail, so no truncation error
    enters.  Agrees with ``poisson_mix`` over ``marginal_fire_probability`` up
    to the mixture's truncation.
    """
    if not mu > 0.0:
        raise ValueError(f"mean pair number must be positive, got {mu}")
    if not 0.0 <= p_plus <= 1.0:
        raise ValueError(f"per-pair probability must lie in [0, 1], got {p_plus}")
    return float(_theta_tail_expectations(f, mu * p_plus, 1)[0])


def poisson_coincidence_probability(
    mu: float, f_a: ResponseFunction, f_b: ResponseFunction, pp
) -> float:
    """Poisson-source P(+,+) via independent thinned counts.

    Under a Poisson source the four channel counts are independent Poissons
    with means mu * p_ab.  Conditioning on the shared (+,+) count k decouples
    the two parties:

        P(+,+) = sum_k pmf(k; mu p_pp) E[Theta_A(k + X_pm)] E[Theta_B(k + X_mp)]

    with X_pm ~ Poisson(mu p_pm), X_mp ~ Poisson(mu p_mp), and a closed tail
    once both response functions saturate.
    """
    if not mu > 0.0:
        raise ValueError(f"mean pair number must be positive, got {mu}")
    table = _pair_table(pp)
    lam_shared = mu * float(table[0, 0])
    lam_a = mu * float(table[0, 1])
    lam_b = mu * float(table[1, 0])
    kappa = max(f_a.saturation_point, f_b.saturation_point)
    g_a = _theta_tail_expectations(f_a, lam_a, kappa)
    g_b = _theta_tail_expectations(f_b, lam_b, kappa)
    pmf = _poisson_pmf(lam_shared, kappa - 1)
    head = float(pmf @ (g_a * g_b))
    tail = f_a.saturation_value * f_b.saturation_value * poisson_survival(kappa, lam_shared)
    return head + float(tail)


def detection_probabilities(
    source: SourceModel, f_a: ResponseFunction, f_b: ResponseFunction, pp
) -> DetectionProbabilities:
    """Marginal and joint firing probabilities for one setting pair."""
    table = _pair_table(pp)
    p_plus_a = float(table[0, 0] + table[0, 1])
    p_plus_b = float(table[0, 0] + table[1, 0])
    if isinstance(source, FixedPairs):
        return DetectionProbabilities(
            p_plus_a=marginal_fire_probability(source.pairs, f_a, p_plus_a),
            p_plus_b=marginal_fire_probability(source.pairs, f_b, p_plus_b),
            joint=outcome_table(source.pairs, f_a, f_b, table),
        )
    if isinstance(source, Poisson):
        return DetectionProbabilities(
            p_plus_a=poisson_marginal_fire_probability(source.mu, f_a, p_plus_a),
            p_plus_b=poisson_marginal_fire_probability(source.mu, f_b, p_plus_b),
            joint=poisson_outcome_table(source, f_a, f_b, table),
        )
    raise TypeError(f"unknown source model {type(source).__name__}")


def enumerate_oracle_table(m: int, f_a: ResponseFunction, f_b: ResponseFunction, pp) -> np.ndarray:
    """Brute-force joint outcome table by enumerating all 4^m pair assignments.

    Independent of the composition-sum engine; used to validate it.
    """
    m = int(m)
    if m < 0:
        raise ValueError(f"pair count must be non-negative, got {m}")
    if m > _ORACLE_MAX_PAIRS:
        raise ValueError(f"oracle enumeration limited to m <= {_ORACLE_MAX_PAIRS}, got {m}")
    table = _pair_table(pp)
    if m == 0:
        counts = np.zeros((1, 4), dtype=np.int64)
        probs = np.ones(1)
    else:
        assignments = (np.arange(4**m)[:, None] // 4 ** np.arange(m)[None, :]) % 4
        p_flat = table.reshape(-1)
        probs = np.prod(p_flat[assignments], axis=1)
        counts = np.stack([(assignments == c).sum(axis=1) for c in range(4)], axis=1)
    n_plus_a = counts[:, 0] + counts[:, 1]
    n_plus_b = counts[:, 0] + counts[:, 2]
    wa_plus, wa_minus = _party_weights(f_a.table(m), n_plus_a, m)
    wb_plus, wb_minus = _party_weights(f_b.table(m), n_plus_b, m)
    out = np.empty((2, 2))
    out[0, 0] = probs @ (wa_plus * wb_plus)
    out[0, 1] = probs @ (wa_plus * wb_minus)
    out[1, 0] = probs @ (wa_minus * wb_plus)
    out[1, 1] = probs @ (wa_minus * wb_minus)
    return np.clip(out, 0.0, 1.0)


def enumerate_oracle(
    m: int,
    f_a: ResponseFunction,
    f_b: ResponseFunction,
    pp,
    alpha: int,
    beta: int,
) -> float:
    from .quantum import _sign_index

    return float(enumerate_oracle_table(m, f_a, f_b, pp)[_sign_index(alpha), _sign_index(beta)])
