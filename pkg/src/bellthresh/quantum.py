"""Two-qubit states, projective measurements, and single-pair outcome probabilities.

Everything downstream (the multi-pair counting engine, the Bell functionals)
consumes the per-pair probabilities p(alpha, beta | a, b) produced here.
Computational basis order is |00>, |01>, |10>, |11>.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PLUS = +1
MINUS = -1
SIGNS = (PLUS, MINUS)

TRACE_TOL = 1e-12
HERMITICITY_TOL = 1e-12
EIGENVALUE_FLOOR = -1e-10  # eigensolvers return tiny negatives for rank-deficient matrices
UNIT_NORM_TOL = 1e-12

_SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
_SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
_SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
_PAULI = (_SIGMA_X, _SIGMA_Y, _SIGMA_Z)
_ID2 = np.eye(2, dtype=complex)


def _sign_index(sign: int) -> int:
    if sign == PLUS:
        return 0
    if sign == MINUS:
        return 1
    raise ValueError(f"outcome sign must be +1 or -1, got {sign!r}")


@dataclass(frozen=True, eq=False)
class TwoQubitState:
    """A 4x4 density matrix, validated on construction (trace 1, Hermitian, PSD)."""

    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=complex)
        if rho.shape != (4, 4):
            raise ValueError(f"density matrix must be 4x4, got shape {rho.shape}")
        if abs(np.trace(rho).real - 1.0) > TRACE_TOL or abs(np.trace(rho).imag) > TRACE_TOL:
            raise ValueError(f"trace(rho) = {np.trace(rho)} is not 1")
        if np.max(np.abs(rho - rho.conj().T)) > HERMITICITY_TOL:
            raise ValueError("density matrix is not Hermitian")
        if np.min(np.linalg.eigvalsh(rho)) < EIGENVALUE_FLOOR:
            raise ValueError("density matrix has a significantly negative eigenvalue")
        rho = rho.copy()
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    def purity(self) -> float:
        return float(np.trace(self.rho @ self.rho).real)

    def swap_parties(self) -> "TwoQubitState":
        """Exchange the roles of the two qubits (SWAP rho SWAP)."""
        perm = [0, 2, 1, 3]
        return TwoQubitState(self.rho[np.ix_(perm, perm)])


@dataclass(frozen=True, eq=False)
class Setting:
    """A measurement direction: a unit vector on the Bloch sphere."""

    bloch: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.bloch, dtype=float)
        if vec.shape != (3,):
            raise ValueError(f"Bloch vector must have 3 components, got shape {vec.shape}")
        if abs(np.linalg.norm(vec) - 1.0) > UNIT_NORM_TOL:
            raise ValueError(f"Bloch vector must be unit norm, |v| = {np.linalg.norm(vec)}")
        vec = vec.copy()
        vec.setflags(write=False)
        object.__setattr__(self, "bloch", vec)

    @classmethod
    def from_xz_angle(cls, phi: float) -> "Setting":
        """Direction cos(phi) sigma_z + sin(phi) sigma_x, i.e. the x-z plane."""
        return cls(np.array([np.sin(phi), 0.0, np.cos(phi)]))

    @classmethod
    def from_spherical(cls, polar: float, azimuth: float) -> "Setting":
        return cls(
            np.array(
                [
                    np.sin(polar) * np.cos(azimuth),
                    np.sin(polar) * np.sin(azimuth),
                    np.cos(polar),
                ]
            )
        )

    def negated(self) -> "Setting":
        return Setting(-self.bloch)

    def dot(self, other: "Setting") -> float:
        return float(self.bloch @ other.bloch)


@dataclass(frozen=True, eq=False)
class PairProbabilities:
    """Joint outcome probabilities p(alpha, beta) for one pair under one setting pair.

    ``table[i, j]`` holds p(alpha, beta) with index 0 for "+" and 1 for "-".
    """

    table: np.ndarray

    def __post_init__(self):
        table = np.asarray(self.table, dtype=float)
        if table.shape != (2, 2):
            raise ValueError(f"pair probability table must be 2x2, got {table.shape}")
        if np.min(table) < -1e-12 or np.max(table) > 1.0 + 1e-12:
            raise ValueError(f"pair probabilities outside [0, 1]: {table}")
        if abs(table.sum() - 1.0) > 1e-12:
            raise ValueError(f"pair probabilities sum to {table.sum()}, not 1")
        table = table.copy()
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    def prob(self, alpha: int, beta: int) -> float:
        return float(self.table[_sign_index(alpha), _sign_index(beta)])

    @property
    def marginal_plus_a(self) -> float:
        return float(self.table[0, 0] + self.table[0, 1])

    @property
    def marginal_plus_b(self) -> float:
        return float(self.table[0, 0] + self.table[1, 0])


def pure_state(theta: float) -> TwoQubitState:
    """Density matrix of cos(theta)|00> + sin(theta)|11>.

    theta = 0 is a product state, theta = pi/4 is maximally entangled; any real
    theta is accepted (the family is periodic and symmetric).
    """
    ket = np.zeros(4, dtype=complex)
    ket[0] = np.cos(theta)
    ket[3] = np.sin(theta)
    return TwoQubitState(np.outer(ket, ket.conj()))


def singlet() -> TwoQubitState:
    """Density matrix of the singlet (|01> - |10>)/sqrt(2)."""
    ket = np.zeros(4, dtype=complex)
    ket[1] = 1.0 / np.sqrt(2.0)
    ket[2] = -1.0 / np.sqrt(2.0)
    return TwoQubitState(np.outer(ket, ket.conj()))


def maximally_mixed() -> TwoQubitState:
    return TwoQubitState(np.eye(4, dtype=complex) / 4.0)


def add_white_noise(state: TwoQubitState, w: float) -> TwoQubitState:
    """Convex mixture w * rho + (1 - w) * identity/4."""
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"noise weight must lie in [0, 1], got {w}")
    return TwoQubitState(w * state.rho + (1.0 - w) * np.eye(4, dtype=complex) / 4.0)


def werner(w: float) -> TwoQubitState:
    """Werner state: the singlet mixed with weight (1 - w) of white noise."""
    return add_white_noise(singlet(), w)


def projector(setting: Setting, sign: int) -> np.ndarray:
    """Rank-1 projector (identity + sign * a.sigma) / 2 onto the +/- eigenspace."""
    idx = _sign_index(sign)
    s = 1.0 if idx == 0 else -1.0
    a = setting.bloch
    return (_ID2 + s * (a[0] * _SIGMA_X + a[1] * _SIGMA_Y + a[2] * _SIGMA_Z)) / 2.0


def joint_probability(
    state: TwoQubitState, a: Setting, b: Setting, alpha: int, beta: int
) -> float:
    """tr[(P_a^alpha x P_b^beta) rho] for a single pair, clamped to [0, 1]."""
    op = np.kron(projector(a, alpha), projector(b, beta))
    value = np.trace(op @ state.rho).real
    return float(min(1.0, max(0.0, value)))


def pair_probabilities(state: TwoQubitState, a: Setting, b: Setting) -> PairProbabilities:
    """All four joint probabilities p(alpha, beta) for one setting pair."""
    table = np.array(
        [
            [joint_probability(state, a, b, sa, sb) for sb in SIGNS]
            for sa in SIGNS
        ]
    )
    return PairProbabilities(table)


def bloch_form(state: TwoQubitState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Local Bloch vectors and the 3x3 correlation matrix of a two-qubit state.

    Returns (r_a, r_b, T) with r_a[i] = tr(rho sigma_i x id), T[i, j] =
    tr(rho sigma_i x sigma_j), so that p(alpha, beta | a, b) =
    (1 + alpha a.r_a + beta b.r_b + alpha beta a.T.b) / 4.  This is the fast
    route used by the optimizers; ``pair_probabilities`` is the reference.
    """
    rho = state.rho
    r_a = np.array([np.trace(rho @ np.kron(s, _ID2)).real for s in _PAULI])
    r_b = np.array([np.trace(rho @ np.kron(_ID2, s)).real for s in _PAULI])
    corr = np.array(
        [[np.trace(rho @ np.kron(si, sj)).real for sj in _PAULI] for si in _PAULI]
    )
    return r_a, r_b, corr


def concurrence(state: TwoQubitState) -> float:
    """Wootters concurrence via the spin-flip spectrum (entanglement monotone).

    Uses the Hermitian form sqrt(rho) rho_tilde sqrt(rho); the plain product
    rho rho_tilde is non-normal and its near-zero eigenvalues lose accuracy.
    """
    yy = np.kron(_SIGMA_Y, _SIGMA_Y)
    rho = state.rho
    rho_tilde = yy @ rho.conj() @ yy
    w, u = np.linalg.eigh(rho)
    sqrt_rho = (u * np.sqrt(np.clip(w, 0.0, None))) @ u.conj().T
    lams = np.sqrt(np.clip(np.linalg.eigvalsh(sqrt_rho @ rho_tilde @ sqrt_rho), 0.0, None))
    lams = np.sort(lams)[::-1]
    return float(max(0.0, lams[0] - lams[1] - lams[2] - lams[3]))
