"""Design and runtime laws for the collaborative adaptive protocol.

Agents exchange two signals: the usual weighted output disagreement and a
second network sum over neighbour protocol states.  Each agent runs a full
observer driven by the mismatch between the two, plus two adaptive gains.
rho scales the observer injection and grows through a dead zone on the
mismatch energy; alpha selects a feedback gain from a one-parameter family
of Riccati solutions and grows (rate capped at 1) while the exchanged
signal is large.

Solving a Riccati equation at every integration substep would dwarf the
simulation itself, so the alpha family is evaluated on a geometric grid
(ratio 1.05) with lazily cached solutions; the controller holds the
solution at the grid point just below the current alpha.  Off-grid values
remain available exactly through solve_p_alpha for diagnostics and tests.
"""

from dataclasses import dataclass

import numpy as np

from .agents import AgentModel, check_assumptions
from .linalg import SolverError, min_eigenvalue_sym, solve_care, solve_dual_care_shifted

GRID_RATIO = 1.05

# Halving search for the observer Riccati shift stops after this many trials.
_ETA_TRIALS = 60

_REQUIRED_CONDITIONS = (
    ("stabilizable", "stabilizable"),
    ("observable", "observable"),
    ("right_invertible", "right-invertible"),
    ("minimum_phase", "minimum-phase"),
)


class PAlphaGrid:
    """Geometric grid of solutions P_alpha of the parameterized Riccati family.

    Cell k holds the stabilizing solution of

        A_shifted' P + P A_shifted - alpha_k P B B' P + CtC = 0,

    with alpha_k = ratio**k, which is the shifted form of the family
    A'P + PA - alpha PBB'P + 2 eps P + C'C = 0 for A_shifted = A + eps I.
    Cells are solved on first use, warm-starting Newton from the nearest
    solved neighbour, and inserted atomically (duplicate concurrent solves
    return identical values, so last-write-wins is safe).
    """

    def __init__(self, A_shifted, B, CtC, ratio: float = GRID_RATIO):
        self.A_shifted = np.asarray(A_shifted, dtype=float)
        self.B = np.asarray(B, dtype=float)
        self.CtC = np.asarray(CtC, dtype=float)
        if not ratio > 1.0:
            raise ValueError("grid ratio must exceed 1")
        self.ratio = float(ratio)
        self._log_ratio = np.log(self.ratio)
        self._cells: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def index_for(self, alpha: float) -> int:
        """Largest k with ratio**k <= alpha (nearest grid point below)."""
        if not alpha > 0.0:
            raise ValueError("alpha must be positive")
        # The nudge keeps exact powers of the ratio in their own cell
        # despite the log round-trip landing a few ulps short.
        return int(np.floor(np.log(alpha) / self._log_ratio + 1e-12))

    def indices_for(self, alphas) -> np.ndarray:
        """Vectorized index_for."""
        alphas = np.asarray(alphas, dtype=float)
        if np.any(alphas <= 0.0):
            raise ValueError("alpha must be positive")
        return np.floor(np.log(alphas) / self._log_ratio + 1e-12).astype(int)

    def alpha_at(self, k: int) -> float:
        return self.ratio**k

    def cached_indices(self) -> tuple[int, ...]:
        return tuple(sorted(self._cells))

    def _nearest_cached(self, k: int) -> int | None:
        if not self._cells:
            return None
        return min(self._cells, key=lambda c: abs(c - k))

    def _ensure(self, k: int, warm=None) -> tuple[np.ndarray, np.ndarray]:
        entry = self._cells.get(k)
        if entry is None:
            P = solve_care(
                self.A_shifted, self.B, w_state=self.CtC, gain_scale=self.alpha_at(k), initial_p=warm
            )
            entry = self._cells.setdefault(k, (P, self.B.T @ P))
        return entry

    def cell(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Solution pair (P_k, B'P_k) for grid cell k, solving on first use.

        Missing cells are filled by walking outward from cell 0, each solve
        warm-started from its inner neighbour.  The walk makes every cached
        value a function of the cell index alone, never of the order in
        which callers asked, which keeps repeated runs bit-identical.
        """
        entry = self._cells.get(k)
        if entry is not None:
            return entry
        entry = self._ensure(0)
        step = 1 if k > 0 else -1
        for j in range(step, k + step, step):
            entry = self._ensure(j, warm=entry[0])
        return entry

    def solve_exact(self, alpha: float) -> np.ndarray:
        """P_alpha at the requested alpha itself, not the quantized one.

        Grid points are answered from (and stored in) the cache; off-grid
        values are solved fresh with a warm start and never cached.
        """
        k = self.index_for(alpha)
        ak = self.alpha_at(k)
        if abs(alpha - ak) <= 1e-9 * ak:
            return self.cell(k)[0]
        near = self._nearest_cached(k)
        warm = self._cells[near][0] if near is not None else None
        return solve_care(
            self.A_shifted, self.B, w_state=self.CtC, gain_scale=float(alpha), initial_p=warm
        )


def p_alpha_family(A, B, C, epsilon: float) -> PAlphaGrid:
    """Standalone grid for the Riccati family of (A, B, C) with a given shift.

    Accepts epsilon = 0, unlike design_collab which always picks a positive
    shift; the zero-shift family is what the closed-form scalar and chain
    examples describe.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    n = A.shape[0]
    if A.shape != (n, n) or B.shape[0] != n or C.shape[1] != n:
        raise ValueError("inconsistent state-space dimensions")
    if epsilon < 0.0:
        raise ValueError("epsilon must be nonnegative")
    return PAlphaGrid(A + float(epsilon) * np.eye(n), B, C.T @ C)


@dataclass(frozen=True)
class CollabDesign:
    """Frozen output of design_collab.

    Q solves A'Q + QA - QC'CQ + eta I = 0 and shapes the observer
    injection QCt = Q C'.  The dead-zone level d obeys 0 < 4d < delta^2.
    The grid carries the feedback family for A + epsilon I.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    QCt: np.ndarray
    CtC: np.ndarray
    eta: float
    epsilon: float
    d: float
    delta: float
    grid: PAlphaGrid

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p_out(self) -> int:
        return self.C.shape[0]


@dataclass
class CollabAgentState:
    """Per-agent runtime state: observer estimate and the two gains."""

    x_hat: np.ndarray
    rho: float
    alpha: float


def _uncontrollable_margin(A, B) -> float | None:
    """Smallest decay rate among uncontrollable modes; None if controllable."""
    n = A.shape[0]
    margins = []
    for lam in np.linalg.eigvals(A):
        M = np.hstack([A - lam * np.eye(n), B])
        s = np.linalg.svd(M, compute_uv=False)
        if s[n - 1] <= 1e-9 * max(s[0], 1.0):
            margins.append(-lam.real)
    return min(margins) if margins else None


def design_collab(
    model: AgentModel,
    delta: float | None = None,
    d_override: float | None = None,
    eta_override: float | None = None,
) -> CollabDesign:
    """Build the collaborative protocol constants for one agent model.

    The observer Riccati shift eta defaults to the largest value in
    {1, 1/2, 1/4, ...} whose solution is positive definite.  The feedback
    shift epsilon is min(0.1, half the slowest invariant-zero decay, half
    the slowest uncontrollable-mode decay), which keeps the shifted model
    minimum-phase and stabilizable.

    Exactly one of `delta` or `d_override` must be given, or both: with
    only d the level is delta = sqrt(8 d); with both, an override violating
    4 d < delta^2 is discarded in favour of the default d = delta^2 / 8.
    """
    report = check_assumptions(model)
    failed = [label for attr, label in _REQUIRED_CONDITIONS if not getattr(report, attr)]
    if failed:
        raise SolverError(
            "model does not admit the collaborative protocol; failing "
            "conditions: " + ", ".join(failed)
        )
    if report.uniform_rank is None:
        raise SolverError(
            "uniform rank of the model could not be decided numerically; "
            "refusing to design"
        )
    if not report.uniform_rank:
        raise SolverError(
            "model does not have uniform rank; designs requiring a "
            "precompensator are out of scope"
        )

    if eta_override is not None:
        if not eta_override > 0.0:
            raise ValueError("eta must be positive")
        Q = solve_dual_care_shifted(model.A, model.C, eta_override)
        if min_eigenvalue_sym(Q) <= 0.0:
            raise SolverError(f"observer Riccati solution not positive definite at eta={eta_override}")
        eta = float(eta_override)
    else:
        eta = None
        trial = 1.0
        for _ in range(_ETA_TRIALS):
            try:
                Q = solve_dual_care_shifted(model.A, model.C, trial)
            except SolverError:
                trial /= 2.0
                continue
            if min_eigenvalue_sym(Q) > 0.0:
                eta = trial
                break
            trial /= 2.0
        if eta is None:
            raise SolverError(
                "no eta in the halving sequence from 1 admits a positive "
                "definite observer Riccati solution"
            )

    candidates = [0.1]
    zeros = report.invariant_zeros
    if zeros.size:
        candidates.append(0.5 * float(np.min(-zeros.real)))
    margin = _uncontrollable_margin(model.A, model.B)
    if margin is not None:
        candidates.append(0.5 * margin)
    epsilon = min(candidates)

    if delta is None:
        if d_override is None:
            raise ValueError("provide delta, d_override, or both")
        if not d_override > 0.0:
            raise ValueError("dead-zone level d must be positive")
        d = float(d_override)
        delta = float(np.sqrt(8.0 * d))
    else:
        if not delta > 0.0:
            raise ValueError("delta must be positive")
        if d_override is not None and 0.0 < 4.0 * d_override < delta**2:
            d = float(d_override)
        else:
            d = delta**2 / 8.0

    CtC = model.C.T @ model.C
    grid = p_alpha_family(model.A, model.B, model.C, epsilon)
    grid.cell(0)  # seed the unit-alpha cell eagerly

    return CollabDesign(
        A=model.A,
        B=model.B,
        C=model.C,
        Q=Q,
        QCt=Q @ model.C.T,
        CtC=CtC,
        eta=eta,
        epsilon=float(epsilon),
        d=d,
        delta=float(delta),
        grid=grid,
    )


def solve_p_alpha(design: CollabDesign, alpha: float) -> np.ndarray:
    """Exact P_alpha for this design; cached when alpha is a grid point."""
    return design.grid.solve_exact(alpha)


def collab_derivatives(
    design: CollabDesign, state: CollabAgentState, zeta, zeta_tilde
) -> tuple[np.ndarray, float, float, np.ndarray]:
    """One agent's protocol derivatives and control at a frozen instant.

    Returns (d x_hat / dt, d rho / dt, d alpha / dt, u).  Both gains are
    nondecreasing by construction and d alpha / dt never exceeds 1.  The
    feedback gain is alpha times the cached row at the grid point just
    below alpha; alpha = 0 means no feedback at all.
    """
    x_hat = np.asarray(state.x_hat, dtype=float).reshape(-1)
    zeta = np.asarray(zeta, dtype=float).reshape(-1)
    zeta_tilde = np.asarray(zeta_tilde, dtype=float).reshape(-1)
    if x_hat.shape[0] != design.n:
        raise ValueError(f"observer state must have length {design.n}, got {x_hat.shape[0]}")
    if zeta.shape[0] != design.p_out:
        raise ValueError(f"measurement must have length {design.p_out}, got {zeta.shape[0]}")
    if zeta_tilde.shape[0] != design.n:
        raise ValueError(f"exchanged state must have length {design.n}, got {zeta_tilde.shape[0]}")

    c_zt = design.C @ zeta_tilde
    e = c_zt - zeta
    mismatch = float(e @ e)
    drho = mismatch if mismatch >= design.d else 0.0

    exchange_energy = float(c_zt @ c_zt)
    if exchange_energy >= 1.0:
        dalpha = 1.0
    elif exchange_energy >= design.d:
        dalpha = exchange_energy
    else:
        dalpha = 0.0

    if state.alpha > 0.0:
        _, gain = design.grid.cell(design.grid.index_for(state.alpha))
        u = -state.alpha * (gain @ (x_hat + zeta_tilde))
    else:
        u = np.zeros(design.m)

    dx_hat = design.A @ x_hat + design.B @ u - state.rho * (design.QCt @ e)
    return dx_hat, drho, dalpha, u
