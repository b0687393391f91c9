"""Qubit state reconstruction from six-outcome detection counts.

Counting is done in the three Pauli bases: Z (H/V), X (D/A) and Y (R/L).
The forward orientation reconstructs the four received BB84 states from a
4x6 count matrix; the reversed orientation post-selects on each of the
four receiver outcomes of a 6x4 matrix and reconstructs, per outcome, the
effective pre-channel state the channel maps onto that outcome.

Reconstruction is maximum-likelihood via the standard fixed-point
iteration rho -> R rho R / tr(...), where R is the count-weighted sum of
outcome projectors.  For a single qubit the whole iteration collapses to
arithmetic on the Stokes components, which is how it is computed here.
Steps that would decrease the log-likelihood are diluted (the step
operator is blended toward the identity) until they do not, so the
likelihood trace is non-decreasing by construction.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientCountsError, MLEConvergenceError
from .polarization import (
    ALL_LABELS,
    BB84_LABELS,
    PAULI_STOKES,
    DensityMatrix,
    density_from_stokes,
)

#: eigenvalue floor used to keep the MLE initializer interior
_EIG_FLOOR = 1e-6
_DEFAULT_LOGLIK_TOL = 1e-10
_DEFAULT_MAX_ITERATIONS = 10_000
#: minimum total counts for a meaningful six-outcome fit
_MIN_TOTAL_COUNTS = 6

_UNIFORM_WEIGHTS = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
#: outcome pairs per basis, as indices into (H, V, D, A, R, L)
_BASIS_PAIRS = ((0, 1), (2, 3), (4, 5))
_BASIS_NAMES = ("Z", "X", "Y")


class Direction(str, enum.Enum):
    """Orientation of the alignment protocol."""

    FORWARD = "forward"
    REVERSED = "reversed"


#: (rows, columns) label sets per direction
COUNT_SHAPE = {Direction.FORWARD: (4, 6), Direction.REVERSED: (6, 4)}
ROW_LABELS = {Direction.FORWARD: BB84_LABELS, Direction.REVERSED: ALL_LABELS}
COLUMN_LABELS = {Direction.FORWARD: ALL_LABELS, Direction.REVERSED: BB84_LABELS}


@dataclass(frozen=True)
class CountMatrix:
    """Detection counts indexed by input state (rows) and outcome (columns).

    Raw acquisition counts are integers; background-subtracted matrices may
    hold fractional values (the subtracted mean is rarely integral), so
    entries are stored as nonnegative floats.  ``background_subtracted``
    records that a matrix went through mean-background subtraction, which
    also tells the reconstruction to tolerate basis pairs whose counts were
    entirely clipped away.
    """

    direction: Direction
    counts: np.ndarray
    background_subtracted: bool = False

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=float)
        expected = COUNT_SHAPE[self.direction]
        if c.shape != expected:
            raise ValueError(
                f"{self.direction.value} counts must have shape {expected}, got {c.shape}"
            )
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise ValueError("counts must be finite and nonnegative")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> float:
        return float(self.counts.sum())


@dataclass(frozen=True)
class ReconstructionSet:
    """Four reconstructed states, indexed by the BB84 labels (H, V, D, A)."""

    direction: Direction
    states: tuple[DensityMatrix, DensityMatrix, DensityMatrix, DensityMatrix]

    def __post_init__(self):
        if len(self.states) != 4:
            raise ValueError("a reconstruction set holds exactly four states")


@dataclass(frozen=True)
class MLEDiagnostics:
    iterations: int
    converged: bool
    log_likelihood: float
    final_delta: float
    loglik_trace: tuple[float, ...] | None = None


def _validate_weights(basis_weights) -> tuple[float, float, float]:
    w = tuple(float(x) for x in basis_weights)
    if len(w) != 3:
        raise ValueError(f"expected three basis weights (Z, X, Y), got {len(w)}")
    if any(x <= 0.0 for x in w):
        raise ValueError(f"basis weights must be strictly positive, got {w}")
    if abs(sum(w) - 1.0) > 1e-9:
        raise ValueError(f"basis weights must sum to 1, got sum {sum(w)!r}")
    return w


def _stokes_estimates(counts, *, allow_empty: bool) -> list[float]:
    """Per-axis Stokes estimates (n+ - n-)/(n+ + n-).

    An empty basis pair is an error unless ``allow_empty``, in which case
    the corresponding component is pinned at zero (no information).
    """
    s = []
    for name, (i_plus, i_minus) in zip(_BASIS_NAMES, _BASIS_PAIRS):
        pair_total = counts[i_plus] + counts[i_minus]
        if pair_total <= 0.0:
            if not allow_empty:
                raise InsufficientCountsError(
                    f"no counts in the {name} basis "
                    f"(outcomes {ALL_LABELS[i_plus]}/{ALL_LABELS[i_minus]})",
                    basis=name,
                )
            s.append(0.0)
        else:
            s.append((counts[i_plus] - counts[i_minus]) / pair_total)
    return s


def linear_inversion(counts) -> np.ndarray:
    """Direct Stokes inversion of six outcome totals, ordered (H,V,D,A,R,L).

    Returns a Hermitian trace-one matrix that may be non-positive for noisy
    counts; it serves as the MLE initializer and as an independent
    cross-check of the iterative reconstruction.
    """
    c = np.asarray(counts, dtype=float)
    if c.shape != (6,):
        raise ValueError(f"expected six outcome totals, got shape {c.shape}")
    if np.any(c < 0):
        raise ValueError("counts must be nonnegative")
    s1, s2, s3 = _stokes_estimates(c, allow_empty=False)
    m = np.eye(2, dtype=complex)
    for s, sigma in zip((s1, s2, s3), PAULI_STOKES):
        m = m + s * sigma
    return 0.5 * m


def _projected_stokes(s: list[float]) -> list[float]:
    """Clip negative eigenvalues to the floor and renormalize the trace.

    In Stokes form the eigenvalues are (1 +- |s|)/2, so clipping shrinks
    the Bloch radius to (lam_plus - floor)/(lam_plus + floor).  A radius
    within rounding error of 1 is snapped onto the sphere instead: data
    that is exactly consistent with a pure state must start (and stay) at
    that pure state, where the fixed point is reached immediately; pushing
    it inside would cost thousands of slow recovery iterations.
    """
    radius = math.sqrt(s[0] * s[0] + s[1] * s[1] + s[2] * s[2])
    lam_minus = (1.0 - radius) / 2.0
    if lam_minus >= 0.0:
        return list(s)
    if lam_minus >= -1e-12:
        return [x / radius for x in s]
    lam_plus = (1.0 + radius) / 2.0
    new_radius = (lam_plus - _EIG_FLOOR) / (lam_plus + _EIG_FLOOR)
    scale = new_radius / radius
    return [x * scale for x in s]


def _log_likelihood(n, w, s) -> float:
    total = 0.0
    for (i_plus, i_minus), wb, sk in zip(_BASIS_PAIRS, w, s):
        p_plus = wb * (1.0 + sk) / 2.0
        p_minus = wb * (1.0 - sk) / 2.0
        if n[i_plus] > 0.0:
            if p_plus <= 0.0:
                return -math.inf
            total += n[i_plus] * math.log(p_plus)
        if n[i_minus] > 0.0:
            if p_minus <= 0.0:
                return -math.inf
            total += n[i_minus] * math.log(p_minus)
    return total


def _mle_stokes(
    n,
    w,
    *,
    allow_empty: bool,
    dilution: float,
    loglik_tolerance: float,
    max_iterations: int,
    keep_trace: bool,
):
    """Run the diluted fixed-point iteration on Stokes components."""
    total = n[0] + n[1] + n[2] + n[3] + n[4] + n[5]
    s = _projected_stokes(_stokes_estimates(n, allow_empty=allow_empty))
    loglik = _log_likelihood(n, w, s)
    trace = [loglik] if keep_trace else None

    iterations = 0
    delta = math.inf
    converged = False
    while iterations < max_iterations:
        iterations += 1
        # step operator R = a I + v . sigma, from count/probability ratios
        a = 0.0
        v = [0.0, 0.0, 0.0]
        for k, (i_plus, i_minus) in enumerate(_BASIS_PAIRS):
            c_plus = (2.0 * n[i_plus] / total / (1.0 + s[k])) if n[i_plus] > 0.0 else 0.0
            c_minus = (2.0 * n[i_minus] / total / (1.0 - s[k])) if n[i_minus] > 0.0 else 0.0
            a += (c_plus + c_minus) / 2.0
            v[k] = (c_plus - c_minus) / 2.0

        eps = dilution
        accepted = False
        for _ in range(60):
            ag = (1.0 - eps) + eps * a
            vg = [eps * x for x in v]
            sv = s[0] * vg[0] + s[1] * vg[1] + s[2] * vg[2]
            vv = vg[0] * vg[0] + vg[1] * vg[1] + vg[2] * vg[2]
            denom = ag * ag + 2.0 * ag * sv + vv
            coef_s = (ag * ag - vv) / denom
            coef_v = 2.0 * (ag + sv) / denom
            s_new = [coef_s * s[k] + coef_v * vg[k] for k in range(3)]
            loglik_new = _log_likelihood(n, w, s_new)
            if loglik_new >= loglik:
                accepted = True
                break
            eps /= 2.0
        if not accepted:
            # no dilution improves the likelihood: numerically converged
            delta = 0.0
            converged = True
            break

        delta = loglik_new - loglik
        s = s_new
        loglik = loglik_new
        if keep_trace:
            trace.append(loglik)
        if delta < loglik_tolerance:
            converged = True
            break

    return s, loglik, delta, iterations, converged, trace


def mle_reconstruct(
    counts,
    basis_weights=None,
    *,
    allow_empty_basis: bool = False,
    dilution: float = 1.0,
    loglik_tolerance: float = _DEFAULT_LOGLIK_TOL,
    max_iterations: int = _DEFAULT_MAX_ITERATIONS,
    with_diagnostics: bool = False,
):
    """Maximum-likelihood state estimate from six outcome totals.

    The outcome probabilities are modeled as p_m = w(basis of m) <m|rho|m>,
    with ``basis_weights`` the (Z, X, Y) duty-cycle weights (uniform by
    default).  The returned state is always physical, even when the plain
    Stokes inversion is not.  Zero counts need no smoothing: they simply
    contribute nothing to the likelihood.

    Raises :class:`InsufficientCountsError` when the total is below 6 or a
    basis pair is empty (unless ``allow_empty_basis``), and
    :class:`MLEConvergenceError`, carrying the best iterate, if the
    iteration cap is reached first.
    """
    n = [float(x) for x in counts]
    if len(n) != 6:
        raise ValueError(f"expected six outcome totals, got {len(n)}")
    if any(x < 0 or not math.isfinite(x) for x in n):
        raise ValueError("counts must be finite and nonnegative")
    w = _validate_weights(basis_weights if basis_weights is not None else _UNIFORM_WEIGHTS)
    # counts below the float-noise scale of the total carry no information
    # and would destabilize the count/probability ratios at the boundary
    tiny = sum(n) * 1e-15
    n = [x if x > tiny else 0.0 for x in n]
    total = sum(n)
    if total < _MIN_TOTAL_COUNTS:
        raise InsufficientCountsError(
            f"total counts {total:g} below the minimum {_MIN_TOTAL_COUNTS} for a six-outcome fit"
        )
    if dilution <= 0.0 or dilution > 1.0:
        raise ValueError(f"dilution must be in (0, 1], got {dilution!r}")

    s, loglik, delta, iterations, converged, trace = _mle_stokes(
        n,
        w,
        allow_empty=allow_empty_basis,
        dilution=dilution,
        loglik_tolerance=loglik_tolerance,
        max_iterations=max_iterations,
        keep_trace=with_diagnostics,
    )
    rho = density_from_stokes(*s)
    if not converged:
        raise MLEConvergenceError(
            f"likelihood not converged after {iterations} iterations "
            f"(last improvement {delta:.3e})",
            best=rho,
            likelihood_delta=delta,
        )
    if with_diagnostics:
        diag = MLEDiagnostics(
            iterations=iterations,
            converged=converged,
            log_likelihood=loglik,
            final_delta=delta,
            loglik_trace=tuple(trace),
        )
        return rho, diag
    return rho


def _reconstruct_rows(rows, labels, direction, basis_weights, allow_empty):
    states = []
    for label, row in zip(labels, rows):
        try:
            states.append(
                mle_reconstruct(row, basis_weights, allow_empty_basis=allow_empty)
            )
        except InsufficientCountsError as exc:
            where = ("input row" if direction is Direction.FORWARD else "outcome column")
            raise InsufficientCountsError(
                f"{exc} [{where} {label}]", basis=exc.basis, where=f"{where} {label}"
            ) from None
        except MLEConvergenceError as exc:
            where = ("input row" if direction is Direction.FORWARD else "outcome column")
            raise MLEConvergenceError(
                f"{exc} [{where} {label}]",
                best=exc.best,
                likelihood_delta=exc.likelihood_delta,
            ) from None
    return tuple(states)


def reconstruct_forward(cm: CountMatrix, basis_weights=None) -> ReconstructionSet:
    """Reconstruct the four received BB84 states from forward counts.

    Each row of the 4x6 matrix is an independent six-outcome tomography of
    the corresponding transmitted state after the channel.
    """
    if cm.direction is not Direction.FORWARD:
        raise ValueError(f"expected a forward count matrix, got {cm.direction.value}")
    states = _reconstruct_rows(
        cm.counts, BB84_LABELS, Direction.FORWARD, basis_weights, cm.background_subtracted
    )
    return ReconstructionSet(direction=Direction.FORWARD, states=states)


def reconstruct_reversed(cm: CountMatrix, basis_weights=None) -> ReconstructionSet:
    """Reconstruct, per receiver outcome, the state the channel maps onto it.

    Post-selecting one outcome column of the 6x4 matrix turns the six
    transmitted states into an overcomplete measurement of the effective
    pre-channel state: the count share of input n is proportional to
    <n|rho_eff|n> when each state is sent with equal probability.  The
    ``basis_weights`` here are the source-side duty cycles of the three
    preparation bases.
    """
    if cm.direction is not Direction.REVERSED:
        raise ValueError(f"expected a reversed count matrix, got {cm.direction.value}")
    columns = [cm.counts[:, j] for j in range(4)]
    states = _reconstruct_rows(
        columns, BB84_LABELS, Direction.REVERSED, basis_weights, cm.background_subtracted
    )
    return ReconstructionSet(direction=Direction.REVERSED, states=states)
