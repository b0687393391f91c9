"""Wave-plate compensation: cost function and simplex optimization.

The compensation stack V(theta) = Q(theta3) H(theta2) Q(theta1) is chosen
to maximize the summed fidelity between the reconstructed states and the
nominal BB84 targets.  In the forward orientation the plates sit after the
channel and the predicted post-compensation state is V rho V+; in the
reversed orientation they sit before the channel, the reconstructions are
the required *inputs*, and the prediction for prepared state |psi> is
V|psi> compared against the reconstruction, i.e. the adjoint conjugation.
Either way the optimum satisfies V ~ U+ up to phase, so a single residual
error metric applies to both orientations.

The optimizer is plain Nelder-Mead with random restarts: the landscape in
the three plate angles has symmetric local minima, and multi-start is
cheap at 2x2 scale.  Angle parameters are unconstrained during the search
and reduced modulo pi only at readout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .polarization import (
    WavePlateAngles,
    ChannelUnitary,
    PureState,
    bb84_states,
    compensation_unitary,
)
from .simplex import nelder_mead
from .tomography import Direction, ReconstructionSet

#: initial simplex edge (radians) for every restart
INITIAL_SIMPLEX_STEP = 0.2
#: cost ties closer than this are broken by plate travel
_TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class CompensationOptions:
    """Optimizer knobs.

    ``motion_penalty_weight`` adds lambda * sum_i |theta_i - previous_i|
    (shortest path modulo pi) to the cost, discouraging long plate trips
    when compensation runs continuously against a drifting channel.
    """

    restarts: int = 10
    cost_tolerance: float = 1e-9
    max_evaluations: int = 5000
    motion_penalty_weight: float = 0.0
    previous_angles: WavePlateAngles | None = None

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")
        if self.cost_tolerance <= 0.0:
            raise ValueError(f"cost_tolerance must be positive, got {self.cost_tolerance}")
        if self.max_evaluations < 1:
            raise ValueError(f"max_evaluations must be >= 1, got {self.max_evaluations}")
        if self.motion_penalty_weight < 0.0:
            raise ValueError(
                f"motion penalty weight must be >= 0, got {self.motion_penalty_weight}"
            )
        if self.motion_penalty_weight > 0.0 and self.previous_angles is None:
            raise ValueError("previous_angles is required when the motion penalty is active")


@dataclass(frozen=True)
class CompensationResult:
    """Optimized plate angles plus cost and convergence bookkeeping."""

    angles: WavePlateAngles
    cost: float
    predicted_qber: float
    evaluations_used: int
    converged: bool


def _rho_params(recon: ReconstructionSet):
    params = []
    for state in recon.states:
        m = state.entries
        params.append((float(m[0, 0].real), complex(m[0, 1]), float(m[1, 1].real)))
    return params


def _ket_params(targets):
    targets = tuple(targets)
    if len(targets) != 4:
        raise ValueError(f"expected four target states, got {len(targets)}")
    return [(complex(t.amplitudes[0]), complex(t.amplitudes[1])) for t in targets]


def _cost_kernel(t1, t2, t3, rho_params, ket_params, reversed_mode):
    """-sum_n <psi_n| V rho_n V+ |psi_n>, as scalar arithmetic.

    This sits inside the optimizer's innermost loop; it avoids ndarray
    temporaries on purpose.
    """
    c1 = math.cos(t1)
    s1 = math.sin(t1)
    c3 = math.cos(t3)
    s3 = math.sin(t3)
    # quarter plates: [[c^2 + i s^2, cs(1-i)], [cs(1-i), s^2 + i c^2]]
    q1_00 = complex(c1 * c1, s1 * s1)
    q1_01 = complex(c1 * s1, -c1 * s1)
    q1_11 = complex(s1 * s1, c1 * c1)
    q3_00 = complex(c3 * c3, s3 * s3)
    q3_01 = complex(c3 * s3, -c3 * s3)
    q3_11 = complex(s3 * s3, c3 * c3)
    # half plate: [[cos 2t, sin 2t], [sin 2t, -cos 2t]]
    ch = math.cos(2.0 * t2)
    sh = math.sin(2.0 * t2)
    # M = Q(t3) @ H(t2); V = M @ Q(t1)
    m00 = q3_00 * ch + q3_01 * sh
    m01 = q3_00 * sh - q3_01 * ch
    m10 = q3_01 * ch + q3_11 * sh
    m11 = q3_01 * sh - q3_11 * ch
    v00 = m00 * q1_00 + m01 * q1_01
    v01 = m00 * q1_01 + m01 * q1_11
    v10 = m10 * q1_00 + m11 * q1_01
    v11 = m10 * q1_01 + m11 * q1_11

    total = 0.0
    for (a0, a1), (r00, r01, r11) in zip(ket_params, rho_params):
        if reversed_mode:
            w0 = v00 * a0 + v01 * a1
            w1 = v10 * a0 + v11 * a1
        else:
            w0 = v00.conjugate() * a0 + v10.conjugate() * a1
            w1 = v01.conjugate() * a0 + v11.conjugate() * a1
        total += (
            r00 * (w0.real * w0.real + w0.imag * w0.imag)
            + r11 * (w1.real * w1.real + w1.imag * w1.imag)
            + 2.0 * (w0.conjugate() * r01 * w1).real
        )
    return -total


def wrapped_angle_distance(a: float, b: float) -> float:
    """Shortest plate travel between two rotations, modulo pi."""
    d = math.fmod(abs(a - b), math.pi)
    return min(d, math.pi - d)


def _travel(angles, reference) -> float:
    return sum(wrapped_angle_distance(a, b) for a, b in zip(angles, reference))


def cost(
    angles: WavePlateAngles,
    recon: ReconstructionSet,
    targets=None,
    opts: CompensationOptions | None = None,
) -> float:
    """Compensation cost at the given plate angles.

    Negative summed fidelity between the compensated reconstructions and
    the targets (index order H, V, D, A), plus the motion penalty when
    enabled.
    """
    opts = opts if opts is not None else CompensationOptions()
    rho_p = _rho_params(recon)
    ket_p = _ket_params(targets if targets is not None else bb84_states())
    value = _cost_kernel(
        angles.theta1,
        angles.theta2,
        angles.theta3,
        rho_p,
        ket_p,
        recon.direction is Direction.REVERSED,
    )
    if opts.motion_penalty_weight > 0.0:
        value += opts.motion_penalty_weight * _travel(
            angles.as_tuple(), opts.previous_angles.as_tuple()
        )
    return value


def optimize(
    recon: ReconstructionSet,
    targets=None,
    opts: CompensationOptions | None = None,
    rng: np.random.Generator | None = None,
) -> CompensationResult:
    """Best-of-restarts Nelder-Mead minimization of the compensation cost.

    The first restart starts at ``previous_angles`` (zeros when absent);
    the rest start at uniform random angle triples drawn from ``rng``.
    Non-convergence within the evaluation budget is reported through the
    ``converged`` flag rather than an error, because the best iterate is
    still actionable.  Cost ties between restarts are broken by the least
    total plate travel from the reference angles.
    """
    opts = opts if opts is not None else CompensationOptions()
    rng = rng if rng is not None else np.random.default_rng(0)
    rho_p = _rho_params(recon)
    ket_p = _ket_params(targets if targets is not None else bb84_states())
    reversed_mode = recon.direction is Direction.REVERSED

    lam = opts.motion_penalty_weight
    reference = (
        opts.previous_angles.as_tuple() if opts.previous_angles is not None else (0.0, 0.0, 0.0)
    )

    if lam > 0.0:

        def objective(x):
            return _cost_kernel(x[0], x[1], x[2], rho_p, ket_p, reversed_mode) + lam * _travel(
                x, reference
            )

    else:

        def objective(x):
            return _cost_kernel(x[0], x[1], x[2], rho_p, ket_p, reversed_mode)

    starts = [reference]
    for _ in range(opts.restarts - 1):
        starts.append(tuple(rng.uniform(0.0, math.pi, size=3)))

    best = None
    best_travel = math.inf
    total_evals = 0
    for start in starts:
        res = nelder_mead(
            objective,
            start,
            initial_step=INITIAL_SIMPLEX_STEP,
            cost_tolerance=opts.cost_tolerance,
            max_evaluations=opts.max_evaluations,
        )
        total_evals += res.evaluations
        travel = _travel(res.x, reference)
        if (
            best is None
            or res.fun < best.fun - _TIE_TOLERANCE
            or (abs(res.fun - best.fun) <= _TIE_TOLERANCE and travel < best_travel)
        ):
            best = res
            best_travel = travel

    angles = WavePlateAngles(*best.x)
    raw = angles.as_tuple()
    cost_free = _cost_kernel(raw[0], raw[1], raw[2], rho_p, ket_p, reversed_mode)
    penalized = cost_free + (lam * _travel(raw, reference) if lam > 0.0 else 0.0)
    predicted = 1.0 + cost_free / 4.0
    if predicted < -1e-9 or predicted > 1.0 + 1e-9:
        raise ValueError(f"predicted QBER {predicted!r} escaped [0, 1]")
    predicted = min(1.0, max(0.0, predicted))
    return CompensationResult(
        angles=angles,
        cost=penalized,
        predicted_qber=predicted,
        evaluations_used=total_evals,
        converged=best.converged,
    )


def residual_qber(true_channel: ChannelUnitary, angles: WavePlateAngles) -> float:
    """Error ratio of ideal signal states after channel plus compensation.

    1 - (1/4) sum_n |<psi_n| V(theta) U |psi_n>|^2 over the BB84 states;
    zero exactly when V undoes U up to a phase, independent of any source
    depolarization.
    """
    v = compensation_unitary(angles).entries
    combined = v @ true_channel.entries
    total = 0.0
    for state in bb84_states():
        amp = state.amplitudes
        total += abs(np.vdot(amp, combined @ amp)) ** 2
    return 1.0 - total / 4.0
