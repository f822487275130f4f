"""Adaptive RK4 driver with step-doubling error control.

A trial step is compared against two half steps; the step is accepted
when the discrepancy stays below the tolerance.  Singularities,
crossings, and failed lookups raised by the right-hand side halve dt;
once dt falls below dt_min the run halts with the reason recorded.
Halting is reported as a value, never an exception.
"""

import numpy as np

from .errors import CrossingDetected, OutOfDomain, SingularDensity

RECOVERABLE = (SingularDensity, CrossingDetected, OutOfDomain)


def adaptive_rk4_drive(state, t0, options, rk4, verify, on_accept):
    """Drive ``state`` from t0 to options.max_time.

    rk4(state, dt) -> new state; verify(state) raises on a broken state;
    on_accept(state, t, dt, err) records diagnostics.  Returns
    (state, t, halt, rejected) where halt is None or a record dict.
    """
    t = t0
    dt = options.dt_init
    fixed_step = np.isinf(options.tolerance)
    rejected = 0
    steps = 0
    halt = None

    while t < options.max_time - 1e-14:
        if steps >= options.max_steps:
            halt = {"reason": "StepBudget", "time": t, "detail": "max_steps reached"}
            break
        steps += 1
        dt_try = min(dt, options.max_time - t)
        try:
            if fixed_step:
                new_state = rk4(state, dt_try)
                err = 0.0
            else:
                big = rk4(state, dt_try)
                mid = rk4(state, 0.5 * dt_try)
                new_state = rk4(mid, 0.5 * dt_try)
                err = max(
                    float(np.max(np.abs(b - s))) for b, s in zip(big, new_state)
                )
            verify(new_state)
        except RECOVERABLE as exc:
            rejected += 1
            dt = 0.5 * dt_try
            if dt < options.dt_min:
                halt = {"reason": type(exc).__name__, "time": t, "detail": str(exc)}
                break
            continue
        if not fixed_step and err > options.tolerance:
            rejected += 1
            dt = max(0.25 * dt_try, 0.9 * dt_try * (options.tolerance / err) ** 0.2)
            if dt < options.dt_min:
                halt = {
                    "reason": "ErrorControl",
                    "time": t,
                    "detail": f"step error {err:.3g} needs dt below dt_min",
                }
                break
            continue

        state = new_state
        t += dt_try
        on_accept(state, t, dt_try, err)
        if not fixed_step:
            if err > 0.0:
                dt = min(2.0 * dt_try, 0.9 * dt_try * (options.tolerance / err) ** 0.2)
            else:
                dt = 2.0 * dt_try

    return state, t, halt, rejected
