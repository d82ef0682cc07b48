"""Implicit heat flow against its Fourier oracle.

The simplest instance of the parabolic solver: ``u_t = u_xx`` on ``[0, 1]``
with homogeneous Dirichlet data and ``u0 = sin(pi x)``.  The exact solution
decays as ``exp(-pi^2 t)``.  Backward Euler is first order in time, so the
step is tied to ``h^2``; halving the grid spacing then cuts the error by
about four.

    python3 demos/heat_oracle.py
"""
import numpy as np

from rdtflow import build


def sup_error(sizes, t_end=0.01):
    sc = build("heat_dirichlet", dict(sizes=sizes))
    dt = t_end / round(t_end / (0.25 * sc.grid.h ** 2))
    trace = sc.solve(sc.config(dt, t_end))
    return max(np.abs(u - sc.reference_field(t)).max()
               for u, t in zip(trace.fields, trace.times))


if __name__ == "__main__":
    prev = None
    for N in (17, 33, 65, 129):
        err = sup_error((N,))
        ratio = "" if prev is None else f"   ratio {prev / err:5.2f}"
        print(f"N = {N:4d}   sup error {err:.3e}{ratio}")
        prev = err
