"""Reverse a boundary environment through its dual weights and check the identities.

Run:  python demos/reversal.py
"""
import numpy as np

from lgpolymer.experiments import reversal_residuals
from lgpolymer.lattice import forward_logZ
from lgpolymer.polymer import dual_exit_at_least, last_run_at_least
from lgpolymer.randenv import RngStream, build_env
from lgpolymer.specfun import ModelParams

params = ModelParams(0.8, 2.0)
env = build_env(20, 15, params, RngStream(3))
for key, val in reversal_residuals(env).items():
    print(f"{key:10s} residual {val:.2e}")

# the dual chain's initial east run and the quenched final east run agree in law
ks = (1, 2, 5)
dual, last = np.zeros(len(ks)), np.zeros(len(ks))
reps = 300
for r in range(reps):
    e = build_env(20, 15, params, RngStream(4, r))
    lat = forward_logZ(e)
    dual += [dual_exit_at_least(lat, k) for k in ks]
    last += [last_run_at_least(e, lat, k) for k in ks]
for k, a, b in zip(ks, dual / reps, last / reps):
    print(f"k={k}: mean Q*(first {k} steps east) = {a:.4f}   mean Q(last {k} steps east) = {b:.4f}")
