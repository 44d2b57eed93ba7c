"""Build one boundary environment, sample polymer paths and compare with the exact exit law.

Run:  python demos/quenched_paths.py [outdir]
"""
import sys
from pathlib import Path

import numpy as np

from lgpolymer.lattice import forward_logZ, reverse_logW
from lgpolymer.polymer import (
    exit_distribution,
    last_step_probability,
    sample_path,
    sample_paths,
    write_distribution_csv,
    write_path_csv,
)
from lgpolymer.randenv import RngStream, build_env
from lgpolymer.specfun import ModelParams, char_rectangle, mean_logZ

out = Path(sys.argv[1] if len(sys.argv) > 1 else ".")
params = ModelParams(1.0, 2.0)
cs = char_rectangle(64, params)
env = build_env(cs.m, cs.n, params, RngStream(7))
lat = forward_logZ(env)
rev = reverse_logW(env)
print(f"rectangle {cs.m}x{cs.n}: log Z = {lat.log_partition:.4f}, E log Z = {mean_logZ(cs.m, cs.n, params):.4f}")

exd = exit_distribution(env, lat, rev)
print(f"quenched P(exit along x) = {exd.prob_x:.4f}, P(last step east) = {last_step_probability(lat):.4f}")

# empirical exit lengths from 20000 sampled paths
steps = sample_paths(lat, RngStream(8), 20000)
first = steps[:, 0]
changes = steps != first[:, None]
run = np.where(changes.any(axis=1), changes.argmax(axis=1), steps.shape[1])
emp = np.bincount(run[first == 0], minlength=cs.m + 1)[1:] / len(steps)
print(f"total variation between sampled and exact x-exit law: {0.5 * np.abs(emp - exd.px).sum():.4f}")

path = sample_path(lat, env, RngStream(9))
write_path_csv(path, out / "path.csv")
write_distribution_csv(exd.px, out / "exit_x.csv", first_index=1)
print(f"wrote {out / 'path.csv'} and {out / 'exit_x.csv'}")
