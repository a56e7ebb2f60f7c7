"""One-off calibration for acceptance criteria 3/4/5 (printed, not saved)."""

import time
import warnings

import numpy as np

from zygibbs.dynamics import FlowConfig, State, evolve
from zygibbs.gibbs import GibbsParams, scan_gamma
from zygibbs.invariance import counterexample_probe, default_observables, test_invariance
from zygibbs.randomfields import GaussianSampler
from zygibbs.spectral import SpectralField


def smooth_state(seed=11, n=16, gamma=0.5, p=2.0):
    s = GaussianSampler(seed)
    u = s.schrodinger(n)
    w, v = s.wave_pair(n, gamma)
    k = np.arange(-n, n + 1)
    br = (1.0 + k[:, None] ** 2 + k[None, :] ** 2) ** (-p / 2)
    return State(SpectralField(n, u.coeffs * br),
                 SpectralField(n, w.coeffs * br, hermitian=True),
                 SpectralField(n, v.coeffs * br, hermitian=True), gamma)


def dist(a, b):
    return np.sqrt(sum(np.sum(np.abs(x.coeffs - y.coeffs) ** 2)
                       for x, y in ((a.u, b.u), (a.w, b.w), (a.v, b.v))))


print("=== criterion 3 ===", flush=True)
st = smooth_state()
t0 = time.time()
traj = evolve(st, 1.0, FlowConfig(1e-3), record_every=100)
md = np.max(np.abs(traj.mass - traj.mass[0])) / abs(traj.mass[0])
ed = np.max(np.abs(traj.energy_renorm - traj.energy_renorm[0])) / abs(traj.energy_renorm[0])
print(f"mass drift {md:.3e}  energy drift {ed:.3e}  ({time.time()-t0:.1f}s)", flush=True)
finals = []
for dt in (1e-3, 5e-4, 2.5e-4, 1.25e-4):
    t0 = time.time()
    tr = evolve(st, 1.0, FlowConfig(dt), record_every=10 ** 9)
    finals.append(tr.final)
    print(f"dt={dt:g} done ({time.time()-t0:.1f}s)", flush=True)
errs = [dist(finals[i], finals[i + 1]) for i in range(3)]
print("errs", errs, "ratios", errs[0] / errs[1], errs[1] / errs[2], flush=True)

print("=== criterion 4 ===", flush=True)
params = GibbsParams(8, 0.5, 10.0)
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    t0 = time.time()
    rep = test_invariance(params, 0.5, FlowConfig(1e-2), default_observables(),
                          20_000, GaussianSampler(0))
    print(f"positive: worst |z| {rep.worst_abs_z:.3f} passed={rep.passed} "
          f"ess={rep.ess:.0f} ({time.time()-t0:.1f}s)", flush=True)
    for s in rep.stats:
        print(f"  {s.name} z={s.z_score:+.3f}", flush=True)
    t0 = time.time()
    neg = counterexample_probe(params, 1.0, FlowConfig(2.5e-2), 100_000,
                               GaussianSampler(0))
    print(f"negative: worst |z| {neg.worst_abs_z:.3f} passed={neg.passed} "
          f"({time.time()-t0:.1f}s)", flush=True)
    for s in neg.stats:
        print(f"  {s.name} z={s.z_score:+.3f}", flush=True)

print("=== criterion 5 ===", flush=True)
t0 = time.time()
rows = scan_gamma([8, 16, 32, 64], [0.5, 1.0], params, 100_000, GaussianSampler(0))
print(f"scan done ({time.time()-t0:.1f}s)", flush=True)
for r in rows:
    print(f"N={r['N']} gamma={r['gamma']}: p2={r['p2_moment']:.6g} "
          f"maxlogw={r['max_logw']:.4f} ess={r['ESS']:.1f}", flush=True)
p2 = [r["p2_moment"] for r in rows if r["gamma"] == 0.5]
top = [r["max_logw"] for r in rows if r["gamma"] == 1.0]
print("p2 spread max/min =", max(p2) / min(p2), flush=True)
print("maxlogw growth =", top[-1] - top[0], "monotone =",
      all(b > a for a, b in zip(top, top[1:])), flush=True)
