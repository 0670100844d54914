# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Duhamel convolutions and the Volterra series
#
# Kernels are sampled on a square grid and a uniform time ladder
# `t_j = j dt`.  The space-time convolution
#
#     (f * g)(t, x, y) = int_0^t int f(t - s, x, z) g(s, z, y) dz ds
#
# then reduces to weighted matrix products.  The grids here are small so
# the notebook runs in well under a minute.

# %%
import numpy as np

from magheat import GridSpec, ParametrixEvaluator, constant_field, free_kernel, mehler_kernel
from magheat.volterra import convolve, degree_estimate, sample_kernel, uniform_ladder, volterra_partial_sum

# %% [markdown]
# ## The free semigroup
#
# `K_0 * K_0 = t K_0` exactly; on the diagonal `t K_0 = 1 / 4 pi`, so the
# measured degree is 2.

# %%
g = GridSpec(L=5.0, n=64)
t = uniform_ladder(0.4, 16)
y = np.zeros(2)
free = lambda s, X, Y: free_kernel(s, X, Y)  # noqa: E731
rows = sample_kernel(free, g, t, [y], None)
cols = sample_kernel(free, g, t, None, [y])
C = convolve(rows, cols)
for j in (3, 7, 15):
    print(f"t={t[j]:.3f}  (K0*K0)(t,0,0) = {C.values[j, 0, 0].real:.10f}   1/4pi = {1 / (4 * np.pi):.10f}")
print("degree", degree_estimate(C, y, y))

# %% [markdown]
# ## Partial sums
#
# `k_N - k_N * R_N + k_N * R_N * R_N - ...` converges to the true kernel.
# For a constant field we can compare with Mehler directly.

# %%
ev = ParametrixEvaluator(constant_field(1.0), N=0)
g = GridSpec(L=4.0, n=64)
t = uniform_ladder(0.2, 12)
near = np.nonzero(np.linalg.norm(g.points(), axis=-1) <= 0.75)[0][::5]
res = volterra_partial_sum(ev, 1, g, t, near, [y])
K = mehler_kernel(1.0, t[-1], g.points()[near], y)
k0 = ev.parametrix_eval(t[-1], g.points()[near], y)
print("sup |k_0 - K|         ", np.max(np.abs(k0 - K)))
print("sup |k_0 - k_0*R - K| ", np.max(np.abs(res.kernel.values[-1, :, 0] - K)))

# %% [markdown]
# The alternating terms shrink quickly: on a coarse grid we can afford the
# second-order term as well.

# %%
g16 = GridSpec(L=2.0, n=16)
t10 = uniform_ladder(0.1, 10)
res2 = volterra_partial_sum(ev, 2, g16, t10, [[0.25, 0.0]], [y])
print("term sup-norms", [f"{term.sup_norm(-1):.2e}" for term in res2.terms])
