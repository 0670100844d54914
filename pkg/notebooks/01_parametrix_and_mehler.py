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
# # Parametrix coefficients against the Mehler kernel
#
# For a constant magnetic field `B` in the plane the heat kernel of
# `H = (-i grad - A)^2` is known in closed form (Mehler).  We build the
# parametrix `k_N` from the transport recursion and look at three things:
#
# 1. the diagonal coefficients `a_k(x) = u_k(x, x)`;
# 2. how fast `k_0` approaches Mehler off the diagonal;
# 3. the residual `R_N = (d/dt + H) k_N` for a non-trivial potential.

# %%
import numpy as np

from magheat import (
    FieldConfig,
    ParametrixEvaluator,
    constant_field,
    fit_power_law,
    mehler_kernel,
    symmetric_gauge,
)

np.set_printoptions(precision=6, suppress=True)

# %% [markdown]
# ## Diagonal coefficients
#
# Expanding `Bt / sinh(Bt) = 1 - (Bt)^2/6 + ...` gives `a_1 = 0` and
# `a_2 = -B^2/6` at every point.

# %%
ev = ParametrixEvaluator(constant_field(1.0), N=2)
pts = np.random.default_rng(0).uniform(-1, 1, size=(4, 2))
for x in pts:
    a = [complex(ev.heat_invariant(k, x)) for k in range(4)]
    print(x, " ".join(f"{v.real: .3e}" for v in a))

# %% [markdown]
# ## Off-diagonal order
#
# With the Gaussian and the `(4 pi t)^-1` prefactor scaled out, the error
# of `k_0` is `O(t^2)`: `u_0` and `u_1` match Mehler's bracketed series.

# %%
t = 0.1 * 0.5 ** np.arange(7)
x, y = np.array([0.5, 0.0]), np.zeros(2)
k0 = ParametrixEvaluator(constant_field(1.0), N=0)
err = np.abs(k0.parametrix_eval(t, x, y) - mehler_kernel(1.0, t, x, y))
scaled = err * 4 * np.pi * t * np.exp(np.sum((x - y) ** 2) / (4 * t))
for tj, e in zip(t, scaled):
    print(f"t={tj:.5f}  scaled error {e:.3e}")
print("fitted slope", round(fit_power_law(t, scaled).slope, 4))

# %% [markdown]
# ## Residual order
#
# For `V = x1^2 + sin x2` in the symmetric gauge the residual on the
# diagonal scales like `t^(N + 1 - d/2)`.

# %%
cfg = FieldConfig(d=2, V="(+ (^ x1 2) (sin x2))", A=symmetric_gauge(1.0))
for N in (0, 1, 2):
    ev = ParametrixEvaluator(cfg, N=N)
    x = np.array([0.3, -0.2])
    fit = fit_power_law(t, np.abs(ev.residual(t, x, x)))
    print(f"N={N}: slope {fit.slope:.3f} (expected {N + 1 - 1})")

# %% [markdown]
# The heat operator applied to `k_N` (analytic time derivative, jet-based
# `H`) reproduces the residual to round-off:

# %%
ev = ParametrixEvaluator(cfg, N=1)
x, y = np.array([0.2, 0.1]), np.array([-0.1, 0.3])
tt = np.array([0.02, 0.05])
lhs = ev.time_derivative(tt, x, y) + ev.hamiltonian_parametrix(tt, x, y)
print(np.abs(lhs - ev.residual(tt, x, y)))
