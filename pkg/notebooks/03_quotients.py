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
# # Half-plane, cylinder and torus
#
# Kernels on quotients of the plane come from the whole-plane kernel by
# the method of images.  The fields must be compatible with the symmetry:
# reflection-symmetric for the half-plane, lattice-periodic for cylinder
# and torus (and on the torus the flux through a cell must be a multiple
# of `2 pi`).

# %%
import math

import numpy as np

from magheat import FieldConfig, ParametrixEvaluator, QuotientSpec, torus_config
from magheat.quotients import (
    check_periodicity,
    check_reflection_symmetry,
    half_plane_kernel,
    image_sum_kernel,
    quotient_diagonal_expansion,
)

# %% [markdown]
# ## Half-plane
#
# `V = x2^2 + cos x1`, `A = (x2^2, x1 x2)` is symmetric under
# `(x1, x2) -> (x1, -x2)`.

# %%
cfg = FieldConfig(d=2, V="(+ (^ x2 2) (cos x1))", A=("(^ x2 2)", "(* x1 x2)"))
print(check_reflection_symmetry(cfg).max_deviation)
ev = ParametrixEvaluator(cfg, N=1)
y = np.array([0.1, 0.4])
for x1 in (-0.5, 0.0, 0.5):
    print("Dirichlet on the boundary:", half_plane_kernel(ev, "dirichlet", 0.05, [x1, 0.0], y))

# %% [markdown]
# Away from the boundary the image term is invisible at small times:

# %%
x = np.array([0.3, 1.0])
spec = QuotientSpec("half_plane", bc="dirichlet")
for t in (0.1, 0.05, 0.02):
    de = quotient_diagonal_expansion(ev, spec, t, x)
    corr = sum(c * t ** k for k, c in enumerate(de.corrections))
    print(f"t={t}: image correction {abs(corr):.2e}   e^(-x2^2/2t) = {math.exp(-1 / (2 * t)):.2e}")

# %% [markdown]
# ## Torus
#
# Without a background field the torus image sum is periodic in `y`.
# A background flux `B0 = pi` is not quantized and is refused.

# %%
tor = torus_config(0, V="(cos (* 2 pi x1))", A_per=("(sin (* 2 pi x2))", "(cos (* 2 pi x1))"))
spec = QuotientSpec("torus")
evt = ParametrixEvaluator(tor, N=1)
x, y = np.array([0.1, 0.2]), np.array([0.3, 0.4])
a = image_sum_kernel(evt, spec, 0.05, x, y)
b = image_sum_kernel(evt, spec, 0.05, x, y + np.array([1.0, 0.0]))
print(a.value, b.value, a.n_images, f"tail bound {a.tail_bound:.1e}")
print("flux check B0=pi:", check_periodicity(torus_config(B0=math.pi), spec).to_dict())
