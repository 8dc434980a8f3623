"""Closed-form oscillator heat kernel against its transport recursion.

Run with ``python3 demos/mehler_kernel.py``.
"""
import numpy as np

from holotorsion.mehler import MehlerParams, closed_form_taylor, formal_coeffs, heat_residual

rng = np.random.default_rng(0)
B = rng.normal(size=(2, 2))
L = rng.normal(size=(2, 2)) * 0.5
p = MehlerParams.numeric(B - B.T, L)

rec, ref = formal_coeffs(p, 4), closed_form_taylor(p, 4)
x = np.array([0.4, -0.3])
print("k   |Phi_k(x)| transport   |difference|")
for k in range(5):
    print(f"{k}   {np.max(np.abs(rec.phi(k, x))):.6e}         "
          f"{np.max(np.abs(rec.phi(k, x) - ref.phi(k, x))):.1e}")

print("\nh        residual of (d_u + H) p_u   ratio")
prev = None
for h in (0.04, 0.02, 0.01, 0.005):
    r = heat_residual(0.8, x, p, h)
    print(f"{h:<8} {r:.6e}                 {'' if prev is None else f'{prev / r:.4f}'}")
    prev = r
