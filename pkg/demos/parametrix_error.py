"""Heat parametrix on a flat torus: image sums and the error order.

Run with ``python3 demos/parametrix_error.py``.
"""
import math

import numpy as np

from holotorsion import torus as tm
from holotorsion.parametrix import (CutoffSpec, ModelGeometry, ParamConnection, exact_flat_trace,
                                    sup_errors)

cfg = tm.TorusConfig.single(0.3 + 1.1j, 1.4, 0.3, 0.7)
print("t      image sum            eigenvalue sum       |difference|")
for t in (0.1, 0.5, 1.0, 2.0):
    a = exact_flat_trace(cfg.geometry(), t, (0.3, 0.7))
    b = tm.heat_trace(cfg, 2 * t, "eigen").real
    print(f"{t:<6} {a:.15f}  {b:.15f}  {abs(a - b):.1e}")

geom = ModelGeometry.square_torus(2 * math.pi, 2)
conn = ParamConnection.constant(2, 1, rho=[[1.0]])
s = np.geomspace(1e-3, 2e-2, 6)
for N in (2, 3):
    errs = sup_errors(conn, geom, N, s, cutoff=CutoffSpec(3.0))
    slope = np.polyfit(np.log(s), np.log(errs), 1)[0]
    print(f"\nN = {N}: sup error against s, fitted order {slope:.4f} (bound {N - 1 + 0.8})")
    for si, e in zip(s, errs):
        print(f"  s = {si:.2e}   {e:.3e}")
