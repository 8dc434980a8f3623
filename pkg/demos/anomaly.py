"""Metric variation of the torsion: M0, the finite-difference derivative, the anomaly.

Run with ``python3 demos/anomaly.py``.
"""
import math

from holotorsion import torus as tm

for cfg in (tm.TorusConfig.single(0.3 + 1.2j, 1.0, 0.2, 0.7),
            tm.TorusConfig((tm.TorusFactor(1j, 1.0, 0.5, 0.0),
                            tm.TorusFactor(0.5 + 1j, 1.3, 0.25, 0.5)), p=1)):
    print(f"complex dimension {cfg.n}, p = {cfg.p}")
    fit = tm.m0_extract(cfg)
    print("  Laurent coefficients of the variation trace:")
    for j, c in fit.coeffs.items():
        print(f"    t^{j:+d}: {c:+.6e}")
    # the fit samples exp(-t box) = exp(-t D^2 / 2): its t^-1 coefficient is twice this limit
    print(f"  t -> 0 limit of t tr_s[Q1 exp(-t D^2)]: {tm.a_minus1_chern_weil(cfg).real:.12f}")
    h = 1e-3
    up, dn = cfg.scaled(math.exp(h)), cfg.scaled(math.exp(-h))
    cut = lambda c: tm.spectral_gap_cuts(c, 1)[0]
    fd = (tm.zeta_torsion(up, cut(up)).torsion_log - tm.zeta_torsion(dn, cut(dn)).torsion_log) / (2 * h)
    print(f"  d/dl log torsion = {fd:+.3e},  -M0 = {-fit.m0:+.3e}")
    rep = tm.anomaly_check(cfg, 1.0, 2.0)
    print(f"  anomaly between scales 1 and 2: LHS = {rep.lhs:+.3e}, RHS = {rep.rhs}, "
          f"{'pass' if rep.passed else 'fail'}")
    print(f"  D^2 - 2 box on 20 modes: {tm.d_squared_check(cfg, 20):.1e}\n")
