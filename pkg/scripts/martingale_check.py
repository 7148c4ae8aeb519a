"""Weighted l^q boundedness diagnostic for GMC d=1, gamma=0.5, across tau.

    python3 scripts/martingale_check.py [--samples 48] [--m-max 10]

Below the Fourier-decay bound, and with q large enough that the weighted
l^q sum converges, the estimates of E||M_m||^p should stay flat in m; above
the bound they are expected to grow.
"""
import argparse

from mchaos.gaussian import GmcConfig, sample_gmc
from mchaos.spectral import martingale_diagnostic
from mchaos.theory import gmc_bound


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=48)
    ap.add_argument("--m-max", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    gamma, level = 0.5, args.m_max + 2
    for kernel, alpha0, taus in (("exact-log", 0.5, (0.25, 0.5)), ("star-scale", 1.0, (0.5, 1.0, 1.5))):
        lf = gmc_bound(gamma, 1, alpha0)

        def draw(m, sid, kernel=kernel):
            return sample_gmc(GmcConfig(gamma, m=m, grid_level=level, kernel=kernel), args.seed, sid)

        for tau in taus:
            qmin = max(2.0, 2 / (2 * alpha0 - tau))
            # the l^q sum of |n|^{(tau - D) q / 2} converges only for q (D - tau) / 2 > 1
            q = max(qmin + 1.0, 4.0 / (lf - tau)) if tau < lf else qmin + 2.0
            rep = martingale_diagnostic(draw, tau, 1.5, q, range(3, args.m_max + 1), args.samples,
                                        alpha0=alpha0, lf=lf)
            means = " ".join(f"{r['mean']:.3g}" for r in rep["rows"])
            print(f"{kernel:10s} tau={tau:<5} q={q:<5.3g} L_F={lf:.3f}  {rep['verdict']:24s} [{means}]")


if __name__ == "__main__":
    main()
