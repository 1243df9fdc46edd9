"""Operator identities on a 2D periodic box.

Checks the skew-symmetry of the convective form, the Taylor-Green null
case, the damping energy identity and the sandwich ordering on random
divergence-free fields.

Run:  python demos/operator_identities.py
"""

import numpy as np

from cbfed import (
    TorusConfig, convective, damping, inner, monotonicity_terms, norm, random_field, sandwich_check, taylor_green,
    trilinear,
)


def main():
    cfg = TorusConfig(2, 2 * np.pi, 32)
    rng = np.random.default_rng(0)
    u, v = random_field(cfg, rng), random_field(cfg, rng)

    print(f"b(u, v, v)          = {trilinear(u, v, v):+.2e}")
    print(f"<B(u), u>           = {inner(convective(u), u):+.2e}")

    tg = taylor_green(cfg)
    print(f"||B(TG)|| / ||TG||^2 = {float(norm(convective(tg))) / float(norm(tg)) ** 2:.2e}")

    for r in (2, 3, 5):
        lhs = inner(damping(u, r), u)
        rhs = float(norm(u, "Lp", p=r + 1)) ** (r + 1)
        mono, mid, low = monotonicity_terms(u, v, r)
        s = sandwich_check(u, r)
        print(f"r={r}: <C(u),u>/||u||^{r + 1} - 1 = {lhs / rhs - 1:+.1e}; "
              f"monotonicity {mono:.3e} >= {mid:.3e} >= {low:.3e}; "
              f"sandwich {s.I0:.3e} <= {s.I1:.3e} <= {s.I2:.3e}")


if __name__ == "__main__":
    main()
