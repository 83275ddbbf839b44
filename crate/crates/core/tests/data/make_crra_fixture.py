# Writes crra_synthetic.csv: 120 annual observations shaped like consumption
# growth and stock/bond returns. Deterministic (fixed seed, stdlib only).
import math
import random

rng = random.Random(20090101)
rho = 0.25
rows = []
for _ in range(120):
    z1 = rng.gauss(0.0, 1.0)
    z2 = rho * z1 + math.sqrt(1.0 - rho * rho) * rng.gauss(0.0, 1.0)
    c_ratio = 1.0182 + 0.03 * z1
    r_f = 1.01 + 0.02 * rng.gauss(0.0, 1.0)
    r_m = r_f + 0.063 + 0.19 * z2
    rows.append((c_ratio, r_m, r_f))

with open("crra_synthetic.csv", "w") as f:
    f.write("c_ratio,r_m,r_f\n")
    for r in rows:
        f.write("%.6f,%.6f,%.6f\n" % r)
