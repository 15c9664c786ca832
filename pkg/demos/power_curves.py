"""Local power of the analytic statistics against Frank alternatives."""
from cvmindep.power import power_curve

for stat in ("L", "W", "M", "L2", "M2"):
    curve = power_curve(stat, "frank", d=3, delta_max=20.0, points=6)
    print(stat, " ".join(f"{b:.3f}" for _, b, _ in curve.rows()))
