"""Local efficiencies relative to the best statistic, per family."""
from cvmindep.efficiency import are_table

for row in are_table():
    cells = " ".join(f"{k}={v:6.2f}" for k, v in sorted(row.percent.items()))
    print(f"{row.family:9s} best={row.best:3s} {cells}")
