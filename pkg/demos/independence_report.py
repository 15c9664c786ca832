"""Test a simulated Clayton sample for independence and print the dependogram."""
from cvmindep.copulas import sample
from cvmindep.statistics import TestConfig, run_test

data = sample("clayton", theta=0.5, n=300, d=3, seed=1)
report = run_test(data, TestConfig(statistics=("B", "L", "W", "M", "T"), seed=1))

for s in report.statistics:
    print(f"{s.name:3s} value={s.value:.5f} critical={s.critical:.5f} ({s.critical_source}) reject={s.reject}")
print()
for row in report.dependogram:
    print(row)
