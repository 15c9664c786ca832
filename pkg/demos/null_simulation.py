"""Finite-sample null distribution of the subset statistics against the limit law."""
import numpy as np

from cvmindep.spectral import qa_quantile
from cvmindep.statistics import simulate_null

sim = simulate_null(n=100, d=3, reps=2000, seed=4)
for k in (2, 3):
    cols = [i for i, A in enumerate(sim.subsets) if A.cardinality == k]
    q = np.quantile(sim.subset_values[:, cols], 0.95)
    print(f"|A|={k}: simulated 0.95 quantile {q:.5f}, limit {qa_quantile(0.95, k):.5f}")
