"""Asymptotic critical values at d = 3 by inversion and from the chi-square law."""
from cvmindep.spectral import alpha_double_prime, alpha_prime, critical_value, qa_quantile

d, alpha = 3, 0.05
print("L  ", critical_value("L", d, alpha, "inversion").value)
print("B  ", critical_value("B", d, alpha, "inversion").value)
print("T  ", critical_value("T", d, alpha, "chi2").value)
print("q2 ", qa_quantile(1 - alpha_prime(alpha, d), 2))
print("q3 ", qa_quantile(1 - alpha_prime(alpha, d), 3))
print("q2'' ", qa_quantile(1 - alpha_double_prime(alpha, d), 2))
