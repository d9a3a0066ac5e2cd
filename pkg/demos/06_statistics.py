"""Wilcoxon signed-rank p-values and the validation windows used by the experiments."""
import numpy as np

from evcoord.evaluation import increasing_windows, rolling_windows, wilcoxon_signed_rank

# all six differences positive: p = 2 / 2^6
print(wilcoxon_signed_rank(a=[2, 3, 4, 5, 6, 7], b=[1] * 6))

rng = np.random.default_rng(0)
a = rng.normal(1.10, 0.05, 12)
b = a + rng.normal(0.02, 0.03, 12)
print("exact %.4f  normal approx %.4f" % (wilcoxon_signed_rank(a=a, b=b, method="exact"),
                                          wilcoxon_signed_rank(a=a, b=b, method="approx")))

for s in increasing_windows(150):
    print("increasing", s.label, len(s.train), "->", len(s.test))
weekdays = [i for i in range(200) if i % 7 < 5]
for s in rolling_windows(weekdays):
    print("rolling", s.label)
