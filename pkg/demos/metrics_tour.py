"""
Scoring a detector from a score list
====================================

Every metric in the toolkit is computed from one object: a list of
P(FAKE) scores with their labels. This tour walks through the four-clip
example, where half the ordering is wrong.
"""
import numpy as np

from spoofbench import evalkit as ek

# two fake clips (label 1) and two real ones (label 0)
scores = np.array([0.9, 0.1, 0.8, 0.2])
labels = np.array([1, 0, 0, 1])
ss = ek.ScoreSet(scores, labels, ("a", "b", "c", "d"))

# confusion at the default 0.5 threshold: score >= t means FAKE
c = ek.confusion(ss.scores, ss.labels, 0.5)
print("tp fp tn fn:", c.tp, c.fp, c.tn, c.fn)
print("acc prec rec f1:", ek.basic_metrics(c))

# the ROC curve starts at (0, 0) and ends at (1, 1)
curve = ek.roc_curve(ss)
for f, t, th in zip(curve.fpr, curve.tpr, curve.thresholds):
    print(f"  t={th:>5}  fpr={f:.2f}  tpr={t:.2f}")

# 3 of the 4 fake/real pairs are ordered correctly, hence AUC 0.75
print("AUC:", ek.auc(curve))

# the operating point where false accepts equal false rejects
rate, threshold = ek.eer(ss)
print(f"EER: {rate:.2f} at threshold {threshold:.2f}")

# DET points are (false accept rate, miss rate)
print("DET:", ek.det_points(ss).tolist())

# the same numbers as a table row, in percent
report = ek.report_from_scores(ss)
print(ek.format_table([("four-point", report)]))
