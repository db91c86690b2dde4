#!/usr/bin/env python3
"""03_text_ablation.py

Does seeing the text help place the boxes?

Two models with the same size, seed and number of updates are trained on the same synthetic
pages.  One sees every element's text, the other sees only geometry.  Both then complete
held-out pages from their first half and the completions are scored with the layout metrics.
Lower Align and Over are better; mIoU compares against the real second half.

Takes around ten minutes on one CPU core.
"""

from docseq.experiments import text_ablation

res = text_ablation()
print(res.table())
for key in ("alignment", "overlap"):
    print(f"{key}: layout+text is {100 * res.relative(key):+.1f}% relative to layout-only")
print("within the 10% margin:", res.passes(0.10))
