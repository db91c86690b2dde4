#!/usr/bin/env python3
"""04_metrics_by_hand.py

The layout metrics on pages small enough to check with pencil and paper.
"""

import numpy as np

from docseq.document import BBox, Document, Element
from docseq.metrics import alignment, frechet, hungarian, m_iou, overlap

# Two boxes of width 0.2 shifted by half a width: intersection 0.02, union 0.06, IoU 1/3.
ref = Document("r", 100, 100, (Element(0, BBox(0, 0, 20, 20)), Element(0, BBox(50, 50, 20, 20))))
gen = Document("g", 100, 100, (Element(0, BBox(50, 50, 20, 20)), Element(0, BBox(10, 0, 20, 20))))
print("mIoU (order does not matter, matching is optimal):", m_iou(gen, ref))  # (1 + 1/3) / 2

# Identical boxes overlap completely: one intersection of area A over a total of 2A.
twin = Document("t", 10, 10, (Element(0, BBox(1, 1, 4, 4)), Element(0, BBox(1, 1, 4, 4))))
print("overlap of two identical boxes:", overlap(twin))
print("alignment of two boxes sharing a left edge:", alignment(twin))

# The assignment solver breaks ties towards the lexicographically smallest matching.
print("hungarian([[1, 2], [2, 4]]):", hungarian([[1, 2], [2, 4]]))

# Fréchet distance between 1-D Gaussians N(0, 1) and N(3, 1) is the squared mean gap.
print("frechet 1-D:", frechet([0.0], [[1.0]], [3.0], [[1.0]]))
print("frechet diag:", frechet(np.zeros(2), np.diag([1.0, 4.0]), np.ones(2), np.diag([4.0, 1.0])))  # 2 + 1 + 1
