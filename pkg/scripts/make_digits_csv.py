"""Regenerate the bundled digits dataset (needs scikit-learn, dev only).

Pixel intensities are rescaled from 0..16 to [0, 1]; k/16 is exact in four
decimals, so the file round-trips losslessly.
"""
import csv
import sys
from pathlib import Path

from sklearn.datasets import load_digits

out = Path(sys.argv[1]) if len(sys.argv) > 1 else (
    Path(__file__).resolve().parents[1] / "src" / "sbfgs" / "data" / "digits.csv")
X, y = load_digits(return_X_y=True)
with open(out, "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow([f"px{j}" for j in range(X.shape[1])] + ["label"])
    for row, label in zip(X, y):
        w.writerow([f"{v / 16:.4f}".rstrip("0").rstrip(".") for v in row] + [int(label)])
print(f"wrote {len(y)} rows to {out}")
