"""The energy score, from the ground up.

A channel's importance is read off its activations: stack the channel's
feature map from every sample into an N x (h*w) matrix and sum its
singular values (the nuclear norm). A channel whose maps span many
directions with large magnitudes carries more information than one whose
maps are nearly rank-one copies of each other -- even when both have the
same Frobenius norm.

Run:  python3 demos/01_svd_and_energy.py
"""

import numpy as np

from energyprune import (frobenius_norm, make_rng, nuclear_norm,
                         singular_values, svd)

rng = make_rng(0)

# --- the SVD kernel itself ------------------------------------------------
a = rng.normal(size=(6, 4))
res = svd(a)
print("singular values:", np.round(res.s, 4))
print("reconstruction error:", np.max(np.abs(res.reconstruct() - a)))
print("U orthonormality:", np.max(np.abs(res.u.T @ res.u - np.eye(4))))
print()

# --- why the nuclear norm, not the Frobenius norm -------------------------
# Two synthetic "channels" with identical Frobenius energy. The first is
# rank-one (every sample sees the same pattern, only scaled); the second
# spreads the same total energy across independent directions.
n, hw = 32, 49
pattern = rng.normal(size=hw)
pattern /= np.linalg.norm(pattern)
rank_one = np.outer(rng.normal(size=n), pattern)
diverse = rng.normal(size=(n, hw))
diverse *= frobenius_norm(rank_one) / frobenius_norm(diverse)

for name, mat in [("rank-one channel", rank_one), ("diverse channel", diverse)]:
    s = singular_values(mat)
    print(f"{name}: frobenius={frobenius_norm(mat):.3f}  "
          f"nuclear={nuclear_norm(mat):.3f}  "
          f"top-3 svs={np.round(s[:3], 3)}")

print()
print("Same Frobenius norm, very different nuclear norm: the nuclear")
print("norm rewards channels whose activations span many directions,")
print("which is exactly what a pruning criterion should keep.")
