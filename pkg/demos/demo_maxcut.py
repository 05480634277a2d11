"""
Max-Cut relaxation with the dual method
=======================================

The Max-Cut SDP has constant trace ``tr(X) = n``, which gives the exact
penalty ``rho = 2n + 2`` for the dual method without knowing the solution.
This demo solves the relaxation of a random weighted graph and rounds the
result with random hyperplanes.
"""

import numpy as np

from spectralbundle import SolverConfig, maxcut_rho_dual, maxcut_sdp, random_graph, sbmd_solve

####################################################################
# Build the problem
# -----------------
# ``sense="max"`` writes the cut bound ``max <L/4, X>`` as the minimization
# ``min <-L/4, X>``.

g = random_graph(30, 0.3, seed=0)
p = maxcut_sdp(g, sense="max")
print(f"{g.n} vertices, {len(g.edges)} edges")

####################################################################
# Solve with SBMD
# ---------------
# The optimal ``X`` of these relaxations is usually of low rank, so a small
# ``r_c`` is enough.

rep = sbmd_solve(p, SolverConfig(r_c=5, rho=maxcut_rho_dual(g.n), tol=1e-6, max_iter=500))
bound = -float(p.b @ rep.final_y)
print(f"status={rep.status.value} iterations={rep.iterations} upper bound={bound:.6f}")
print("final eta:", " ".join(f"{e:.1e}" for e in rep.history[-1].eta))

####################################################################
# Round the relaxation
# --------------------
# Factor ``X = V V^T`` and take the sign of ``V`` times random directions.

X = rep.final_X
w, U = np.linalg.eigh((X + X.T) / 2)
V = U * np.sqrt(np.clip(w, 0, None))
L = g.laplacian()
rng = np.random.default_rng(0)
best = max(float(x @ L @ x) / 4 for x in np.sign(V @ rng.standard_normal((g.n, 50))).T)
print(f"best rounded cut={best:.6f}  ratio={best / bound:.3f}")
