"""First p-Laplace eigenvalue of the unit disk for a range of Robin constants.

    python3 scripts/radial_table.py
"""
from torsionlab.plaplace import ball_p_torsion_sup, radial_p_eigenvalue

B_VALUES = (0.01, 0.1, 1.0, 10.0, 100.0, 1e4)

print(f"{'p':>5} " + " ".join(f"b={b:<9g}" for b in B_VALUES) + " Dirichlet   sup w_p")
for p in (1.25, 1.5, 2.0, 3.0, 5.0):
    row = [radial_p_eigenvalue(2, p, 1.0, b) for b in B_VALUES]
    d = radial_p_eigenvalue(2, p, 1.0, None)
    print(f"{p:5.2f} " + " ".join(f"{v:<11.6g}" for v in row) + f" {d:<11.6g} {ball_p_torsion_sup(2, p, 1.0):.6g}")
