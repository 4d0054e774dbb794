"""Independent checks on small lattices.

Energy-conserving two-photon transitions cancel at second order; the closed
form matches the explicit sum elsewhere; and U psi U^T matches brute-force
evolution with the two-photon Hamiltonian.
"""

import json

from biphoton_edge.oracle import verification_report

report = verification_report(n_degenerate=1000, n_generic=200, n_evolution=20, seed=0)
print(json.dumps(report, indent=2))
