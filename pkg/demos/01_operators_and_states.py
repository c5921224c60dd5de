"""Operators, superoperators and thermal states.

A short tour of the building blocks: the emitter-major product basis, the
column-stacking vectorization and the truncated thermal state.
"""
import numpy as np

from lambda_phonon.quantum_core import (
    HilbertSpace,
    TruncationError,
    boson_ops,
    devec,
    dissipator,
    emitter_op,
    lift_left,
    lift_right,
    minimal_thermal_cutoff,
    thermal_state,
    vec,
)

# three emitter levels (down, up, e) times a Fock space of 10 phonon states
space = HilbertSpace(10)
print("total dimension:", space.total_dim)
print("index of |e, m=3>:", space.index("e", 3))

b, b_dag, n = boson_ops(space)
s_ee = emitter_op("e", "e", space)

# vec(A rho B) == (B^T kron A) vec(rho), so left/right multiplication become matrices
rng = np.random.default_rng(0)
rho = rng.normal(size=(30, 30)) + 1j * rng.normal(size=(30, 30))
lhs = lift_left(b) @ lift_right(b_dag) @ vec(rho)
rhs = vec(b @ rho @ b_dag)
print("vectorization identity holds:", np.allclose(lhs, rhs))

# the Lindblad dissipator D[b] rho = 2 b rho b^+ - {b^+ b, rho}
D = dissipator(b)
direct = 2 * b @ rho @ b_dag - n @ rho - rho @ n
print("dissipator matches:", np.allclose(devec(D @ vec(rho), 30), direct))

# thermal states need enough Fock states to hold the geometric tail
print("cutoff needed for nbar = 5 at tail 1e-6:", minimal_thermal_cutoff(5.0))
try:
    thermal_state(5.0, space)
except TruncationError as exc:
    print("refused:", exc)

rho_th = thermal_state(0.5, HilbertSpace(30))
print("mean phonon number of thermal(0.5):", np.real(np.trace(rho_th @ boson_ops(HilbertSpace(30))[2])))
