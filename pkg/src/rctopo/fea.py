"""Plane-stress Q4 finite elements: constitutive matrices, stiffness, solve, stresses.

Elements are integrated with full 2x2 Gauss quadrature and each Gauss point can
carry its own (possibly orthotropic, rotated) constitutive matrix. Assembly is
COO-based in a fixed element order, so identical designs produce bit-identical
global matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

# 2x2 Gauss points on the bi-unit square, unit weights.
_GP = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]) / np.sqrt(3.0)
# local corner order: bottom-left, bottom-right, top-right, top-left
_XI = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


class DegenerateMaterialError(ValueError):
    """nu1 * nu2 >= 1 leaves the plane-stress constitutive matrix indefinite."""


class SingularSystemError(RuntimeError):
    def __init__(self, msg, dof=None):
        super().__init__(msg)
        self.dof = dof


def shape_gradients(element_size: float) -> np.ndarray:
    """dN/dx, dN/dy for each Gauss point, shape (4, 2, 4).

    For an axis-aligned square the Jacobian is (h/2) * I at every point.
    """
    h = element_size
    out = np.empty((4, 2, 4))
    for g, (xi, eta) in enumerate(_GP):
        dxi = 0.25 * _XI[:, 0] * (1.0 + eta * _XI[:, 1])
        deta = 0.25 * _XI[:, 1] * (1.0 + xi * _XI[:, 0])
        out[g, 0] = dxi * (2.0 / h)
        out[g, 1] = deta * (2.0 / h)
    return out


def b_matrices(element_size: float) -> np.ndarray:
    """Strain-displacement matrices, shape (4 gauss points, 3, 8)."""
    grads = shape_gradients(element_size)
    B = np.zeros((4, 3, 8))
    for g in range(4):
        dx, dy = grads[g]
        B[g, 0, 0::2] = dx
        B[g, 1, 1::2] = dy
        B[g, 2, 0::2] = dy
        B[g, 2, 1::2] = dx
    return B


def poisson_secondary(e1: float, e2: float, nu1: float) -> float:
    """nu2 from the reciprocity relation E1/nu1 = E2/nu2."""
    return nu1 * e2 / e1


def constitutive_principal(e1: float, e2: float, nu1: float) -> np.ndarray:
    """Orthotropic plane-stress matrix in its own principal frame."""
    nu2 = poisson_secondary(e1, e2, nu1)
    if nu1 * nu2 >= 1.0:
        raise DegenerateMaterialError(f"nu1*nu2 = {nu1 * nu2} >= 1 (E1={e1}, E2={e2}, nu1={nu1})")
    f = 1.0 / (1.0 - nu1 * nu2)
    g_inv = 1.0 / ((1.0 + nu1) / e1 + (1.0 + nu2) / e2)
    return np.array([
        [f * e1, f * nu1 * e2, 0.0],
        [f * nu1 * e2, f * e2, 0.0],
        [0.0, 0.0, g_inv],
    ])


def _stress_rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([
        [c * c, s * s, 2 * c * s],
        [s * s, c * c, -2 * c * s],
        [-c * s, c * s, c * c - s * s],
    ])


def _strain_rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([
        [c * c, s * s, c * s],
        [s * s, c * c, -c * s],
        [-2 * c * s, 2 * c * s, c * c - s * s],
    ])


def constitutive_global(e1: float, e2: float, nu1: float, theta: float) -> np.ndarray:
    """Constitutive matrix in global coordinates for a principal frame at angle theta.

    Uses the engineering-Voigt transformation D_glo = Ts(-theta) @ D @ Te(theta),
    which is exact under 4th-order tensor rotation; in particular isotropic
    inputs are rotation invariant. For theta = 0 (or isotropic input) the
    principal-frame matrix is returned untouched so that those cases stay
    bit-exact.
    """
    D = constitutive_principal(e1, e2, nu1)
    # nu2 always comes from reciprocity, so e1 == e2 implies isotropy; skipping
    # the rotation keeps isotropic invariance bit-exact.
    if theta == 0.0 or e1 == e2:
        return D
    Dg = _stress_rotation(-theta) @ D @ _strain_rotation(theta)
    return 0.5 * (Dg + Dg.T)


def element_stiffness(d_per_gp: np.ndarray, element_size: float, thickness: float) -> np.ndarray:
    """Integrate B^T D B over the element; d_per_gp has shape (4, 3, 3)."""
    B = b_matrices(element_size)
    scale = (element_size**2 / 4.0) * thickness  # det(J) * weight * t
    ke = np.zeros((8, 8))
    for g in range(4):
        ke += B[g].T @ d_per_gp[g] @ B[g] * scale
    return 0.5 * (ke + ke.T)


def element_stiffness_batch(d_all: np.ndarray, element_size: float, thickness: float) -> np.ndarray:
    """Vectorized element stiffness for all elements; d_all is (nel, 4, 3, 3)."""
    B = b_matrices(element_size)
    scale = (element_size**2 / 4.0) * thickness
    ke = np.einsum("gia,ngij,gjb->nab", B, d_all, B, optimize=True) * scale
    return 0.5 * (ke + ke.transpose(0, 2, 1))


@dataclass
class GlobalSystem:
    """Assembled and solved linear system K d = F."""

    K: sp.csr_matrix
    F: np.ndarray
    d: np.ndarray
    free: np.ndarray
    fixed: np.ndarray

    @property
    def compliance(self) -> float:
        return float(self.F @ self.d)


def assemble(mesh, ke_all: np.ndarray, truss_coo=None) -> sp.csr_matrix:
    """Sum per-element 8x8 blocks (and optional truss COO triples) into global K."""
    edofs = mesh.element_dofs
    rows = np.repeat(edofs, 8, axis=1).ravel()
    cols = np.tile(edofs, (1, 8)).ravel()
    data = ke_all.reshape(-1)
    if truss_coo is not None and len(truss_coo[0]):
        rows = np.concatenate([rows, truss_coo[0]])
        cols = np.concatenate([cols, truss_coo[1]])
        data = np.concatenate([data, truss_coo[2]])
    K = sp.coo_matrix((data, (rows, cols)), shape=(mesh.dof_count, mesh.dof_count))
    return K.tocsr()


def solve(K: sp.csr_matrix, F: np.ndarray, fixed_dofs: np.ndarray) -> GlobalSystem:
    """Direct sparse solve on the free partition with an iterative-refinement pass.

    Displacements on fixed DOFs are exactly zero. After the solve the free-block
    residual satisfies ||K_ff d_f - F_f|| <= 1e-9 ||F_f|| (refined if needed);
    a singular factorization is reported with the first zero-pivot DOF.
    """
    n = K.shape[0]
    free = np.setdiff1d(np.arange(n), fixed_dofs)
    d = np.zeros(n)
    Ff = F[free]
    if not np.any(Ff):
        return GlobalSystem(K=K, F=F, d=d, free=free, fixed=fixed_dofs)
    Kff = K[free][:, free].tocsc()
    try:
        lu = spla.splu(Kff, permc_spec="COLAMD")
    except RuntimeError as exc:  # SuperLU reports "Factor is exactly singular"
        dof = _first_zero_pivot(Kff, free)
        raise SingularSystemError(f"singular stiffness matrix: {exc} (first zero-pivot DOF {dof})", dof) from exc
    df = lu.solve(Ff)
    fnorm = np.linalg.norm(Ff)
    resid = np.inf
    for _ in range(4):
        if np.all(np.isfinite(df)):
            resid = np.linalg.norm(Ff - Kff @ df)
            if resid <= 1e-9 * fnorm:
                break
            df = df + lu.solve(Ff - Kff @ df)
        else:
            break
    if not np.all(np.isfinite(df)) or resid > 1e-9 * fnorm:
        dof = _first_zero_pivot(Kff, free)
        raise SingularSystemError(
            f"singular or numerically rank-deficient stiffness matrix "
            f"(residual {resid:.3e}, first zero-pivot DOF {dof})", dof)
    d[free] = df
    return GlobalSystem(K=K, F=F, d=d, free=free, fixed=fixed_dofs)


def _first_zero_pivot(Kff, free) -> int:
    """Free DOF with the smallest diagonal entry, as a zero-pivot hint."""
    diag = np.abs(Kff.diagonal())
    return int(free[np.argmin(diag)]) if len(diag) else -1


def gauss_strains(mesh, d: np.ndarray) -> np.ndarray:
    """Strains at each Gauss point of each element, shape (nel, 4, 3)."""
    B = b_matrices(mesh.element_size)
    ue = d[mesh.element_dofs]  # (nel, 8)
    return np.einsum("gij,nj->ngi", B, ue, optimize=True)


def principal_from_stress(sx, sy, txy):
    """Principal stresses and angle from plane components (vectorized).

    Returns (s1, s2, theta) with s1 >= s2 and theta in (-pi/2, pi/2], measured
    from the global x axis to the s1 direction; the hydrostatic/degenerate case
    maps to theta = 0.
    """
    avg = 0.5 * (sx + sy)
    rad = np.sqrt((0.5 * (sx - sy)) ** 2 + txy**2)
    s1 = avg + rad
    s2 = avg - rad
    theta = 0.5 * np.arctan2(2.0 * txy, sx - sy)
    theta = np.where(theta <= -np.pi / 2, theta + np.pi, theta)
    return s1, s2, theta


def gauss_stresses(mesh, d: np.ndarray, d_all: np.ndarray):
    """Stress components and principal state per Gauss point.

    d_all holds the constitutive matrices actually used in the solve, shape
    (nel, 4, 3, 3). Returns (sigma, s1, s2, theta) where sigma is (nel, 4, 3).
    """
    eps = gauss_strains(mesh, d)
    sigma = np.einsum("ngij,ngj->ngi", d_all, eps, optimize=True)
    s1, s2, theta = principal_from_stress(sigma[..., 0], sigma[..., 1], sigma[..., 2])
    return sigma, s1, s2, theta
