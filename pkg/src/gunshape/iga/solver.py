"""Stiffness assembly, Dirichlet elimination and the linear solve."""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .. import kernels
from .space import patch_quadrature, tensor_basis


class SolverError(RuntimeError):
    """Breakdown of the linear solve or a singular geometry map."""


@dataclass(eq=False)
class QuadCache:
    """Geometry-independent quadrature data, reusable across designs."""
    space: object
    quads: list = field(default_factory=list)

    @classmethod
    def for_space(cls, space):
        return cls(space, [patch_quadrature(ps) for ps in space.patches])


def _push_forward(J, dN):
    """Physical gradients from parametric ones; J[..., a, b] = dx_a/du_b."""
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    inv = np.empty_like(J)
    # singular points are caught by the callers' det check
    with np.errstate(divide="ignore", invalid="ignore"):
        inv[..., 0, 0] = J[..., 1, 1] / det
        inv[..., 1, 1] = J[..., 0, 0] / det
        inv[..., 0, 1] = -J[..., 0, 1] / det
        inv[..., 1, 0] = -J[..., 1, 0] / det
    # grad_x N = J^{-T} grad_u N
    g = np.einsum("...ba,...ib->...ia", inv, dN)
    return g, det


@dataclass(eq=False)
class LinearSystem:
    """Full stiffness ``K`` plus the reduced system on free coefficients.

    The reduced problem is ``K_ff phi_f = -rhs`` with ``rhs = K_fd phi_d``.
    """
    space: object
    K: sp.csr_matrix
    K_ff: sp.csr_matrix
    rhs: np.ndarray
    phi_d: np.ndarray
    voltages: dict


def stiffness(space, model, cache=None):
    """Global rho-weighted, permittivity-scaled stiffness matrix (CSR)."""
    cache = cache or QuadCache.for_space(space)
    rows, cols, vals = [], [], []
    for k, (patch, quad) in enumerate(zip(model.patches, cache.quads)):
        _, J = patch.surface.evaluate(quad.xi, quad.eta, jacobian=True)
        x = patch.surface.evaluate(quad.xi, quad.eta)
        grads, det = _push_forward(J, quad.dN)
        if np.any(det <= 0.0):
            raise SolverError(f"non-positive Jacobian at a quadrature point of patch {k}")
        w = model.permittivity(k) * x[..., 0] * det * quad.w
        Ke = kernels.element_matrices(np.ascontiguousarray(grads), np.ascontiguousarray(w))
        nloc = quad.idx.shape[1]
        rows.append(np.repeat(quad.idx, nloc, axis=1).ravel())
        cols.append(np.tile(quad.idx, (1, nloc)).ravel())
        vals.append(Ke.ravel())
    n = space.n_dofs
    K = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    K.sum_duplicates()
    return K


def assemble(space, model, voltages=None, cache=None):
    voltages = dict(model.voltages if voltages is None else voltages)
    K = stiffness(space, model, cache)
    phi_d = space.dirichlet_values(voltages)
    K_ff = K[space.free][:, space.free].tocsr()
    K_fd = K[space.free][:, space.fixed].tocsr()
    rhs = K_fd @ phi_d if space.fixed.size else np.zeros(space.n_free)
    return LinearSystem(space, K, K_ff, rhs, phi_d, voltages)


def solve(system, model, method="direct", rtol=1e-10):
    """Solve the reduced system and return the full :class:`FieldSolution`."""
    space = system.space
    phi = np.zeros(space.n_dofs)
    phi[space.fixed] = system.phi_d
    if space.n_free:
        diag = system.K_ff.diagonal()
        if np.any(diag <= 0.0):
            raise SolverError("stiffness matrix is not positive definite")
        b = -system.rhs
        if method == "direct":
            try:
                x = spla.splu(system.K_ff.tocsc()).solve(b)
            except RuntimeError as exc:
                raise SolverError(f"factorization failed: {exc}") from exc
        elif method == "cg":
            M = sp.diags(1.0 / diag)
            x, info = spla.cg(system.K_ff, b, rtol=rtol * 1e-3, atol=0.0, M=M,
                              maxiter=20 * space.n_free)
            if info != 0:
                raise SolverError(f"CG did not converge (info={info})")
        else:
            raise ValueError(f"unknown solver method {method!r}")
        res = np.linalg.norm(system.K_ff @ x - b)
        scale = np.linalg.norm(b)
        if not np.isfinite(res) or res > rtol * max(scale, 1e-300) and scale > 0:
            raise SolverError(f"residual {res:.3e} exceeds tolerance (|rhs| = {scale:.3e})")
        phi[space.free] = x
    return FieldSolution(space, model, phi, system.voltages)


@dataclass(eq=False)
class FieldSolution:
    """Coefficients of the potential over the multipatch space."""
    space: object
    model: object
    coeffs: np.ndarray
    voltages: dict

    def _eval(self, patch, xi, eta, grad):
        xi = np.asarray(xi, dtype=float)
        eta = np.asarray(eta, dtype=float)
        xi, eta = np.broadcast_arrays(xi, eta)
        shape = xi.shape
        ps = self.space.patches[patch]
        idx, N, dN = tensor_basis(ps, xi.ravel(), eta.ravel())
        c = self.coeffs[idx]
        if not grad:
            return np.sum(c * N, axis=1).reshape(shape)
        _, J = self.model.patches[patch].surface.evaluate(xi.ravel(), eta.ravel(), jacobian=True)
        g, det = _push_forward(J, dN)
        if np.any(det <= 0.0):
            raise SolverError("singular Jacobian in field evaluation")
        e = -np.einsum("ni,nia->na", c, g)
        return e.reshape(shape + (2,))

    def potential(self, patch, xi, eta):
        return self._eval(patch, xi, eta, grad=False)

    def field(self, patch, xi, eta):
        """Electric field ``(E_rho, E_z)`` = -grad phi at parametric points."""
        return self._eval(patch, xi, eta, grad=True)

    def scaled(self, c):
        return FieldSolution(self.space, self.model, self.coeffs * c,
                             {k: v * c for k, v in self.voltages.items()})


def eval_potential(sol, patch, xi, eta):
    return sol.potential(patch, xi, eta)


def eval_field(sol, patch, xi, eta):
    return sol.field(patch, xi, eta)


def solve_model(model, degree=3, regularity=None, n_sub=16, voltages=None, method="direct",
                space=None, cache=None):
    from .space import build_space
    space = space or build_space(model, degree, regularity, n_sub)
    system = assemble(space, model, voltages, cache)
    return solve(system, model, method)
