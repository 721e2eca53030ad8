"""Density filtering and Heaviside projection with chain-rule backpropagation.

The density filter is the usual linear-decay neighborhood average over element
centers; the projection is the tanh threshold form, which maps filtered
densities toward 0/1 symmetrically around the threshold eta and reduces to the
identity at beta = 0.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class StaleFilterCacheError(RuntimeError):
    """backprop was called without a matching forward pass."""


def build_filter_matrix(mesh, radius: float) -> sp.csr_matrix:
    """Row-normalized linear-decay filter over element centers.

    Rows sum to exactly 1; a radius smaller than one element edge yields the
    identity map.
    """
    centers = mesh.element_centers()
    h = mesh.element_size
    nelx, nely = mesh.nx, mesh.ny
    reach = int(np.ceil(radius / h)) - 1
    rows, cols, vals = [], [], []
    for ex in range(nelx):
        for ey in range(nely):
            e = mesh.element_id(ex, ey)
            for jx in range(max(0, ex - reach), min(nelx, ex + reach + 1)):
                for jy in range(max(0, ey - reach), min(nely, ey + reach + 1)):
                    j = mesh.element_id(jx, jy)
                    dist = np.hypot(centers[e, 0] - centers[j, 0], centers[e, 1] - centers[j, 1])
                    w = radius - dist
                    if w > 0.0:
                        rows.append(e)
                        cols.append(j)
                        vals.append(w)
    H = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_elements, mesh.n_elements)).tocsr()
    rowsum = np.asarray(H.sum(axis=1)).ravel()
    return sp.diags(1.0 / rowsum) @ H


def heaviside_project(rho_tilde: np.ndarray, beta: float, eta: float = 0.5):
    """Tanh threshold projection; returns (projected, d projected / d rho_tilde).

    beta = 0 is the identity limit. rho_tilde = 0 maps to 0 and 1 maps to 1
    exactly for every beta.
    """
    rho_tilde = np.asarray(rho_tilde, dtype=float)
    if beta == 0.0:
        return rho_tilde.copy(), np.ones_like(rho_tilde)
    denom = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    rho = (np.tanh(beta * eta) + np.tanh(beta * (rho_tilde - eta))) / denom
    drho = beta * (1.0 / np.cosh(beta * (rho_tilde - eta)) ** 2) / denom
    return rho, drho


class FilterChain:
    """design variables -> filtered -> (optionally projected) physical densities.

    Caches the forward pass so the adjoint application in backprop() uses the
    projection slope of the densities actually assembled.
    """

    def __init__(self, mesh, radius: float, heaviside: bool, eta: float = 0.5):
        self.W = build_filter_matrix(mesh, radius)
        self.heaviside = heaviside
        self.eta = eta
        self.beta = 0.0
        self._dproj = None

    def forward(self, x: np.ndarray, beta: float | None = None) -> np.ndarray:
        if beta is not None:
            self.beta = beta
        rho_tilde = np.clip(self.W @ x, 0.0, 1.0)  # rows sum to 1; clip float fuzz
        if self.heaviside:
            rho, self._dproj = heaviside_project(rho_tilde, self.beta, self.eta)
        else:
            rho = rho_tilde
            self._dproj = np.ones_like(rho_tilde)
        return rho

    def apply(self, x: np.ndarray, beta: float | None = None) -> np.ndarray:
        """Like forward() but without touching the backprop cache."""
        rho_tilde = np.clip(self.W @ x, 0.0, 1.0)
        if not self.heaviside:
            return rho_tilde
        b = self.beta if beta is None else beta
        return heaviside_project(rho_tilde, b, self.eta)[0]

    def backprop(self, grad_rho: np.ndarray) -> np.ndarray:
        """Pull a gradient w.r.t. physical densities back to design variables."""
        if self._dproj is None:
            raise StaleFilterCacheError("no cached forward pass; call forward() first")
        if self._dproj.shape != grad_rho.shape:
            raise StaleFilterCacheError("cached forward pass does not match gradient size")
        return self.W.T @ (grad_rho * self._dproj)

    def invalidate(self):
        self._dproj = None
