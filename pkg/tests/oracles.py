"""Dense brute-force reference assemblies for meshes with a handful of cells.

Everything here loops over global dofs and evaluates basis functions point by
point with independently built quadrature, so it shares no assembly code with
the package.
"""

import numpy as np

from westervelt_dg.quadrature import build_face_quadrature, build_volume_quadrature


def _owner(space, i):
    return i // space.n_loc, i % space.n_loc


def basis(space, i, cell, pts):
    """Global basis function ``i`` and its gradient on ``cell`` (zero off its support)."""
    c, loc = _owner(space, i)
    pts = np.atleast_2d(pts)
    if c != cell:
        return np.zeros(len(pts)), np.zeros((len(pts), 2))
    vals, grads = zip(*(space.evaluate_basis(cell, x) for x in pts))
    return np.array(vals)[:, loc], np.array(grads)[:, loc]


def cell_c2(mat, mesh):
    return np.array([mat.medium_for(t).c ** 2 for t in mesh.cell_tags])


def dense_volume(space, integrand, degree):
    """``A_ij = sum_K int_K integrand(K, x, phi_i, grad_i, phi_j, grad_j)``."""
    n = space.n_dofs
    A = np.zeros((n, n))
    for c in range(space.n_cells):
        q = build_volume_quadrature(space.mesh.cell(c), degree)
        ev = [basis(space, i, c, q.points) for i in range(n)]
        for i in range(n):
            for j in range(n):
                A[i, j] += np.dot(q.weights, integrand(c, q.points, *ev[i], *ev[j]))
    return A


def dense_mass(space, weight=None):
    w = weight or (lambda x: 1.0 + 0 * x[:, 0])
    return dense_volume(space, lambda c, x, pi, gi, pj, gj: w(x) * pi * pj, 3 * space.p + 4)


def dense_stiffness(space, mat):
    c2 = cell_c2(mat, space.mesh)
    return dense_volume(space, lambda c, x, pi, gi, pj, gj: c2[c] * (gi * gj).sum(1), 2 * space.p + 2)


def _faces(space, n_points):
    mesh = space.mesh
    for f in range(mesh.n_faces):
        face = mesh.face(f)
        q = build_face_quadrature(*face.endpoints, n_points)
        yield face, q


def _traces(space, i, face, pts):
    """Values and gradients on both sides; the minus side is zero on the boundary."""
    vp, gp = basis(space, i, face.plus_cell, pts)
    if face.is_boundary:
        return vp, gp, np.zeros_like(vp), np.zeros_like(gp)
    vm, gm = basis(space, i, face.minus_cell, pts)
    return vp, gp, vm, gm


def dense_jump_matrix(space, mat):
    """``D_ij = sum_F int [[N_j]] . {{c^2 grad N_i}}``."""
    c2 = cell_c2(mat, space.mesh)
    n = space.n_dofs
    D = np.zeros((n, n))
    for face, q in _faces(space, space.p + 2):
        tr = [_traces(space, i, face, q.points) for i in range(n)]
        nrm = face.normal
        for i in range(n):
            vp, gp, vm, gm = tr[i]
            if face.is_boundary:
                avg = c2[face.plus_cell] * gp
            else:
                avg = 0.5 * (c2[face.plus_cell] * gp + c2[face.minus_cell] * gm)
            for j in range(n):
                wp, _, wm, _ = tr[j]
                jump = wp[:, None] * nrm - wm[:, None] * nrm
                D[i, j] += np.dot(q.weights, (jump * avg).sum(1))
    return D


def chi_reference(mesh, mat, beta, p):
    out = []
    h = mesh.diameters
    for f in range(mesh.n_faces):
        face = mesh.face(f)
        cells = [face.plus_cell] if face.is_boundary else [face.plus_cell, face.minus_cell]
        if mat.is_piecewise:
            out.append(beta * max(mat.medium_for(mesh.cell_tags[c]).c ** 2 * p**2 / h[c] for c in cells))
        else:
            out.append(beta * mat.c**2 * max(p**2 / h[c] for c in cells))
    return np.array(out)


def dense_penalty(space, mat, beta):
    chi = chi_reference(space.mesh, mat, beta, space.p)
    n = space.n_dofs
    P = np.zeros((n, n))
    for f, (face, q) in enumerate(_faces(space, space.p + 2)):
        tr = [_traces(space, i, face, q.points) for i in range(n)]
        for i in range(n):
            for j in range(n):
                ji = tr[i][0] - tr[i][2]
                jj = tr[j][0] - tr[j][2]
                P[i, j] += chi[f] * np.dot(q.weights, ji * jj)
    return P


def dense_triple_tensor(space):
    n = space.n_dofs
    T = np.zeros((n, n, n))
    for c in range(space.n_cells):
        q = build_volume_quadrature(space.mesh.cell(c), 3 * space.p + 2)
        vals = np.array([basis(space, i, c, q.points)[0] for i in range(n)])
        T += np.einsum("q,iq,jq,lq->ijl", q.weights, vals, vals, vals)
    return T


def dense_nonlinear_mass(space, mat, v):
    k = np.array([mat.medium_for(t).k for t in space.mesh.cell_tags])
    kdof = np.repeat(k, space.n_loc)
    T = dense_triple_tensor(space)
    # 2k is piecewise constant, so it may be pulled onto the row index
    return 2.0 * kdof[:, None] * np.einsum("l,lji->ij", v, T)


def dense_dirichlet(space, mat, beta, g, gdot, t):
    chi = chi_reference(space.mesh, mat, beta, space.p)
    c2 = cell_c2(mat, space.mesh)
    r = np.array([mat.medium_for(tg).b for tg in space.mesh.cell_tags]) / c2
    w = np.zeros(space.n_dofs)
    for f, (face, q) in enumerate(_faces(space, space.p + 2)):
        if not face.is_boundary:
            continue
        c = face.plus_cell
        x, y = q.points[:, 0], q.points[:, 1]
        gt = g(x, y, t, face.boundary_tag) + r[c] * gdot(x, y, t, face.boundary_tag)
        for i in range(space.n_dofs):
            v, gr = basis(space, i, c, q.points)
            w[i] += np.dot(q.weights, gt * (-c2[c] * gr @ face.normal + chi[f] * v))
    return w
