"""Reference Lagrange elements, quadrature rules, and cell geometry maps.

Elements are nodal (equispaced Lagrange) on the reference interval [0, 1],
the reference triangle {(x, y) : x, y >= 0, x + y <= 1}, and the reference
square [0, 1]^2.  Basis functions are built by inverting a monomial
Vandermonde matrix at the node points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import CellType

MAX_DEGREE = 4
MAX_QUADRATURE_DEGREE = 12


def _monomial_exponents(cell, degree):
    if cell is CellType.INTERVAL:
        return [(a,) for a in range(degree + 1)]
    if cell is CellType.TRIANGLE:
        return [(a, b) for a in range(degree + 1)
                for b in range(degree + 1 - a)]
    return [(a, b) for a in range(degree + 1) for b in range(degree + 1)]


def _eval_monomials(exps, points):
    """Values and gradients of monomials at points: (npts, nm), (npts, nm, dim)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    npts, dim = points.shape
    vals = np.ones((npts, len(exps)))
    grads = np.zeros((npts, len(exps), dim))
    for m, exp in enumerate(exps):
        for d, a in enumerate(exp):
            vals[:, m] *= points[:, d] ** a
        for d, a in enumerate(exp):
            if a == 0:
                continue
            g = a * points[:, d] ** (a - 1)
            for d2, a2 in enumerate(exp):
                if d2 != d:
                    g = g * points[:, d2] ** a2
            grads[:, m, d] = g
    return vals, grads


def _node_lattice(cell, degree):
    """Equispaced node points plus an entity tag per node.

    Tags are ('vertex', k), ('edge', local_edge, index_along_edge) or
    ('interior', i); edge indices run along the local edge direction.
    """
    p = degree
    nodes, tags = [], []
    interior = 0
    if cell is CellType.INTERVAL:
        for i in range(p + 1):
            nodes.append((i / p,))
            if i == 0:
                tags.append(("vertex", 0))
            elif i == p:
                tags.append(("vertex", 1))
            else:
                tags.append(("interior", interior))
                interior += 1
    elif cell is CellType.TRIANGLE:
        for i in range(p + 1):
            for j in range(p + 1 - i):
                nodes.append((i / p, j / p))
                if (i, j) == (0, 0):
                    tags.append(("vertex", 0))
                elif (i, j) == (p, 0):
                    tags.append(("vertex", 1))
                elif (i, j) == (0, p):
                    tags.append(("vertex", 2))
                elif j == 0:
                    tags.append(("edge", 0, i - 1))
                elif i + j == p:
                    tags.append(("edge", 1, j - 1))
                elif i == 0:
                    tags.append(("edge", 2, p - j - 1))
                else:
                    tags.append(("interior", interior))
                    interior += 1
    else:
        for i in range(p + 1):
            for j in range(p + 1):
                nodes.append((i / p, j / p))
                if (i, j) == (0, 0):
                    tags.append(("vertex", 0))
                elif (i, j) == (p, 0):
                    tags.append(("vertex", 1))
                elif (i, j) == (p, p):
                    tags.append(("vertex", 2))
                elif (i, j) == (0, p):
                    tags.append(("vertex", 3))
                elif j == 0:
                    tags.append(("edge", 0, i - 1))
                elif i == p:
                    tags.append(("edge", 1, j - 1))
                elif j == p:
                    tags.append(("edge", 2, p - i - 1))
                elif i == 0:
                    tags.append(("edge", 3, p - j - 1))
                else:
                    tags.append(("interior", interior))
                    interior += 1
    return np.array(nodes), tags


class ReferenceElement:
    """Nodal Lagrange element; value_shape () for scalars, (2,) for vectors.

    Vector elements are blocked scalars: basis function 2*i + c is the scalar
    basis function i placed in component c.
    """

    def __init__(self, cell, family, degree, value_shape=()):
        self.cell = cell
        self.family = family
        self.degree = degree
        self.value_shape = tuple(value_shape)
        self.exponents = _monomial_exponents(cell, degree)
        self.node_points, self.node_tags = _node_lattice(cell, degree)
        vand, _ = _eval_monomials(self.exponents, self.node_points)
        self.coefficients = np.linalg.inv(vand)

    @property
    def num_scalar_dofs(self):
        return len(self.node_points)

    @property
    def num_dofs(self):
        block = int(np.prod(self.value_shape, dtype=int)) if self.value_shape else 1
        return self.num_scalar_dofs * block

    def tabulate_scalar(self, points):
        """Scalar basis values and reference gradients at points.

        Returns (values (npts, n), grads (npts, n, dim)).
        """
        vals, grads = _eval_monomials(self.exponents, points)
        return vals @ self.coefficients, np.einsum(
            "pmd,mn->pnd", grads, self.coefficients)

    def tabulate(self, points):
        """Basis values and reference gradients, including the block structure.

        Scalar elements: (npts, n), (npts, n, dim).  Vector elements:
        (npts, 2n, 2), (npts, 2n, 2, dim).
        """
        vals, grads = self.tabulate_scalar(points)
        if not self.value_shape:
            return vals, grads
        npts, n = vals.shape
        dim = grads.shape[2]
        bvals = np.zeros((npts, 2 * n, 2))
        bgrads = np.zeros((npts, 2 * n, 2, dim))
        for c in range(2):
            bvals[:, c::2, c] = vals
            bgrads[:, c::2, c, :] = grads
        return bvals, bgrads

    def __repr__(self):
        shape = f", shape={self.value_shape}" if self.value_shape else ""
        return f"{self.family}{self.degree}({self.cell.value}{shape})"


def make_element(cell, family, degree, value_shape=()):
    """Construct a Lagrange element.

    family 'P' lives on intervals and triangles, 'Q' on quadrilaterals;
    degrees 1 through 4.
    """
    cell = CellType(cell)
    if not 1 <= degree <= MAX_DEGREE:
        raise ValueError(f"degree {degree} outside supported range "
                         f"1..{MAX_DEGREE}")
    if family == "P":
        if cell is CellType.QUADRILATERAL:
            raise ValueError("family P not defined on quadrilaterals")
    elif family == "Q":
        if cell is not CellType.QUADRILATERAL:
            raise ValueError("family Q only defined on quadrilaterals")
    else:
        raise ValueError(f"unknown element family {family!r}")
    if tuple(value_shape) not in ((), (2,)):
        raise ValueError(f"unsupported value shape {value_shape!r}")
    return ReferenceElement(cell, family, degree, value_shape)


@dataclass(frozen=True)
class QuadratureRule:
    cell: CellType
    points: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.weights)


def _gauss_01(npts):
    """Gauss-Legendre points and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def make_quadrature(cell, degree):
    """Quadrature exact for polynomials up to the requested degree.

    Interval and quadrilateral rules are (tensor) Gauss-Legendre and exact
    per coordinate degree; the triangle rule is a collapsed tensor rule exact
    for total degree.  All weights are positive.
    """
    cell = CellType(cell)
    if not 0 <= degree <= MAX_QUADRATURE_DEGREE:
        raise ValueError(f"quadrature degree {degree} outside supported "
                         f"range 0..{MAX_QUADRATURE_DEGREE}")
    if cell is CellType.INTERVAL:
        x, w = _gauss_01(degree // 2 + 1)
        return QuadratureRule(cell, x.reshape(-1, 1), w)
    if cell is CellType.QUADRILATERAL:
        x, w = _gauss_01(degree // 2 + 1)
        pts = np.array([(xi, xj) for xi in x for xj in x])
        wts = np.array([wi * wj for wi in w for wj in w])
        return QuadratureRule(cell, pts, wts)
    # triangle: map the square by (x, y) -> (x, y (1 - x)); the extra (1 - x)
    # factor raises the x-degree by one
    gx, wx = _gauss_01((degree + 1) // 2 + 1)
    gy, wy = _gauss_01(degree // 2 + 1)
    pts, wts = [], []
    for xi, wxi in zip(gx, wx):
        for yj, wyj in zip(gy, wy):
            pts.append((xi, yj * (1.0 - xi)))
            wts.append(wxi * wyj * (1.0 - xi))
    return QuadratureRule(cell, np.array(pts), np.array(wts))


def reference_vertices(cell):
    cell = CellType(cell)
    if cell is CellType.INTERVAL:
        return np.array([[0.0], [1.0]])
    if cell is CellType.TRIANGLE:
        return np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def facet_embedding(cell, local_facet, points, flip=False):
    """Embed interval reference coordinates onto a facet of a 2D cell.

    points are parameters in [0, 1] along the facet; t = 0 maps to the first
    vertex of the cell's local facet (the second if flip is set, which callers
    use to follow the facet's global vertex order).  Returns (npts, 2)
    reference coordinates of the cell.
    """
    cell = CellType(cell)
    if cell is CellType.INTERVAL:
        raise ValueError("facet embedding needs a 2D cell")
    facets = cell.local_facets
    if not 0 <= local_facet < len(facets):
        raise ValueError(f"cell {cell.value} has no local facet {local_facet}")
    a, b = facets[local_facet]
    if flip:
        a, b = b, a
    va, vb = reference_vertices(cell)[[a, b]]
    t = np.asarray(points, dtype=float).reshape(-1, 1)
    return va + t * (vb - va)


def geometry_map(cell, vertices, ref_points):
    """Physical coordinates of reference points; vertices is (nverts, 2)."""
    cell = CellType(cell)
    vertices = np.asarray(vertices, dtype=float)
    pts = np.atleast_2d(np.asarray(ref_points, dtype=float))
    if cell is CellType.INTERVAL:
        t = pts[:, 0:1]
        return vertices[0] + t * (vertices[1] - vertices[0])
    if cell is CellType.TRIANGLE:
        x, y = pts[:, 0:1], pts[:, 1:2]
        return (vertices[0] + x * (vertices[1] - vertices[0])
                + y * (vertices[2] - vertices[0]))
    x, y = pts[:, 0:1], pts[:, 1:2]
    shape = np.hstack([(1 - x) * (1 - y), x * (1 - y), x * y, (1 - x) * y])
    return shape @ vertices


def geometry_jacobian(cell, vertices, ref_points):
    """Jacobians d(physical)/d(reference) at reference points.

    Returns (npts, 2, dim): constant rows for affine cells, pointwise for
    bilinear quadrilaterals.
    """
    cell = CellType(cell)
    vertices = np.asarray(vertices, dtype=float)
    pts = np.atleast_2d(np.asarray(ref_points, dtype=float))
    npts = len(pts)
    if cell is CellType.INTERVAL:
        J = (vertices[1] - vertices[0]).reshape(1, 2, 1)
        return np.repeat(J, npts, axis=0)
    if cell is CellType.TRIANGLE:
        J = np.stack([vertices[1] - vertices[0],
                      vertices[2] - vertices[0]], axis=1).reshape(1, 2, 2)
        return np.repeat(J, npts, axis=0)
    x, y = pts[:, 0], pts[:, 1]
    dN = np.empty((npts, 4, 2))
    dN[:, 0, 0], dN[:, 0, 1] = -(1 - y), -(1 - x)
    dN[:, 1, 0], dN[:, 1, 1] = (1 - y), -x
    dN[:, 2, 0], dN[:, 2, 1] = y, x
    dN[:, 3, 0], dN[:, 3, 1] = -y, (1 - x)
    return np.einsum("vi,pvd->pid", vertices, dN)
