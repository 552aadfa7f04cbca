"""Variational form language over sequences of meshes.

A function space couples one element per mesh of a MeshSequence into a single
product space; Coefficients and Arguments on it are monolithic unknowns whose
per-mesh components are accessed with split().  Measures describe integration
over one mesh's entities intersected with entities of other meshes; forms are
sums of (integrand, measure) pairs.  derivative() computes the Gateaux
derivative with respect to a whole Coefficient in one pass.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import fe
from .mesh import CellType, Mesh

_function_counter = itertools.count()


# ---------------------------------------------------------------------------
# spaces


class MeshSequence:
    """An ordered sequence of meshes making up a product domain."""

    def __init__(self, meshes):
        self.meshes = tuple(meshes)
        if not self.meshes:
            raise ValueError("empty mesh sequence")
        if len({m.id for m in self.meshes}) != len(self.meshes):
            raise ValueError("repeated mesh in sequence")

    def __len__(self):
        return len(self.meshes)

    def __getitem__(self, k):
        return self.meshes[k]

    def cell_sequence(self):
        return CellSequence([m.cell_type for m in self.meshes])


class CellSequence:
    """The per-mesh cell types of a MeshSequence."""

    def __init__(self, cells):
        self.cells = tuple(CellType(c) for c in cells)

    def __len__(self):
        return len(self.cells)

    def __getitem__(self, k):
        return self.cells[k]

    def __eq__(self, other):
        return isinstance(other, CellSequence) and self.cells == other.cells

    def __hash__(self):
        return hash(self.cells)


class MixedElement:
    """One element per component; the cell sequence is derived."""

    def __init__(self, sub_elements):
        self.sub_elements = tuple(sub_elements)
        if not self.sub_elements:
            raise ValueError("empty element list")
        self.cell = CellSequence([e.cell for e in self.sub_elements])

    def __len__(self):
        return len(self.sub_elements)

    def __getitem__(self, k):
        return self.sub_elements[k]


class FunctionSpace:
    """Product space V = V_0 x ... x V_{M-1}, one component per mesh.

    Degrees of freedom are numbered per component (component blocks are
    contiguous) and within a component by mesh entity, so coinciding element
    nodes of neighbouring cells share a degree of freedom.
    """

    def __init__(self, domain, element):
        if isinstance(domain, Mesh):
            domain = MeshSequence([domain])
        if isinstance(element, fe.ReferenceElement):
            element = MixedElement([element])
        if len(domain) != len(element):
            raise ValueError("one element per mesh required")
        for mesh, elem in zip(domain.meshes, element.sub_elements):
            types = set(mesh.cell_types)
            if types != {elem.cell}:
                raise ValueError(
                    f"element on {elem.cell.value} cannot live on mesh "
                    f"{mesh.id} with cells {sorted(t.value for t in types)}")
        self.domain = domain
        self.element = element
        self.dofmaps = []
        self.offsets = [0]
        coords = []
        for mesh, elem in zip(domain.meshes, element.sub_elements):
            dofmap, dof_coords = _number_dofs(mesh, elem)
            self.dofmaps.append(dofmap)
            coords.append(dof_coords)
            self.offsets.append(self.offsets[-1] + len(dof_coords))
        self.dof_coords = np.vstack(coords)

    @property
    def num_components(self):
        return len(self.domain)

    @property
    def num_dofs(self):
        return self.offsets[-1]

    @property
    def meshes(self):
        return self.domain.meshes

    def component_slice(self, k):
        return slice(self.offsets[k], self.offsets[k + 1])

    def component_dofs(self, k, cell):
        """Global dof indices of component k on one of its cells."""
        return self.offsets[k] + self.dofmaps[k][cell]


def _number_dofs(mesh, element):
    """Entity-based dof numbering for one component.

    Vertex nodes share dofs through mesh vertices, edge nodes through facets
    (ordered from the lower-numbered global vertex), interior nodes are
    per-cell.  Returns (dofmap (ncells, num_dofs), dof_coords).
    """
    p = element.degree
    per_edge = p - 1
    vertex_dof = {}
    edge_dofs = {}
    coords = []
    ncells = mesh.num_cells
    scalar_map = np.empty((ncells, element.num_scalar_dofs), dtype=int)

    def fresh(point):
        coords.append(point)
        return len(coords) - 1

    for c in range(ncells):
        ctype = mesh.cell_types[c]
        verts = mesh.cell_vertices[c]
        cell_coords = mesh.cell_coords(c)
        phys = fe.geometry_map(ctype, cell_coords, element.node_points)
        for ln, tag in enumerate(element.node_tags):
            if tag[0] == "vertex":
                gv = verts[tag[1]]
                dof = vertex_dof.get(gv)
                if dof is None:
                    dof = vertex_dof[gv] = fresh(phys[ln])
            elif tag[0] == "edge":
                _, le, idx = tag
                a, b = ctype.local_facets[le]
                ga, gb = verts[a], verts[b]
                facet = mesh.find_facet((ga, gb))
                if ga > gb:  # store edge dofs along ascending vertex ids
                    idx = per_edge - 1 - idx
                slots = edge_dofs.get(facet)
                if slots is None:
                    slots = edge_dofs[facet] = [None] * per_edge
                if slots[idx] is None:
                    slots[idx] = fresh(phys[ln])
                dof = slots[idx]
            else:
                dof = fresh(phys[ln])
            scalar_map[c, ln] = dof

    if element.value_shape:
        blocked = np.empty((ncells, element.num_dofs), dtype=int)
        for comp in range(2):
            blocked[:, comp::2] = 2 * scalar_map + comp
        dof_coords = np.repeat(np.asarray(coords, dtype=float), 2, axis=0)
        return blocked, dof_coords
    return scalar_map, np.asarray(coords, dtype=float)


def function_space(domain, element):
    """Build a FunctionSpace; accepts bare meshes/elements for M = 1."""
    return FunctionSpace(domain, element)


# ---------------------------------------------------------------------------
# expression nodes


class Expr:
    """Base expression node.  Trees are immutable; shape is () or (2,)."""

    operands = ()
    shape = ()

    def _static_key(self):
        return ()

    def key(self):
        cached = getattr(self, "_key", None)
        if cached is None:
            cached = ((type(self).__name__,) + self._static_key()
                      + tuple(o.key() for o in self.operands))
            self._key = cached
        return cached

    def __eq__(self, other):
        return isinstance(other, Expr) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __add__(self, other):
        return Sum(self, as_expr(other))

    def __radd__(self, other):
        return Sum(as_expr(other), self)

    def __sub__(self, other):
        return Sum(self, Product(Constant(-1.0), as_expr(other)))

    def __rsub__(self, other):
        return Sum(as_expr(other), Product(Constant(-1.0), self))

    def __neg__(self):
        return Product(Constant(-1.0), self)

    def __mul__(self, other):
        if isinstance(other, Measure):
            return Form([Integral(self, other)])
        return Product(self, as_expr(other))

    def __rmul__(self, other):
        return Product(as_expr(other), self)

    def __truediv__(self, other):
        if isinstance(other, Expr):
            raise TypeError("division by expressions is not supported")
        return Product(Constant(1.0 / float(other)), self)


def as_expr(value):
    if isinstance(value, Expr):
        return value
    return Constant(float(value))


class Zero(Expr):
    """Structural zero of a given shape, used when pruning derivatives."""

    def __init__(self, shape=()):
        self.shape = tuple(shape)

    def _static_key(self):
        return (self.shape,)

    def __repr__(self):
        return f"Zero(shape={self.shape})"


class Constant(Expr):
    def __init__(self, value):
        self.value = float(value)

    def _static_key(self):
        return (self.value,)

    def __repr__(self):
        return f"Constant({self.value})"


class _Function(Expr):
    """Common behaviour for Coefficient and Argument."""

    def __init__(self, space):
        self.space = space
        self.count = next(_function_counter)
        if space.num_components == 1:
            self.shape = space.element[0].value_shape
        else:
            self.shape = None  # must be split before use in integrands

    def _static_key(self):
        return (self.count,)


class Coefficient(_Function):
    """A function in V with mutable dof values (a single unknown even when V
    is a product over several meshes)."""

    def __init__(self, space):
        super().__init__(space)
        self.values = np.zeros(space.num_dofs)

    def __repr__(self):
        return f"Coefficient#{self.count}"


class Argument(_Function):
    """Test (number 0) or trial (number 1) function."""

    def __init__(self, space, number):
        super().__init__(space)
        if number not in (0, 1):
            raise ValueError("argument number must be 0 (test) or 1 (trial)")
        self.number = number

    def _static_key(self):
        return (self.count, self.number)

    def __repr__(self):
        return f"Argument#{self.count}(number={self.number})"


def TestFunction(space):
    return Argument(space, 0)


def TrialFunction(space):
    return Argument(space, 1)


class Indexed(Expr):
    """Component k of a product-space Coefficient or Argument."""

    def __init__(self, function, component):
        if not isinstance(function, (Coefficient, Argument)):
            raise TypeError("only product-space functions can be indexed")
        if not 0 <= component < function.space.num_components:
            raise IndexError(f"component {component} out of range")
        self.function = function
        self.component = int(component)
        self.operands = (function,)
        self.shape = function.space.element[component].value_shape

    def _static_key(self):
        return (self.component,)

    def __repr__(self):
        return f"{self.function!r}[{self.component}]"


def split(function):
    """The per-mesh components of a product-space function, as a tuple."""
    return tuple(Indexed(function, k)
                 for k in range(function.space.num_components))


class SpatialCoordinate(Expr):
    shape = (2,)

    def __init__(self, mesh):
        self.mesh = mesh

    def _static_key(self):
        return (self.mesh.id,)

    def __repr__(self):
        return f"x({self.mesh.id})"


class FacetNormal(Expr):
    """Outward unit normal of a codim-0 mesh participating through its facets."""

    shape = (2,)

    def __init__(self, mesh):
        self.mesh = mesh

    def _static_key(self):
        return (self.mesh.id,)

    def __repr__(self):
        return f"n({self.mesh.id})"


class CellNormal(Expr):
    """The stored per-cell normal of a codim-1 mesh."""

    shape = (2,)

    def __init__(self, mesh):
        if mesh.dim != 1:
            raise ValueError("CellNormal is defined on codim-1 meshes only")
        self.mesh = mesh

    def _static_key(self):
        return (self.mesh.id,)

    def __repr__(self):
        return f"N({self.mesh.id})"


class Analytic(Expr):
    """A pointwise closed-form scalar evaluated at physical coordinates."""

    def __init__(self, mesh, fn):
        self.mesh = mesh
        self.fn = fn
        self.count = next(_function_counter)

    def _static_key(self):
        return (self.count,)

    def __repr__(self):
        return f"Analytic#{self.count}"


class Grad(Expr):
    """Spatial gradient; appends an axis of length 2 to the shape."""

    def __init__(self, operand):
        if operand.shape is None:
            raise ValueError("split() the function before taking gradients")
        self.operands = (operand,)
        self.shape = tuple(operand.shape) + (2,)

    def __repr__(self):
        return f"grad({self.operands[0]!r})"


class Div(Expr):
    """Divergence; removes the trailing shape axis."""

    def __init__(self, operand):
        if operand.shape is None or len(operand.shape) == 0:
            raise ValueError("div needs a vector operand")
        self.operands = (operand,)
        self.shape = tuple(operand.shape[:-1])

    def __repr__(self):
        return f"div({self.operands[0]!r})"


class Sum(Expr):
    def __init__(self, a, b):
        if a.shape is None or b.shape is None or a.shape != b.shape:
            raise ValueError(f"cannot add shapes {a.shape} and {b.shape}")
        self.operands = (a, b)
        self.shape = a.shape

    def __repr__(self):
        return f"({self.operands[0]!r} + {self.operands[1]!r})"


class Product(Expr):
    """Product where at least one factor is scalar."""

    def __init__(self, a, b):
        if a.shape is None or b.shape is None:
            raise ValueError("split() the function before multiplying")
        if a.shape != () and b.shape != ():
            raise ValueError("at least one product factor must be scalar")
        self.operands = (a, b)
        self.shape = a.shape if a.shape != () else b.shape

    def __repr__(self):
        return f"({self.operands[0]!r} * {self.operands[1]!r})"


class Inner(Expr):
    """Full contraction of two equal-shaped operands."""

    shape = ()

    def __init__(self, a, b):
        if a.shape is None or b.shape is None or a.shape != b.shape:
            raise ValueError(f"cannot contract shapes {a.shape} and {b.shape}")
        self.operands = (a, b)

    def __repr__(self):
        return f"inner({self.operands[0]!r}, {self.operands[1]!r})"


class Restricted(Expr):
    """Interior-facet restriction to the '+' or '-' side."""

    def __init__(self, operand, side):
        if side not in ("+", "-"):
            raise ValueError("restriction side must be '+' or '-'")
        self.operands = (operand,)
        self.side = side
        self.shape = operand.shape

    def _static_key(self):
        return (self.side,)

    def __repr__(self):
        return f"({self.operands[0]!r})('{self.side}')"


def grad(expr):
    return Grad(expr)


def div(expr):
    return Div(expr)


def inner(a, b):
    return Inner(as_expr(a), as_expr(b))


def restrict(expr, side):
    return Restricted(expr, side)


def avg(exprs):
    """Arithmetic mean of expressions living on different meshes."""
    exprs = list(exprs)
    total = exprs[0]
    for e in exprs[1:]:
        total = Sum(total, e)
    return Product(Constant(1.0 / len(exprs)), total)


def jump(exprs, normals):
    """Normal-weighted jump: sum of expr_i * normal_i."""
    exprs, normals = list(exprs), list(normals)
    if len(exprs) != len(normals):
        raise ValueError("one normal per expression required")
    total = Product(exprs[0], normals[0])
    for e, n in zip(exprs[1:], normals[1:]):
        total = Sum(total, Product(e, n))
    return total


# ---------------------------------------------------------------------------
# measures, integrals, forms

_INTEGRAL_TYPES = ("dx", "ds", "dS")
EVERYWHERE = "everywhere"


class Measure:
    """Integration measure over one mesh's entities, optionally intersected
    with entities of other meshes.

    integral_type 'dx' iterates cells, 'ds' exterior facets, 'dS' interior
    facets.  The first (primal) mesh defines the iteration set; every mesh in
    intersect_measures must supply a matching entity for an entity to be
    integrated.  Calling a measure with a subdomain id restricts iteration to
    entities with that marker.
    """

    def __init__(self, integral_type, mesh, subdomain_id=EVERYWHERE,
                 intersect_measures=(), quadrature_degree=None):
        if integral_type not in _INTEGRAL_TYPES:
            raise ValueError(f"unknown integral type {integral_type!r}")
        self.integral_type = integral_type
        self.mesh = mesh
        self.subdomain_id = subdomain_id
        self.quadrature_degree = quadrature_degree
        norm = []
        for other in intersect_measures:
            if not isinstance(other, Measure):
                raise TypeError("intersect_measures must contain Measures")
            if other.intersect_measures:
                raise ValueError("intersected measures cannot nest")
            if other.subdomain_id != EVERYWHERE:
                raise ValueError("subdomain ids belong on the primal measure")
            norm.append((other.integral_type, other.mesh))
        self.intersect_measures = tuple(norm)
        self._validate()

    def _validate(self):
        meshes = [self.mesh] + [m for _, m in self.intersect_measures]
        if len({m.id for m in meshes}) != len(meshes):
            raise ValueError("repeated mesh in intersection measure")
        for itype, mesh in self.participants():
            if mesh.dim == 1 and itype != "dx":
                raise ValueError("codim-1 meshes participate through their "
                                 "cells; use 'dx'")
            if mesh.dim == 2 and itype == "dx" and self.is_facet_measure():
                raise ValueError("codim-0 meshes participate in facet "
                                 "measures through 'ds' or 'dS'")
        if not self.is_facet_measure():
            # pure cell measure: every participant iterates cells of 2D meshes
            for itype, mesh in self.participants():
                if itype != "dx" or mesh.dim != 2:
                    raise ValueError("cell intersection measures take codim-0 "
                                     "meshes only")

    def participants(self):
        """All (integral_type, mesh) pairs, primal first."""
        return [(self.integral_type, self.mesh)] + list(self.intersect_measures)

    def is_facet_measure(self):
        """True if integration runs over codimension-1 physical entities."""
        if self.integral_type in ("ds", "dS"):
            return True
        if self.mesh.dim == 1:
            return True
        return any(t in ("ds", "dS") or m.dim == 1
                   for t, m in self.intersect_measures)

    def __call__(self, subdomain_id):
        m = Measure.__new__(Measure)
        m.integral_type = self.integral_type
        m.mesh = self.mesh
        m.subdomain_id = subdomain_id
        m.quadrature_degree = self.quadrature_degree
        m.intersect_measures = self.intersect_measures
        return m

    def key(self):
        return (self.integral_type, self.mesh.id, self.subdomain_id,
                tuple((t, m.id) for t, m in self.intersect_measures),
                self.quadrature_degree)

    def __rmul__(self, integrand):
        return Form([Integral(as_expr(integrand), self)])

    def __repr__(self):
        parts = [f"{self.integral_type}({self.mesh.id})"]
        parts += [f"{t}({m.id})" for t, m in self.intersect_measures]
        sub = "" if self.subdomain_id == EVERYWHERE else f"[{self.subdomain_id}]"
        return "^".join(parts) + sub


class Integral:
    def __init__(self, integrand, measure):
        if integrand.shape != ():
            raise ValueError("integrands must be scalar")
        self.integrand = integrand
        self.measure = measure

    def __repr__(self):
        return f"Integral({self.integrand!r}, {self.measure!r})"


class Form:
    """A sum of integrals."""

    def __init__(self, integrals):
        self.integrals = tuple(integrals)

    def __add__(self, other):
        if isinstance(other, Form):
            return Form(self.integrals + other.integrals)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, Form):
            return self + (-other)
        return NotImplemented

    def __neg__(self):
        return Form([Integral(Product(Constant(-1.0), i.integrand), i.measure)
                     for i in self.integrals])

    def __rmul__(self, scalar):
        return Form([Integral(Product(Constant(float(scalar)), i.integrand),
                              i.measure) for i in self.integrals])

    def arguments(self):
        """Distinct Arguments in the form, keyed by number."""
        found = {}
        for itg in self.integrals:
            for node in walk(itg.integrand):
                if isinstance(node, Argument):
                    prev = found.setdefault(node.number, node)
                    if prev is not node:
                        raise ValueError("form mixes distinct arguments with "
                                         "the same number")
        return found

    def arity(self):
        args = self.arguments()
        if 1 in args and 0 not in args:
            raise ValueError("form has a trial function but no test function")
        return len(args)

    def coefficients(self):
        seen = []
        for itg in self.integrals:
            for node in walk(itg.integrand):
                if isinstance(node, Coefficient) and node not in seen:
                    seen.append(node)
        return seen

    def __repr__(self):
        return f"Form({len(self.integrals)} integrals)"


def walk(expr):
    """Depth-first iteration over all nodes of an expression."""
    stack = [expr]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(node.operands)


def canonical_key(expr):
    """Order-insensitive structural key: commutative/associative nodes are
    flattened and their children sorted, so trees that differ only by operand
    order compare equal."""
    name = type(expr).__name__
    if isinstance(expr, (Sum, Product)):
        children = []
        stack = list(expr.operands)
        while stack:
            node = stack.pop()
            if type(node) is type(expr):
                stack.extend(node.operands)
            else:
                children.append(canonical_key(node))
        return (name,) + tuple(sorted(children))
    if isinstance(expr, Inner):
        return (name,) + tuple(sorted(canonical_key(o)
                                      for o in expr.operands))
    return ((name,) + expr._static_key()
            + tuple(canonical_key(o) for o in expr.operands))


def form_key(form):
    """Order-insensitive key for whole forms (tests use this for equality)."""
    return tuple(sorted((itg.measure.key(), canonical_key(itg.integrand))
                        for itg in form.integrals))


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class FormDiagnostic:
    integral_index: int
    path: str
    message: str

    def __str__(self):
        return f"integrals[{self.integral_index}] at {self.path}: {self.message}"


def _terminal_meshes(node):
    """Meshes a terminal is attached to (several for unsplit functions)."""
    if isinstance(node, Indexed):
        return [node.function.space.meshes[node.component]]
    if isinstance(node, (Coefficient, Argument)):
        return list(node.space.meshes)
    if isinstance(node, (SpatialCoordinate, FacetNormal, CellNormal, Analytic)):
        return [node.mesh]
    return []


def validate_form(form):
    """Check integrand/measure consistency; returns a list of diagnostics.

    An empty list means the form is valid.  Checks per integral: every
    terminal's mesh participates in the measure; terminals of interior-facet
    participants are restricted; terminals of cell or exterior-facet
    participants are not; normals match their mesh's codimension.
    """
    diagnostics = []

    def visit(node, idx, roles, side, path):
        if isinstance(node, Restricted):
            if side is not None:
                diagnostics.append(FormDiagnostic(idx, path, "nested restriction"))
            visit(node.operands[0], idx, roles,
                  node.side, path + f"/Restricted[{node.side}]")
            return
        here = path + "/" + type(node).__name__
        if isinstance(node, CellNormal) and node.mesh.dim != 1:
            diagnostics.append(FormDiagnostic(
                idx, here, "CellNormal requires a codim-1 mesh"))
        if isinstance(node, FacetNormal) and node.mesh.dim != 2:
            diagnostics.append(FormDiagnostic(
                idx, here, "FacetNormal requires a codim-0 mesh"))
        for mesh in _terminal_meshes(node):
            role = roles.get(mesh.id)
            if role is None:
                diagnostics.append(FormDiagnostic(
                    idx, here, f"mesh {mesh.id} does not participate in the "
                               f"measure"))
            elif role == "dS" and side is None:
                diagnostics.append(FormDiagnostic(
                    idx, here, "missing restriction on interior-facet "
                               "participant"))
            elif role == "ds" and side is not None:
                diagnostics.append(FormDiagnostic(
                    idx, here, "restriction on exterior-facet participant"))
            elif role == "dx" and side is not None:
                diagnostics.append(FormDiagnostic(
                    idx, here, "restriction on cell participant"))
        if isinstance(node, Indexed):
            return  # a component terminal; the parent's other meshes are inert
        for i, child in enumerate(node.operands):
            visit(child, idx, roles, side, here + f".{i}")

    for idx, itg in enumerate(form.integrals):
        roles = {mesh.id: itype for itype, mesh in itg.measure.participants()}
        visit(itg.integrand, idx, roles, None, "")
    return diagnostics


# ---------------------------------------------------------------------------
# differentiation and block splitting


def _is_zero(expr):
    return isinstance(expr, Zero)


def _sum(a, b):
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    return Sum(a, b)


def _product(a, b):
    if _is_zero(a) or _is_zero(b):
        shape = a.shape if a.shape != () else b.shape
        return Zero(shape)
    return Product(a, b)


def _inner(a, b):
    if _is_zero(a) or _is_zero(b):
        return Zero(())
    return Inner(a, b)


def _grad(e):
    if _is_zero(e):
        return Zero(e.shape + (2,))
    return Grad(e)


def _div(e):
    if _is_zero(e):
        return Zero(e.shape[:-1])
    return Div(e)


def _restricted(e, side):
    if _is_zero(e):
        return e
    return Restricted(e, side)


def _linearize(expr, coefficient, direction, component):
    """Forward-mode Gateaux derivative of expr with respect to coefficient."""
    if expr is coefficient:
        if component is not None and coefficient.space.num_components > 1:
            raise ValueError("component derivatives need split() components")
        return direction
    if isinstance(expr, Indexed):
        if expr.function is not coefficient:
            return Zero(expr.shape)
        if component is not None and expr.component != component:
            return Zero(expr.shape)
        return Indexed(direction, expr.component)
    if not expr.operands:
        return Zero(expr.shape or ())
    if isinstance(expr, Sum):
        a, b = expr.operands
        return _sum(_linearize(a, coefficient, direction, component),
                    _linearize(b, coefficient, direction, component))
    if isinstance(expr, Product):
        a, b = expr.operands
        return _sum(_product(_linearize(a, coefficient, direction, component), b),
                    _product(a, _linearize(b, coefficient, direction, component)))
    if isinstance(expr, Inner):
        a, b = expr.operands
        return _sum(_inner(_linearize(a, coefficient, direction, component), b),
                    _inner(a, _linearize(b, coefficient, direction, component)))
    if isinstance(expr, Grad):
        return _grad(_linearize(expr.operands[0], coefficient, direction,
                                component))
    if isinstance(expr, Div):
        return _div(_linearize(expr.operands[0], coefficient, direction,
                               component))
    if isinstance(expr, Restricted):
        return _restricted(_linearize(expr.operands[0], coefficient, direction,
                                      component), expr.side)
    raise TypeError(f"cannot differentiate through {type(expr).__name__}")


def derivative(form, coefficient, component=None):
    """Gateaux derivative of a form with respect to a whole Coefficient.

    The derivative is taken in the direction of a fresh trial Argument on the
    coefficient's (product) space; all components are linearized in one pass.
    Restricting to a single component (used for cross-checks) is available
    via the component argument.  Returns the empty form when the coefficient
    does not appear.
    """
    if 1 in form.arguments():
        raise ValueError("form already has a trial function")
    direction = Argument(coefficient.space, 1)
    integrals = []
    for itg in form.integrals:
        d = _linearize(itg.integrand, coefficient, direction, component)
        if not _is_zero(d):
            integrals.append(Integral(d, itg.measure))
    return Form(integrals)


def _filter_components(expr, targets):
    """Zero out argument components other than the targeted ones.

    targets maps argument number to the component index kept.
    """
    if isinstance(expr, Indexed):
        if isinstance(expr.function, Argument):
            number = expr.function.number
            if number in targets and expr.component != targets[number]:
                return Zero(expr.shape)
        return expr
    if isinstance(expr, Argument):
        if expr.number in targets and expr.space.num_components > 1:
            raise ValueError("split() product-space arguments before "
                             "splitting into blocks")
        return expr
    if not expr.operands:
        return expr
    if isinstance(expr, Sum):
        a, b = (_filter_components(o, targets) for o in expr.operands)
        return _sum(a, b)
    if isinstance(expr, Product):
        a, b = (_filter_components(o, targets) for o in expr.operands)
        return _product(a, b)
    if isinstance(expr, Inner):
        a, b = (_filter_components(o, targets) for o in expr.operands)
        return _inner(a, b)
    if isinstance(expr, Grad):
        return _grad(_filter_components(expr.operands[0], targets))
    if isinstance(expr, Div):
        return _div(_filter_components(expr.operands[0], targets))
    if isinstance(expr, Restricted):
        return _restricted(_filter_components(expr.operands[0], targets),
                           expr.side)
    raise TypeError(f"cannot filter through {type(expr).__name__}")


def split_form_into_blocks(form):
    """Split a form by argument components.

    Bilinear forms map (test_component, trial_component) to a sub-form;
    linear forms map (test_component,) to a sub-form.  Every key is present,
    empty blocks hold empty forms; summing all blocks reproduces the form.
    """
    args = form.arguments()
    if 0 not in args:
        raise ValueError("block splitting needs at least a test function")
    m_test = args[0].space.num_components
    keys = [(r,) for r in range(m_test)]
    if 1 in args:
        m_trial = args[1].space.num_components
        keys = [(r, c) for r in range(m_test) for c in range(m_trial)]
    blocks = {}
    for key in keys:
        targets = {0: key[0]}
        if len(key) == 2:
            targets[1] = key[1]
        integrals = []
        for itg in form.integrals:
            filtered = _filter_components(itg.integrand, targets)
            if not _is_zero(filtered):
                integrals.append(Integral(filtered, itg.measure))
        blocks[key] = Form(integrals)
    return blocks
