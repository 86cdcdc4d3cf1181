"""Legacy ASCII VTK export of meshes and vertex fields."""

import numpy as np


def write_vtk(path, mesh, vectors=None, scalars=None, title="killingfem"):
    """Write an unstructured grid of linear triangles.

    Parameters
    ----------
    vectors, scalars : dict, optional
        Name to vertex values, shapes (nv, 2) and (nv,).
    """
    nv = mesh.nvertices
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {nv} double"]
    lines += [f"{x!r} {y!r} 0.0" for x, y in mesh.vertices.tolist()]
    nt = mesh.ntriangles
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines.append(f"CELL_TYPES {nt}")
    lines += ["5"] * nt
    vectors = vectors or {}
    scalars = scalars or {}
    if vectors or scalars:
        lines.append(f"POINT_DATA {nv}")
    for name, vals in vectors.items():
        vals = np.asarray(vals, dtype=float).reshape(nv, 2)
        lines.append(f"VECTORS {name} double")
        lines += [f"{a!r} {b!r} 0.0" for a, b in vals.tolist()]
    for name, vals in scalars.items():
        vals = np.asarray(vals, dtype=float).reshape(nv)
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [repr(v) for v in vals.tolist()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_solution_vtk(path, solution):
    """Vertex values of u_h (vectors ``u``) and lambda_h (scalars ``lambda``)."""
    vspace = solution.vspace
    nv = vspace.mesh.nvertices
    ns = vspace.nscalar
    u = np.column_stack([solution.u[:nv], solution.u[ns:ns + nv]])
    write_vtk(path, vspace.mesh, vectors={"u": u}, scalars={"lambda": solution.lam[:nv]})
