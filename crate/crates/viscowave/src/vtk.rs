//! Legacy ASCII VTK output (unstructured grid, cell type 5) for inspecting
//! meshes and displacement fields.

use crate::fespace::FunctionSpace;
use crate::mesh::Mesh;
use std::io::{self, Write};
use std::path::Path;

fn write_header<W: Write>(out: &mut W, title: &str, mesh: &Mesh) -> io::Result<()> {
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "{title}")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", mesh.nodes.len())?;
    for node in &mesh.nodes {
        writeln!(out, "{:.17e} {:.17e} 0.0", node.x, node.y)?;
    }
    writeln!(out, "CELLS {} {}", mesh.triangles.len(), 4 * mesh.triangles.len())?;
    for tri in &mesh.triangles {
        writeln!(out, "3 {} {} {}", tri.vertices[0], tri.vertices[1], tri.vertices[2])?;
    }
    writeln!(out, "CELL_TYPES {}", mesh.triangles.len())?;
    for _ in &mesh.triangles {
        writeln!(out, "5")?;
    }
    Ok(())
}

/// Write the mesh alone.
pub fn write_mesh<P: AsRef<Path>>(mesh: &Mesh, path: P) -> io::Result<()> {
    let mut out = io::BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut out, "viscowave mesh", mesh)
}

/// Write the mesh with one scalar point field. `values` is a full dof
/// vector; only the vertex dofs (the first `nodes.len()` entries) are
/// emitted, which for P2 drops the midpoint values.
pub fn write_scalar_field<P: AsRef<Path>>(
    space: &FunctionSpace,
    values: &[f64],
    name: &str,
    path: P,
) -> io::Result<()> {
    let mesh = space.mesh();
    assert_eq!(values.len(), space.num_dofs());
    let mut out = io::BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut out, "viscowave field", mesh)?;
    writeln!(out, "POINT_DATA {}", mesh.nodes.len())?;
    writeln!(out, "SCALARS {name} double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for v in values.iter().take(mesh.nodes.len()) {
        writeln!(out, "{v:.17e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::build_space;
    use crate::mesh::{unit_square_mesh, Diagonal};

    #[test]
    fn mesh_file_structure() {
        let dir = std::env::temp_dir().join("viscowave_vtk_test");
        std::fs::create_dir_all(&dir).unwrap();
        let mesh = unit_square_mesh(2, Diagonal::Right);
        let path = dir.join("mesh.vtk");
        write_mesh(&mesh, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("POINTS 9 double"));
        assert!(text.contains("CELLS 8 32"));
        assert!(text.lines().filter(|l| *l == "5").count() == 8);

        let space = build_space(mesh, 2).unwrap();
        let field = space.interpolate(|x, y| x + y);
        let fpath = dir.join("field.vtk");
        write_scalar_field(&space, &field, "displacement", &fpath).unwrap();
        let text = std::fs::read_to_string(&fpath).unwrap();
        assert!(text.contains("POINT_DATA 9"));
        assert!(text.contains("SCALARS displacement double 1"));
    }
}
