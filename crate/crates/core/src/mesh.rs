//! Triangulations of axis-aligned rectangles with full face topology.
//!
//! The built-in mesher splits each of the n x n cells of a structured grid
//! into two triangles along the south-west to north-east diagonal, which is
//! deterministic, trivially quasi-uniform, and gives mesh size
//! h = sqrt(2) * side / n. Elements are ordered lexicographically by cell
//! (row-major), lower triangle before upper triangle.
//!
//! Face conventions: every face stores the element that first touched it
//! during construction as its owner, which is always the element with the
//! smaller global index. The stored unit normal points from the owner into
//! the neighbor (outward on the boundary), and the face vertex pair is
//! oriented as traversed counterclockwise by the owner.

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceKind {
    Interior,
    Boundary,
}

#[derive(Debug, Clone)]
pub struct Face {
    /// Vertex indices as traversed by the owner (CCW).
    pub vertices: [usize; 2],
    pub kind: FaceKind,
    /// Element with the smaller global index.
    pub owner: usize,
    /// Second incident element, interior faces only.
    pub neighbor: Option<usize>,
    /// Local edge of the face in the owner (edge i runs from local vertex i
    /// to local vertex i+1 mod 3).
    pub owner_edge: u8,
    /// Local edge in the neighbor; the neighbor always traverses the face
    /// in the reverse direction.
    pub neighbor_edge: Option<u8>,
    /// Unit normal from owner to neighbor (outward on the boundary).
    pub normal: [f64; 2],
    /// Face length h_e.
    pub length: f64,
}

impl Face {
    pub fn is_interior(&self) -> bool {
        self.kind == FaceKind::Interior
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    /// Vertex index triples, counterclockwise.
    pub elements: Vec<[usize; 3]>,
    pub faces: Vec<Face>,
    /// Face indices of each element, by local edge.
    pub element_faces: Vec<[usize; 3]>,
    pub interior_faces: Vec<usize>,
    pub boundary_faces: Vec<usize>,
    /// Per-element diameter h_K.
    pub element_diameters: Vec<f64>,
    pub element_areas: Vec<f64>,
    /// h = max over elements of h_K.
    pub mesh_size: f64,
    /// Structured-grid metadata used for point location.
    grid: Option<GridInfo>,
}

#[derive(Debug, Clone, Copy)]
struct GridInfo {
    lower: [f64; 2],
    upper: [f64; 2],
    n: usize,
}

impl Mesh {
    /// Structured triangulation of an axis-aligned rectangle with `n`
    /// subdivisions per side (2 n^2 elements).
    pub fn rectangle(lower: [f64; 2], upper: [f64; 2], n: usize) -> Result<Mesh, Error> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "mesh subdivision count must be at least 1".into(),
            ));
        }
        if !(upper[0] > lower[0] && upper[1] > lower[1]) {
            return Err(Error::InvalidParameter(format!(
                "degenerate rectangle [{}, {}] x [{}, {}]",
                lower[0], upper[0], lower[1], upper[1]
            )));
        }
        let dx = (upper[0] - lower[0]) / n as f64;
        let dy = (upper[1] - lower[1]) / n as f64;

        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([lower[0] + i as f64 * dx, lower[1] + j as f64 * dy]);
            }
        }
        let vid = |i: usize, j: usize| j * (n + 1) + i;

        let mut elements = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let v00 = vid(i, j);
                let v10 = vid(i + 1, j);
                let v11 = vid(i + 1, j + 1);
                let v01 = vid(i, j + 1);
                // Lower and upper triangle of the cell, both CCW.
                elements.push([v00, v10, v11]);
                elements.push([v00, v11, v01]);
            }
        }

        let mut mesh = Mesh::from_elements(vertices, elements)?;
        mesh.grid = Some(GridInfo { lower, upper, n });
        Ok(mesh)
    }

    /// Builds face topology from raw vertex/element lists.
    pub fn from_elements(
        vertices: Vec<[f64; 2]>,
        elements: Vec<[usize; 3]>,
    ) -> Result<Mesh, Error> {
        use std::collections::HashMap;

        let mut element_areas = Vec::with_capacity(elements.len());
        let mut element_diameters = Vec::with_capacity(elements.len());
        for (e, tri) in elements.iter().enumerate() {
            let [a, b, c] = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
            let signed =
                0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]));
            if signed <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "element {e} is not counterclockwise (signed area {signed})"
                )));
            }
            element_areas.push(signed);
            let d = dist(a, b).max(dist(b, c)).max(dist(c, a));
            element_diameters.push(d);
        }
        let mesh_size = element_diameters.iter().cloned().fold(0.0, f64::max);

        let mut faces: Vec<Face> = Vec::new();
        let mut element_faces = vec![[usize::MAX; 3]; elements.len()];
        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        for (e, tri) in elements.iter().enumerate() {
            for le in 0..3usize {
                let a = tri[le];
                let b = tri[(le + 1) % 3];
                let key = (a.min(b), a.max(b));
                match seen.get(&key) {
                    None => {
                        let pa = vertices[a];
                        let pb = vertices[b];
                        let len = dist(pa, pb);
                        // Outward normal of a CCW-traversed edge.
                        let normal = [(pb[1] - pa[1]) / len, (pa[0] - pb[0]) / len];
                        let id = faces.len();
                        faces.push(Face {
                            vertices: [a, b],
                            kind: FaceKind::Boundary,
                            owner: e,
                            neighbor: None,
                            owner_edge: le as u8,
                            neighbor_edge: None,
                            normal,
                            length: len,
                        });
                        seen.insert(key, id);
                        element_faces[e][le] = id;
                    }
                    Some(&id) => {
                        let face = &mut faces[id];
                        if face.neighbor.is_some() {
                            return Err(Error::InvalidParameter(format!(
                                "face {a}-{b} shared by more than two elements"
                            )));
                        }
                        face.kind = FaceKind::Interior;
                        face.neighbor = Some(e);
                        face.neighbor_edge = Some(le as u8);
                        element_faces[e][le] = id;
                    }
                }
            }
        }

        let mut interior_faces = Vec::new();
        let mut boundary_faces = Vec::new();
        for (id, face) in faces.iter().enumerate() {
            match face.kind {
                FaceKind::Interior => interior_faces.push(id),
                FaceKind::Boundary => boundary_faces.push(id),
            }
        }

        Ok(Mesh {
            vertices,
            elements,
            faces,
            element_faces,
            interior_faces,
            boundary_faces,
            element_diameters,
            element_areas,
            mesh_size,
            grid: None,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Disjoint partition of the face set into interior and boundary faces.
    pub fn face_partition(&self) -> (&[usize], &[usize]) {
        (&self.interior_faces, &self.boundary_faces)
    }

    pub fn total_area(&self) -> f64 {
        self.element_areas.iter().sum()
    }

    /// (lower corner, upper corner, subdivisions) of the structured grid,
    /// when the mesh came from the built-in mesher.
    pub fn grid_info(&self) -> Option<([f64; 2], [f64; 2], usize)> {
        self.grid.map(|g| (g.lower, g.upper, g.n))
    }

    /// Vertex coordinates of an element.
    pub fn element_vertices(&self, e: usize) -> [[f64; 2]; 3] {
        let tri = self.elements[e];
        [
            self.vertices[tri[0]],
            self.vertices[tri[1]],
            self.vertices[tri[2]],
        ]
    }

    /// Element containing a physical point, with its reference coordinates.
    /// Points on element boundaries resolve to one of the incident
    /// elements. Only available for the built-in structured mesher.
    pub fn locate(&self, x: [f64; 2]) -> Option<(usize, [f64; 2])> {
        let grid = self.grid?;
        let n = grid.n;
        let sx = (x[0] - grid.lower[0]) / (grid.upper[0] - grid.lower[0]) * n as f64;
        let sy = (x[1] - grid.lower[1]) / (grid.upper[1] - grid.lower[1]) * n as f64;
        if sx < -1e-12 || sy < -1e-12 || sx > n as f64 + 1e-12 || sy > n as f64 + 1e-12 {
            return None;
        }
        let i = (sx.floor() as isize).clamp(0, n as isize - 1) as usize;
        let j = (sy.floor() as isize).clamp(0, n as isize - 1) as usize;
        // Local cell coordinates in [0,1]^2; the diagonal v00-v11 separates
        // the lower triangle (ly <= lx) from the upper one.
        let lx = sx - i as f64;
        let ly = sy - j as f64;
        let cell = j * n + i;
        let (elem, r) = if ly <= lx {
            (2 * cell, [lx - ly, ly])
        } else {
            (2 * cell + 1, [lx, ly - lx])
        };
        Some((elem, r))
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
