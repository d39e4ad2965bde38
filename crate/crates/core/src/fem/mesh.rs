use crate::error::{Error, Result};

/// Strictly increasing nodes on an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    nodes: Vec<f64>,
}

impl Mesh1D {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::InvalidConfig(format!(
                "a 1D mesh needs at least 3 nodes, got {}",
                nodes.len()
            )));
        }
        if nodes.iter().any(|x| !x.is_finite()) || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("1D nodes must be finite and strictly increasing".into()));
        }
        Ok(Self { nodes })
    }

    pub fn uniform(n_nodes: usize) -> Result<Self> {
        if n_nodes < 3 {
            return Err(Error::InvalidConfig(format!(
                "a 1D mesh needs at least 3 nodes, got {n_nodes}"
            )));
        }
        let h = 1.0 / (n_nodes - 1) as f64;
        Self::new((0..n_nodes).map(|i| i as f64 * h).collect())
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn elements(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.nodes
            .windows(2)
            .enumerate()
            .map(|(e, w)| (e, e + 1, w[1] - w[0]))
    }

    pub fn extent(&self) -> f64 {
        self.nodes[self.nodes.len() - 1] - self.nodes[0]
    }
}

/// Structured right-triangle mesh of the unit square.
///
/// Node `(i, j)` sits at `(i h, j h)` and has index `j * n + i`, so row
/// `j = 0` is the bottom edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh2D {
    n_side: usize,
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
}

/// Node indices along one axis-aligned grid line with their arc coordinate.
#[derive(Debug, Clone)]
pub struct NodeLine {
    pub indices: Vec<usize>,
    pub coords: Vec<f64>,
}

impl Mesh2D {
    pub fn unit_square(n_side: usize) -> Result<Self> {
        if n_side < 3 {
            return Err(Error::InvalidConfig(format!(
                "a 2D mesh needs at least 3 nodes per side, got {n_side}"
            )));
        }
        let h = 1.0 / (n_side - 1) as f64;
        let mut nodes = Vec::with_capacity(n_side * n_side);
        for j in 0..n_side {
            for i in 0..n_side {
                nodes.push([i as f64 * h, j as f64 * h]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * (n_side - 1) * (n_side - 1));
        for j in 0..n_side - 1 {
            for i in 0..n_side - 1 {
                let a = j * n_side + i;
                let b = a + 1;
                let c = a + n_side;
                let d = c + 1;
                triangles.push([a, b, d]);
                triangles.push([a, d, c]);
            }
        }
        Ok(Self {
            n_side,
            nodes,
            triangles,
        })
    }

    pub fn n_side(&self) -> usize {
        self.n_side
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.n_side - 1) as f64
    }

    /// Signed area of a triangle; positive for counter-clockwise ordering.
    pub fn signed_area(&self, t: &[usize; 3]) -> f64 {
        let [p0, p1, p2] = t.map(|k| self.nodes[k]);
        0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    }

    /// Bottom edge nodes (`y = 0`).
    pub fn bottom_edge(&self) -> impl Iterator<Item = usize> {
        0..self.n_side
    }

    /// Horizontal lines followed by vertical lines.
    pub fn lines(&self) -> Vec<NodeLine> {
        let n = self.n_side;
        let h = self.spacing();
        let coords: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
        let rows = (0..n).map(|j| NodeLine {
            indices: (0..n).map(|i| j * n + i).collect(),
            coords: coords.clone(),
        });
        let cols = (0..n).map(|i| NodeLine {
            indices: (0..n).map(|j| j * n + i).collect(),
            coords: coords.clone(),
        });
        rows.chain(cols).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mesh {
    Interval(Mesh1D),
    Square(Mesh2D),
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        match self {
            Mesh::Interval(m) => m.n_nodes(),
            Mesh::Square(m) => m.nodes().len(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Mesh::Interval(_) => 1,
            Mesh::Square(_) => 2,
        }
    }

    /// Typical node spacing (mean spacing in 1D).
    pub fn spacing(&self) -> f64 {
        match self {
            Mesh::Interval(m) => m.extent() / (m.n_nodes() - 1) as f64,
            Mesh::Square(m) => m.spacing(),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Mesh::Interval(m) => m.extent(),
            Mesh::Square(_) => std::f64::consts::SQRT_2,
        }
    }

    /// Node coordinates as rows of length `dim`.
    pub fn coordinates(&self) -> Vec<Vec<f64>> {
        match self {
            Mesh::Interval(m) => m.nodes().iter().map(|&x| vec![x]).collect(),
            Mesh::Square(m) => m.nodes().iter().map(|p| p.to_vec()).collect(),
        }
    }

    /// Axis-aligned node lines used for directional statistics.
    pub fn lines(&self) -> Vec<NodeLine> {
        match self {
            Mesh::Interval(m) => vec![NodeLine {
                indices: (0..m.n_nodes()).collect(),
                coords: m.nodes().to_vec(),
            }],
            Mesh::Square(m) => m.lines(),
        }
    }
}
