//! Problem domains with labelled boundary pieces, and uniform samplers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fem::BoxDomain;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryRole {
    /// Homogeneous Dirichlet data (`Γ_D`, or the whole boundary).
    Dirichlet,
    /// Frictional contact part `Γ_C`.
    Contact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PieceGeometry {
    /// Finite point set with counting measure (1D boundaries).
    Points(Vec<Vec<f64>>),
    /// Union of straight segments in the plane.
    Segments(Vec<([f64; 2], [f64; 2])>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPiece {
    pub id: String,
    pub role: BoundaryRole,
    pub geometry: PieceGeometry,
}

impl BoundaryPiece {
    pub fn measure(&self) -> f64 {
        match &self.geometry {
            PieceGeometry::Points(p) => p.len() as f64,
            PieceGeometry::Segments(s) => s.iter().map(|(a, b)| seg_len(a, b)).sum(),
        }
    }

    /// For point sets, the number of points; sampled pieces have none.
    pub fn point_count(&self) -> Option<usize> {
        match &self.geometry {
            PieceGeometry::Points(p) => Some(p.len()),
            PieceGeometry::Segments(_) => None,
        }
    }
}

fn seg_len(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemDomain {
    pub bounds: BoxDomain,
    pub pieces: Vec<BoundaryPiece>,
}

fn box_edges(b: &BoxDomain) -> [([f64; 2], [f64; 2]); 4] {
    let (x0, y0, x1, y1) = (b.lower[0], b.lower[1], b.upper[0], b.upper[1]);
    // bottom, right, top, left
    [
        ([x0, y0], [x1, y0]),
        ([x1, y0], [x1, y1]),
        ([x0, y1], [x1, y1]),
        ([x0, y0], [x0, y1]),
    ]
}

impl ProblemDomain {
    /// The box with its whole boundary marked Dirichlet.
    pub fn dirichlet(bounds: BoxDomain) -> Self {
        let geometry = if bounds.dim() == 1 {
            PieceGeometry::Points(vec![vec![bounds.lower[0]], vec![bounds.upper[0]]])
        } else {
            PieceGeometry::Segments(box_edges(&bounds).to_vec())
        };
        Self {
            bounds,
            pieces: vec![BoundaryPiece {
                id: "boundary".into(),
                role: BoundaryRole::Dirichlet,
                geometry,
            }],
        }
    }

    /// A 2D box whose right edge `{x = upper} × [lower, upper]` is the
    /// contact part and whose other three edges are Dirichlet.
    pub fn right_edge_contact(bounds: BoxDomain) -> Result<Self> {
        check_dim(2, bounds.dim())?;
        let [bottom, right, top, left] = box_edges(&bounds);
        Ok(Self {
            bounds,
            pieces: vec![
                BoundaryPiece {
                    id: "gamma_c".into(),
                    role: BoundaryRole::Contact,
                    geometry: PieceGeometry::Segments(vec![right]),
                },
                BoundaryPiece {
                    id: "gamma_d".into(),
                    role: BoundaryRole::Dirichlet,
                    geometry: PieceGeometry::Segments(vec![bottom, top, left]),
                },
            ],
        })
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn volume(&self) -> f64 {
        self.bounds.volume()
    }

    pub fn pieces_with(&self, role: BoundaryRole) -> impl Iterator<Item = (usize, &BoundaryPiece)> {
        self.pieces
            .iter()
            .enumerate()
            .filter(move |(_, p)| p.role == role)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Interior,
    Piece(usize),
}

/// `n` points drawn uniformly from `region`. Point-set pieces return their
/// points in order, cycling when `n` exceeds their count.
pub fn sample_uniform<const D: usize, R: Rng + ?Sized>(
    domain: &ProblemDomain,
    region: Region,
    n: usize,
    rng: &mut R,
) -> Result<Vec<[f64; D]>> {
    check_dim(domain.dim(), D)?;
    if n == 0 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    match region {
        Region::Interior => {
            let (lo, hi) = (&domain.bounds.lower, &domain.bounds.upper);
            Ok((0..n)
                .map(|_| std::array::from_fn(|i| rng.gen_range(lo[i]..hi[i])))
                .collect())
        }
        Region::Piece(k) => {
            let piece = domain
                .pieces
                .get(k)
                .ok_or_else(|| Error::Config(format!("no boundary piece {k}")))?;
            match &piece.geometry {
                PieceGeometry::Points(pts) => {
                    for p in pts {
                        check_dim(D, p.len())?;
                    }
                    Ok((0..n)
                        .map(|i| std::array::from_fn(|j| pts[i % pts.len()][j]))
                        .collect())
                }
                PieceGeometry::Segments(segs) => {
                    check_dim(2, D)?;
                    let total: f64 = segs.iter().map(|(a, b)| seg_len(a, b)).sum();
                    Ok((0..n)
                        .map(|_| {
                            let mut s = rng.gen_range(0.0..total);
                            let mut chosen = segs[segs.len() - 1];
                            for seg in segs {
                                let l = seg_len(&seg.0, &seg.1);
                                if s < l {
                                    chosen = *seg;
                                    break;
                                }
                                s -= l;
                            }
                            let t: f64 = rng.gen();
                            let (a, b) = chosen;
                            std::array::from_fn(|i| a[i] + t * (b[i] - a[i]))
                        })
                        .collect())
                }
            }
        }
    }
}
