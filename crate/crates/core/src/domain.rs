//! Uniform finite-difference grids on an interval, a rectangle, or a masked
//! subset of a square lattice.
//!
//! Fields live on interior nodes only. Every domain keeps a padded lattice
//! around its interior so that each stencil neighbour is either an interior
//! node or an exterior slot whose value is implicitly zero.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Values on the interior nodes of a [`Domain`], in node order.
pub type Field = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    Interval,
    Rectangle,
    Masked,
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainKind::Interval => "interval",
            DomainKind::Rectangle => "rectangle",
            DomainKind::Masked => "masked",
        })
    }
}

/// One forward-difference gradient cell.
///
/// `here`, `east` and `north` are node indices, `None` meaning an exterior
/// slot (value zero). `x`/`y` say whether the cell carries that component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Cell {
    pub here: Option<usize>,
    pub east: Option<usize>,
    pub north: Option<usize>,
    pub x: bool,
    pub y: bool,
}

#[derive(Debug, Clone)]
pub struct Domain {
    kind: DomainKind,
    dimension: usize,
    hx: f64,
    hy: f64,
    cols: usize,
    rows: usize,
    lattice: Vec<Option<usize>>,
    coords: Vec<[f64; 2]>,
    boundary: Vec<(usize, f64)>,
    /// Zero-extension cells: used by Dirichlet.
    dirichlet_cells: Vec<Cell>,
    /// One cell per interior node, differences only between interior nodes:
    /// used by Neumann and Robin.
    natural_cells: Vec<Cell>,
}

impl Domain {
    /// Interior nodes `x_i = i h` of `(0, 1)` with `h = 1/(n+1)`.
    pub fn interval(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidResolution(format!(
                "interval needs at least 3 nodes, got {n}"
            )));
        }
        let h = 1.0 / (n as f64 + 1.0);
        let mask = vec![vec![true; n]];
        let mut d = Self::from_lattice(DomainKind::Interval, 1, h, h, &mask);
        d.boundary = vec![(0, 1.0), (n - 1, 1.0)];
        Ok(d)
    }

    /// Tensor grid on `(0, lx) x (0, ly)` with `nx * ny` interior nodes.
    pub fn rectangle(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::InvalidResolution(format!(
                "rectangle needs at least 3x3 nodes, got {nx}x{ny}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::InvalidResolution(format!(
                "rectangle side lengths must be positive, got {lx}x{ly}"
            )));
        }
        let hx = lx / (nx as f64 + 1.0);
        let hy = ly / (ny as f64 + 1.0);
        let mask = vec![vec![true; nx]; ny];
        let mut d = Self::from_lattice(DomainKind::Rectangle, 2, hx, hy, &mask);

        let mut boundary = Vec::with_capacity(2 * (nx + ny));
        for c in 0..nx {
            boundary.push((c, hx));
            boundary.push(((ny - 1) * nx + c, hx));
        }
        for r in 0..ny {
            boundary.push((r * nx, hy));
            boundary.push((r * nx + nx - 1, hy));
        }
        boundary.sort_by_key(|&(i, _)| i);
        d.boundary = boundary;
        Ok(d)
    }

    /// Interior nodes are the `true` cells of `bitmap` (row `r` is the
    /// `y = (r+1) h` line). Everything outside the mask is exterior.
    pub fn masked(bitmap: &[Vec<bool>], h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidResolution(format!("spacing must be positive, got {h}")));
        }
        let rows = bitmap.len();
        let cols = bitmap.first().map_or(0, Vec::len);
        if bitmap.iter().any(|row| row.len() != cols) {
            return Err(Error::InvalidResolution("bitmap rows differ in length".into()));
        }
        if !bitmap.iter().flatten().any(|&b| b) {
            return Err(Error::EmptyDomain("mask has no true cells".into()));
        }
        let at = |r: isize, c: isize| -> bool {
            r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols && bitmap[r as usize][c as usize]
        };
        for r in 0..rows as isize {
            for c in 0..cols as isize {
                if at(r, c) && !(at(r - 1, c) || at(r + 1, c) || at(r, c - 1) || at(r, c + 1)) {
                    return Err(Error::InvalidParameter(format!(
                        "mask cell ({r}, {c}) has no true neighbour"
                    )));
                }
            }
        }
        Ok(Self::from_lattice(DomainKind::Masked, 2, h, h, bitmap))
    }

    /// Reads the plain-text bitmap format: a header line `rows cols h`
    /// followed by `rows` lines of `0`/`1` characters.
    pub fn parse_bitmap(text: &str) -> Result<(Vec<Vec<bool>>, f64)> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("bitmap: missing header".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Parse(format!(
                "bitmap header `{header}`: expected `rows cols h`"
            )));
        }
        let rows: usize = parts[0]
            .parse()
            .map_err(|_| Error::Parse(format!("bitmap rows `{}`", parts[0])))?;
        let cols: usize = parts[1]
            .parse()
            .map_err(|_| Error::Parse(format!("bitmap cols `{}`", parts[1])))?;
        let h: f64 = parts[2]
            .parse()
            .map_err(|_| Error::Parse(format!("bitmap spacing `{}`", parts[2])))?;

        let mut bitmap = Vec::with_capacity(rows);
        for (r, line) in lines.enumerate() {
            if r >= rows {
                return Err(Error::Parse(format!("bitmap has more than {rows} rows")));
            }
            let row = line
                .chars()
                .map(|ch| match ch {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    other => Err(Error::Parse(format!("bitmap row {r}: unexpected `{other}`"))),
                })
                .collect::<Result<Vec<bool>>>()?;
            if row.len() != cols {
                return Err(Error::Parse(format!(
                    "bitmap row {r}: expected {cols} cells, got {}",
                    row.len()
                )));
            }
            bitmap.push(row);
        }
        if bitmap.len() != rows {
            return Err(Error::Parse(format!(
                "bitmap: expected {rows} rows, got {}",
                bitmap.len()
            )));
        }
        Ok((bitmap, h))
    }

    pub fn masked_from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let (bitmap, h) = Self::parse_bitmap(&text)?;
        Self::masked(&bitmap, h)
    }

    fn from_lattice(kind: DomainKind, dimension: usize, hx: f64, hy: f64, mask: &[Vec<bool>]) -> Self {
        let inner_rows = mask.len();
        let inner_cols = mask[0].len();
        let cols = inner_cols + 2;
        let rows = if dimension == 1 { 1 } else { inner_rows + 2 };
        let row_offset = if dimension == 1 { 0 } else { 1 };

        let mut lattice = vec![None; cols * rows];
        let mut coords = Vec::new();
        for (r, line) in mask.iter().enumerate() {
            for (c, &inside) in line.iter().enumerate() {
                if inside {
                    let (pc, pr) = (c + 1, r + row_offset);
                    lattice[pr * cols + pc] = Some(coords.len());
                    let y = if dimension == 1 { 0.0 } else { pr as f64 * hy };
                    coords.push([pc as f64 * hx, y]);
                }
            }
        }

        let node = |c: usize, r: usize| lattice[r * cols + c];
        let two_d = dimension == 2;

        let mut dirichlet_cells = Vec::new();
        let last_row = if two_d { rows - 2 } else { 0 };
        for r in 0..=last_row {
            for c in 0..cols - 1 {
                let here = node(c, r);
                let east = node(c + 1, r);
                let north = if two_d { node(c, r + 1) } else { None };
                if here.is_some() || east.is_some() || north.is_some() {
                    dirichlet_cells.push(Cell {
                        here,
                        east,
                        north,
                        x: true,
                        y: two_d,
                    });
                }
            }
        }

        let mut natural_cells = Vec::with_capacity(coords.len());
        for r in 0..rows {
            for c in 0..cols {
                if let Some(i) = node(c, r) {
                    let east = node(c + 1, r);
                    let north = if two_d { node(c, r + 1) } else { None };
                    natural_cells.push(Cell {
                        here: Some(i),
                        east,
                        north,
                        x: east.is_some(),
                        y: north.is_some(),
                    });
                }
            }
        }

        Self {
            kind,
            dimension,
            hx,
            hy,
            cols,
            rows,
            lattice,
            coords,
            boundary: Vec::new(),
            dirichlet_cells,
            natural_cells,
        }
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Grid spacing along x (equal to [`Self::hy`] unless the rectangle is anisotropic).
    pub fn h(&self) -> f64 {
        self.hx
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Interior node coordinates; `[x, 0.0]` in one dimension.
    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn x(&self, i: usize) -> f64 {
        self.coords[i][0]
    }

    /// Quadrature weight `h^n` carried by every interior node.
    pub fn volume_weight(&self) -> f64 {
        if self.dimension == 1 {
            self.hx
        } else {
            self.hx * self.hy
        }
    }

    /// `(node, surface weight)` pairs; a rectangle corner appears once per edge.
    pub fn boundary_nodes(&self) -> &[(usize, f64)] {
        &self.boundary
    }

    /// Padded lattice shape `(cols, rows)`.
    pub fn lattice_shape(&self) -> (usize, usize) {
        (self.cols, self.rows)
    }

    /// Interior flag for every slot of the padded lattice, row-major.
    pub fn interior_mask(&self) -> Vec<bool> {
        self.lattice.iter().map(Option::is_some).collect()
    }

    /// Interior nodes adjacent along a lattice axis.
    pub fn neighbours(&self, i: usize) -> Vec<usize> {
        let pos = self
            .lattice
            .iter()
            .position(|&slot| slot == Some(i))
            .expect("node index out of range");
        let (c, r) = (pos % self.cols, pos / self.cols);
        let mut out = Vec::with_capacity(4);
        let mut push = |c: usize, r: usize| {
            if let Some(j) = self.lattice[r * self.cols + c] {
                out.push(j);
            }
        };
        push(c - 1, r);
        push(c + 1, r);
        if self.dimension == 2 {
            push(c, r - 1);
            push(c, r + 1);
        }
        out
    }

    pub(crate) fn dirichlet_cells(&self) -> &[Cell] {
        &self.dirichlet_cells
    }

    pub(crate) fn natural_cells(&self) -> &[Cell] {
        &self.natural_cells
    }

    pub fn check_field(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.len() {
            return Err(Error::Shape {
                expected: self.len(),
                got: u.len(),
            });
        }
        Ok(())
    }

    /// Samples `f` at every interior node.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Field {
        self.coords.iter().map(|&[x, y]| f(x, y)).collect()
    }

    /// Discrete measure of the domain.
    pub fn measure(&self) -> f64 {
        self.volume_weight() * self.len() as f64
    }
}

/// Midpoint-rule `sum_i h^n |u_i|^r`.
pub fn integrate_power(d: &Domain, u: &[f64], r: f64) -> Result<f64> {
    d.check_field(u)?;
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("exponent must be positive, got {r}")));
    }
    Ok(d.volume_weight() * u.iter().map(|v| v.abs().powf(r)).sum::<f64>())
}

/// Weighted inner product `sum_i h^n a_i b_i`.
pub fn inner(d: &Domain, a: &[f64], b: &[f64]) -> f64 {
    d.volume_weight() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}
