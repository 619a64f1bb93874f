//! Plant realizations: a generic LTI container, seeded random fixtures and
//! the finite-element diffusion model of the drug-delivery experiment.

use std::fmt::Write as _;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{min_singular_ratio_complex, spectrum};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantRealization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub state_labels: Vec<String>,
    pub input_labels: Vec<String>,
    pub output_labels: Vec<String>,
}

fn labels(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

impl PlantRealization {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, bd: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let (n, m, p) = (a.nrows(), b.ncols(), c.nrows());
        let plant = PlantRealization {
            state_labels: labels("x", n),
            input_labels: labels("u", m),
            output_labels: labels("y", p),
            a,
            b,
            bd,
            c,
            d,
        };
        plant.validate()?;
        Ok(plant)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m, p) = (self.n(), self.m(), self.p());
        let ok = self.a.shape() == (n, n)
            && self.b.nrows() == n
            && self.bd.nrows() == n
            && self.c.ncols() == n
            && self.d.shape() == (p, m);
        if !ok {
            return Err(Error::Dimension {
                context: "PlantRealization",
                detail: format!(
                    "A {:?}, B {:?}, Bd {:?}, C {:?}, D {:?}",
                    self.a.shape(),
                    self.b.shape(),
                    self.bd.shape(),
                    self.c.shape(),
                    self.d.shape()
                ),
            });
        }
        let finite = [&self.a, &self.b, &self.bd, &self.c, &self.d]
            .iter()
            .all(|m| m.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::Argument("plant matrices must be finite".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn p(&self) -> usize {
        self.c.nrows()
    }
    pub fn nd(&self) -> usize {
        self.bd.ncols()
    }

    /// Smallest-to-largest singular value ratio of the Rosenbrock pencil
    /// [[iω − A, B],[C, D]] after scaling B columns and C rows to ‖A‖.
    pub fn rosenbrock_margin(&self, omega: f64) -> f64 {
        let (n, m, p) = (self.n(), self.m(), self.p());
        let scale = self.a.norm().max(1.0);
        let mut pencil = DMatrix::<Complex<f64>>::zeros(n + p, n + m);
        let col_scale: Vec<f64> = (0..m)
            .map(|j| {
                let nb = self.b.column(j).norm();
                if nb > 0.0 {
                    scale / nb
                } else {
                    1.0
                }
            })
            .collect();
        let row_scale: Vec<f64> = (0..p)
            .map(|i| {
                let nc = self.c.row(i).norm();
                if nc > 0.0 {
                    scale / nc
                } else {
                    1.0
                }
            })
            .collect();
        for i in 0..n {
            for j in 0..n {
                pencil[(i, j)] = Complex::new(self.a[(i, j)], 0.0);
            }
            pencil[(i, i)] -= Complex::new(0.0, omega);
            for j in 0..m {
                pencil[(i, n + j)] = Complex::new(self.b[(i, j)] * col_scale[j], 0.0);
            }
        }
        for i in 0..p {
            for j in 0..n {
                pencil[(n + i, j)] = Complex::new(self.c[(i, j)] * row_scale[i], 0.0);
            }
            for j in 0..m {
                pencil[(n + i, n + j)] = Complex::new(self.d[(i, j)] * row_scale[i] * col_scale[j], 0.0);
            }
        }
        min_singular_ratio_complex(&pencil)
    }

    /// No transmission zero at iω (rank test with relative threshold).
    pub fn no_transmission_zero(&self, omega: f64) -> bool {
        self.rosenbrock_margin(omega) > ROSENBROCK_TOL
    }

    /// Plain-text bundle: a header line per matrix ("NAME rows cols")
    /// followed by its rows.
    pub fn to_bundle(&self) -> String {
        let mut out = String::from("# plant bundle v1\n");
        for (name, m) in [("A", &self.a), ("B", &self.b), ("Bd", &self.bd), ("C", &self.c), ("D", &self.d)] {
            let _ = writeln!(out, "{name} {} {}", m.nrows(), m.ncols());
            if m.ncols() == 0 {
                continue;
            }
            for i in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.16e}", m[(i, j)])).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        }
        out
    }

    pub fn from_bundle(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let mut mats = std::collections::HashMap::new();
        while let Some(header) = lines.next() {
            let parts: Vec<&str> = header.split_whitespace().collect();
            let parse_err = |m: String| Error::Config {
                path: "bundle".into(),
                message: m,
            };
            if parts.len() != 3 {
                return Err(parse_err(format!("bad header line '{header}'")));
            }
            let rows: usize = parts[1].parse().map_err(|_| parse_err(format!("bad row count in '{header}'")))?;
            let cols: usize = parts[2].parse().map_err(|_| parse_err(format!("bad column count in '{header}'")))?;
            let mut values = Vec::with_capacity(rows * cols);
            // Rows of a matrix without columns are not written.
            for _ in 0..if cols == 0 { 0 } else { rows } {
                let line = lines.next().ok_or_else(|| parse_err(format!("matrix {} truncated", parts[0])))?;
                for tok in line.split_whitespace() {
                    values.push(tok.parse::<f64>().map_err(|_| parse_err(format!("bad number '{tok}'")))?);
                }
            }
            if values.len() != rows * cols {
                return Err(parse_err(format!("matrix {} has {} values, expected {}", parts[0], values.len(), rows * cols)));
            }
            mats.insert(parts[0].to_string(), DMatrix::from_row_slice(rows, cols, &values));
        }
        let take = |name: &str| {
            mats.get(name).cloned().ok_or_else(|| Error::Config {
                path: format!("bundle.{name}"),
                message: "missing matrix".into(),
            })
        };
        PlantRealization::new(take("A")?, take("B")?, take("Bd")?, take("C")?, take("D")?)
    }
}

pub const ROSENBROCK_TOL: f64 = 1e-9;

/// Seeded random plant with a stable A, controllable/observable pair and no
/// transmission zeros at iω for ω ∈ {0, 1, 2}.
pub fn random_stable_plant(n: usize, m: usize, p: usize, seed: u64) -> Result<PlantRealization> {
    random_stable_plant_at(n, m, p, seed, &[0.0, 1.0, 2.0])
}

pub fn random_stable_plant_at(n: usize, m: usize, p: usize, seed: u64, freqs: &[f64]) -> Result<PlantRealization> {
    if n == 0 || m == 0 || p == 0 {
        return Err(Error::Argument("plant dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..200 {
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let ab = spectrum(&a)?.spectral_abscissa;
        let margin = rng.random_range(0.2..1.0);
        for i in 0..n {
            a[(i, i)] -= ab + margin;
        }
        let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let c = DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
        let plant = PlantRealization::new(a, b, DMatrix::zeros(n, 0), c, DMatrix::zeros(p, m))?;
        if spectrum(&plant.a)?.spectral_abscissa >= 0.0 {
            continue;
        }
        if !pbh_full_rank(&plant.a, &plant.b, false)? || !pbh_full_rank(&plant.a, &plant.c, true)? {
            continue;
        }
        if freqs.iter().all(|&w| plant.no_transmission_zero(w)) {
            return Ok(plant);
        }
    }
    Err(Error::Design(format!("no acceptable random plant for seed {seed}")))
}

/// PBH rank at every eigenvalue; `dual` tests (A, C) observability.
fn pbh_full_rank(a: &DMatrix<f64>, bc: &DMatrix<f64>, dual: bool) -> Result<bool> {
    let n = a.nrows();
    let (a, b) = if dual {
        (a.transpose(), bc.transpose())
    } else {
        (a.clone(), bc.clone())
    };
    let m = b.ncols();
    for z in spectrum(&a)?.eigenvalues {
        let mut pencil = DMatrix::<Complex<f64>>::zeros(n, n + m);
        for i in 0..n {
            for j in 0..n {
                pencil[(i, j)] = Complex::new(-a[(i, j)], 0.0);
            }
            pencil[(i, i)] += z;
            for j in 0..m {
                pencil[(i, n + j)] = Complex::new(b[(i, j)], 0.0);
            }
        }
        if min_singular_ratio_complex(&pencil) < 1e-8 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Uniform square mesh of [−L0, L0]² with bilinear elements.
#[derive(Debug, Clone, PartialEq)]
pub struct FemGrid {
    pub l0: f64,
    pub elements_per_side: usize,
    pub h: f64,
    /// Node coordinates (r, s); node (i, j) has index j·(N+1) + i.
    pub nodes: Vec<(f64, f64)>,
    /// Counter-clockwise node indices of each element.
    pub elements: Vec<[usize; 4]>,
}

impl FemGrid {
    pub fn new(l0: f64, elements_per_side: usize) -> Result<Self> {
        if !(l0 > 0.0) || elements_per_side == 0 {
            return Err(Error::Argument("grid needs a positive half-width and at least one element".into()));
        }
        let n = elements_per_side;
        let h = 2.0 * l0 / n as f64;
        let coord = |i: usize| -l0 + h * i as f64;
        let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                nodes.push((coord(i), coord(j)));
            }
        }
        let mut elements = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let k = j * (n + 1) + i;
                elements.push([k, k + 1, k + n + 2, k + n + 1]);
            }
        }
        Ok(FemGrid {
            l0,
            elements_per_side: n,
            h,
            nodes,
            elements,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Lower-left corner of an element.
    fn origin(&self, e: usize) -> (f64, f64) {
        self.nodes[self.elements[e][0]]
    }

    pub fn mass_matrix(&self) -> DMatrix<f64> {
        let h2 = self.h * self.h / 36.0;
        let me = [[4.0, 2.0, 1.0, 2.0], [2.0, 4.0, 2.0, 1.0], [1.0, 2.0, 4.0, 2.0], [2.0, 1.0, 2.0, 4.0]];
        self.assemble(|a, b| h2 * me[a][b])
    }

    /// Stiffness matrix of the Laplacian (independent of h in 2D).
    pub fn stiffness_matrix(&self) -> DMatrix<f64> {
        let ke = [
            [4.0, -1.0, -2.0, -1.0],
            [-1.0, 4.0, -1.0, -2.0],
            [-2.0, -1.0, 4.0, -1.0],
            [-1.0, -2.0, -1.0, 4.0],
        ];
        self.assemble(|a, b| ke[a][b] / 6.0)
    }

    fn assemble(&self, local: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
        let n = self.node_count();
        let mut m = DMatrix::zeros(n, n);
        for el in &self.elements {
            for a in 0..4 {
                for b in 0..4 {
                    m[(el[a], el[b])] += local(a, b);
                }
            }
        }
        m
    }

    /// ∫ f φ_i for every basis function, 2×2 Gauss per element, with
    /// elements straddling r = 0 split at the discontinuity.
    pub fn load_vector(&self, f: impl Fn(f64, f64) -> f64) -> DVector<f64> {
        let g = 1.0 / 3f64.sqrt();
        let gauss = [-g, g];
        let h = self.h;
        let mut v = DVector::zeros(self.node_count());
        for (e, el) in self.elements.iter().enumerate() {
            let (x0, y0) = self.origin(e);
            let pieces: Vec<(f64, f64)> = if x0 < 0.0 && 0.0 < x0 + h - 1e-12 * h {
                vec![(x0, 0.0), (0.0, x0 + h)]
            } else {
                vec![(x0, x0 + h)]
            };
            for (xa, xb) in pieces {
                let w = 0.5 * (xb - xa) * 0.5 * h;
                for gx in gauss {
                    for gy in gauss {
                        let r = 0.5 * (xa + xb) + 0.5 * (xb - xa) * gx;
                        let s = y0 + 0.5 * h + 0.5 * h * gy;
                        let xi = (r - x0) / h;
                        let et = (s - y0) / h;
                        let phi = [(1.0 - xi) * (1.0 - et), xi * (1.0 - et), xi * et, (1.0 - xi) * et];
                        let fv = w * f(r, s);
                        for a in 0..4 {
                            v[el[a]] += fv * phi[a];
                        }
                    }
                }
            }
        }
        v
    }

    /// Nodal interpolant of a function.
    pub fn interpolate(&self, f: impl Fn(f64, f64) -> f64) -> DVector<f64> {
        DVector::from_iterator(self.node_count(), self.nodes.iter().map(|&(r, s)| f(r, s)))
    }
}

/// Rows ∫r·c, ∫s·c, ∫Π(r)·c, ∫Π(−r)·c against the basis.
pub fn output_operator(grid: &FemGrid) -> DMatrix<f64> {
    let rows = [
        grid.load_vector(|r, _| r),
        grid.load_vector(|_, s| s),
        grid.load_vector(|r, _| if r > 0.0 { 1.0 } else { 0.0 }),
        grid.load_vector(|r, _| if r < 0.0 { 1.0 } else { 0.0 }),
    ];
    let n = grid.node_count();
    DMatrix::from_fn(4, n, |i, j| rows[i][j])
}

/// Spatial density of one actuator source term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceProfile {
    /// exp(−|x − centre|² / width²), centre and width in metres.
    Gaussian { center: [f64; 2], width: f64 },
    /// Σ coeff · r^i s^j over (coeff, i, j) terms.
    Polynomial { terms: Vec<(f64, u32, u32)> },
}

impl SourceProfile {
    pub fn eval(&self, r: f64, s: f64) -> f64 {
        match self {
            SourceProfile::Gaussian { center, width } => {
                let d2 = (r - center[0]).powi(2) + (s - center[1]).powi(2);
                (-d2 / (width * width)).exp()
            }
            SourceProfile::Polynomial { terms } => {
                terms.iter().map(|&(c, i, j)| c * r.powi(i as i32) * s.powi(j as i32)).sum()
            }
        }
    }

    /// The four shipped surrogate actuator profiles for half-width l0.
    pub fn default_set(l0: f64) -> Vec<SourceProfile> {
        let w = 0.5 * l0;
        [[l0, 0.0], [0.0, l0], [-0.3 * l0, 0.0], [0.0, -l0]]
            .into_iter()
            .map(|center| SourceProfile::Gaussian { center, width: w })
            .collect()
    }
}

/// Linearized diffusion model x' = −M⁻¹(D̄K)x + Bu with outputs from
/// [`output_operator`]. `diffusion` is the time-scaled coefficient D̄.
pub fn assemble_diffusion_plant(
    grid: &FemGrid,
    diffusion: f64,
    kappa: f64,
    c0: f64,
    profiles: &[SourceProfile],
) -> Result<PlantRealization> {
    if !(diffusion > 0.0) {
        return Err(Error::Argument("diffusion coefficient must be positive".into()));
    }
    let mass = grid.mass_matrix();
    let chol = mass.clone().cholesky().ok_or(Error::Singular("FEM mass matrix"))?;
    let a = -chol.solve(&(grid.stiffness_matrix() * diffusion));
    let n = grid.node_count();
    let m = profiles.len();
    let mut loads = DMatrix::zeros(n, m);
    for (j, prof) in profiles.iter().enumerate() {
        loads.set_column(j, &grid.load_vector(|r, s| prof.eval(r, s)));
    }
    let b = chol.solve(&loads) * (kappa * c0);
    let c = output_operator(grid);
    let mut plant = PlantRealization::new(a, b, DMatrix::zeros(n, 0), c, DMatrix::zeros(4, m))?;
    plant.state_labels = grid.nodes.iter().map(|(r, s)| format!("c({r:.5},{s:.5})")).collect();
    plant.input_labels = ["I5I1", "I5I3", "I6I2", "I6I4"].iter().take(m).map(|s| s.to_string()).collect();
    while plant.input_labels.len() < m {
        plant.input_labels.push(format!("u{}", plant.input_labels.len() + 1));
    }
    plant.output_labels = vec!["moment_r".into(), "moment_s".into(), "mass_right".into(), "mass_left".into()];
    Ok(plant)
}
