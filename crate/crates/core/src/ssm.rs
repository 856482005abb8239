//! Continuous state space parameters, HiPPO initialization, and the
//! four discretization schemes (Euler, bilinear, zero-order hold, and
//! the simplified ZOH used by selective scans).

use crate::error::{Error, Result};
use crate::linalg;

/// Continuous LTI system h'(t) = A h(t) + B x(t), y(t) = C h(t).
/// The feedthrough term is absent by construction.
#[derive(Debug, Clone)]
pub struct ContinuousSsm {
    /// N x N state matrix, row-major.
    pub a: Vec<f64>,
    /// N x 1 input map.
    pub b: Vec<f64>,
    /// 1 x N output map.
    pub c: Vec<f64>,
    pub n: usize,
}

impl ContinuousSsm {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimension("state dimension 0".into()));
        }
        if a.len() != n * n || b.len() != n || c.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "expected A {n}x{n}, B {n}, C {n}"
            )));
        }
        Ok(ContinuousSsm { a, b, c, n })
    }

    pub fn scalar(a: f64, b: f64, c: f64) -> Self {
        ContinuousSsm {
            a: vec![a],
            b: vec![b],
            c: vec![c],
            n: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscretizeMethod {
    Euler,
    Bilinear,
    Zoh,
    ZohApprox,
}

impl DiscretizeMethod {
    pub const ALL: [DiscretizeMethod; 4] = [
        DiscretizeMethod::Euler,
        DiscretizeMethod::Bilinear,
        DiscretizeMethod::Zoh,
        DiscretizeMethod::ZohApprox,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DiscretizeMethod::Euler => "euler",
            DiscretizeMethod::Bilinear => "bilinear",
            DiscretizeMethod::Zoh => "zoh",
            DiscretizeMethod::ZohApprox => "zoh_approx",
        }
    }
}

/// Discrete system h_k = Abar h_{k-1} + Bbar x_k, y_k = Cbar h_k.
/// Cbar always equals C of the source system.
#[derive(Debug, Clone)]
pub struct DiscreteSsm {
    pub abar: Vec<f64>,
    pub bbar: Vec<f64>,
    pub cbar: Vec<f64>,
    pub n: usize,
    pub dt: f64,
    pub method: DiscretizeMethod,
}

impl DiscreteSsm {
    pub fn scalar(abar: f64, bbar: f64, cbar: f64) -> Self {
        DiscreteSsm {
            abar: vec![abar],
            bbar: vec![bbar],
            cbar: vec![cbar],
            n: 1,
            dt: 1.0,
            method: DiscretizeMethod::ZohApprox,
        }
    }
}

/// HiPPO matrix: lower triangular, A[i][j] = -sqrt((2i+1)(2j+1)) below
/// the diagonal, -(i+1) on it, 0 above (0-based indices).
pub fn hippo(n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidDimension("hippo needs n >= 1".into()));
    }
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = if i > j {
                -(((2 * i + 1) * (2 * j + 1)) as f64).sqrt()
            } else if i == j {
                -((i + 1) as f64)
            } else {
                0.0
            };
        }
    }
    Ok(a)
}

/// exp(scale * A) by scaling-and-squaring with a Taylor series core.
pub fn matrix_exp(a: &[f64], n: usize, scale: f64) -> Result<Vec<f64>> {
    if a.iter().any(|v| !v.is_finite()) || !scale.is_finite() {
        return Err(Error::NonFinite("matrix_exp input".into()));
    }
    let mut b: Vec<f64> = a.iter().map(|&v| v * scale).collect();
    let norm = linalg::norm_inf(&b, n);
    let mut squarings = 0u32;
    let mut shrink = norm;
    while shrink > 0.5 {
        shrink /= 2.0;
        squarings += 1;
    }
    let div = (1u64 << squarings) as f64;
    for v in &mut b {
        *v /= div;
    }
    // Taylor sum of exp(B/2^s)
    let mut result = linalg::identity(n);
    let mut term = linalg::identity(n);
    for k in 1..=30 {
        term = linalg::matmul(&term, &b, n, n, n);
        let kf = k as f64;
        for v in &mut term {
            *v /= kf;
        }
        for (r, t) in result.iter_mut().zip(&term) {
            *r += t;
        }
        if linalg::norm_inf(&term, n) < 1e-20 {
            break;
        }
    }
    for _ in 0..squarings {
        result = linalg::matmul(&result, &result, n, n, n);
    }
    Ok(result)
}

/// Discretize a continuous system with step size dt.
pub fn discretize(sys: &ContinuousSsm, dt: f64, method: DiscretizeMethod) -> Result<DiscreteSsm> {
    if dt <= 0.0 {
        return Err(Error::InvalidDimension("dt must be positive".into()));
    }
    let n = sys.n;
    let (abar, bbar) = match method {
        DiscretizeMethod::Euler => {
            let mut abar = sys.a.iter().map(|&v| v * dt).collect::<Vec<_>>();
            for i in 0..n {
                abar[i * n + i] += 1.0;
            }
            let bbar = sys.b.iter().map(|&v| v * dt).collect();
            (abar, bbar)
        }
        DiscretizeMethod::Bilinear => {
            // (I - dt/2 A)^{-1} (I + dt/2 A) and (I - dt/2 A)^{-1} dt B
            let mut minus = linalg::identity(n);
            let mut plus = linalg::identity(n);
            for i in 0..n {
                for j in 0..n {
                    minus[i * n + j] -= 0.5 * dt * sys.a[i * n + j];
                    plus[i * n + j] += 0.5 * dt * sys.a[i * n + j];
                }
            }
            let abar = linalg::solve(&minus, &plus, n, n, "bilinear")?;
            let dtb: Vec<f64> = sys.b.iter().map(|&v| v * dt).collect();
            let bbar = linalg::solve(&minus, &dtb, n, 1, "bilinear")?;
            (abar, bbar)
        }
        DiscretizeMethod::Zoh => {
            let abar = matrix_exp(&sys.a, n, dt)?;
            // Bbar = (dt A)^{-1} (exp(dt A) - I) dt B
            let mut expm1 = abar.clone();
            for i in 0..n {
                expm1[i * n + i] -= 1.0;
            }
            let dta: Vec<f64> = sys.a.iter().map(|&v| v * dt).collect();
            let dtb: Vec<f64> = sys.b.iter().map(|&v| v * dt).collect();
            let rhs = linalg::matvec(&expm1, &dtb, n, n);
            let bbar = linalg::solve(&dta, &rhs, n, 1, "zoh")?;
            (abar, bbar)
        }
        DiscretizeMethod::ZohApprox => {
            let abar = matrix_exp(&sys.a, n, dt)?;
            let bbar = sys.b.iter().map(|&v| v * dt).collect();
            (abar, bbar)
        }
    };
    Ok(DiscreteSsm {
        abar,
        bbar,
        cbar: sys.c.clone(),
        n,
        dt,
        method,
    })
}
