//! Bus admittance matrix from series line impedances and constant-admittance
//! loads, and its real `[[G, -B], [B, G]]` expansion over interleaved d/q
//! components.
//!
//! Bus indices in [`LineSpec`] and [`LoadSpec`] are 1-based; matrix access is
//! 0-based.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{cabs, Real};

/// How apparent-power figures (loads and inverter injections) map onto the
/// per-phase quantities used internally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PowerBasis {
    /// Figures are three-phase totals; divided by three internally.
    #[default]
    ThreePhaseTotal,
    /// Figures are already per phase.
    PerPhase,
}

impl PowerBasis {
    pub fn to_per_phase<T: Real>(self, s: Complex<T>) -> Complex<T> {
        match self {
            PowerBasis::ThreePhaseTotal => s / T::lit(3.0),
            PowerBasis::PerPhase => s,
        }
    }

    pub fn from_per_phase<T: Real>(self, s: Complex<T>) -> Complex<T> {
        match self {
            PowerBasis::ThreePhaseTotal => s * T::lit(3.0),
            PowerBasis::PerPhase => s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSpec<T> {
    pub from_bus: usize,
    pub to_bus: usize,
    /// Series impedance in ohms.
    pub impedance: Complex<T>,
}

impl<T: Real> LineSpec<T> {
    pub fn new(from_bus: usize, to_bus: usize, impedance: Complex<T>) -> Self {
        Self { from_bus, to_bus, impedance }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadSpec<T> {
    pub bus: usize,
    /// P + jQ in volt-amperes.
    pub apparent_power: Complex<T>,
    /// Line-to-line RMS voltage at which the load figure is specified.
    pub rated_voltage_ll: T,
}

impl<T: Real> LoadSpec<T> {
    pub fn new(bus: usize, apparent_power: Complex<T>, rated_voltage_ll: T) -> Self {
        Self { bus, apparent_power, rated_voltage_ll }
    }
}

pub fn line_admittance<T: Real>(z: Complex<T>) -> Result<Complex<T>> {
    if cabs(z) == T::zero() || !z.re.is_finite() || !z.im.is_finite() {
        return Err(Error::SingularElement);
    }
    Ok(Complex::new(T::one(), T::zero()) / z)
}

/// Per-phase admittance of a three-phase-total load figure.
pub fn load_admittance<T: Real>(load: &LoadSpec<T>) -> Result<Complex<T>> {
    load_admittance_with(load, PowerBasis::ThreePhaseTotal)
}

/// Per-phase constant admittance `conj(S_phase) / V_ln²` that draws the
/// specified power at the rated voltage.
pub fn load_admittance_with<T: Real>(load: &LoadSpec<T>, basis: PowerBasis) -> Result<Complex<T>> {
    if !(load.rated_voltage_ll > T::zero()) {
        return Err(Error::InvalidVoltage(load.rated_voltage_ll.as_f64()));
    }
    let v_ln = load.rated_voltage_ll / T::lit(3.0).sqrt();
    let s_phase = basis.to_per_phase(load.apparent_power);
    Ok(s_phase.conj() / (v_ln * v_ln))
}

/// Complex N×N nodal admittance matrix in siemens.
#[derive(Debug, Clone, PartialEq)]
pub struct BusAdmittanceMatrix<T: Real> {
    entries: DMatrix<Complex<T>>,
}

impl<T: Real> BusAdmittanceMatrix<T> {
    pub fn from_entries(entries: DMatrix<Complex<T>>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::Dimension(format!(
                "admittance matrix is {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        Ok(Self { entries })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<Complex<T>> {
        &self.entries
    }

    /// 0-based entry access.
    pub fn get(&self, i: usize, j: usize) -> Complex<T> {
        self.entries[(i, j)]
    }

    /// `Y · e`.
    pub fn mul_vec(&self, e: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        if e.len() != self.n() {
            return Err(Error::Dimension(format!(
                "voltage vector has {} entries, network has {} buses",
                e.len(),
                self.n()
            )));
        }
        let v = DVector::from_column_slice(e);
        Ok((&self.entries * v).as_slice().to_vec())
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..i).all(|j| cabs(self.get(i, j) - self.get(j, i)) <= tol))
    }
}

fn check_bus(index: usize, n: usize) -> Result<()> {
    if index == 0 || index > n {
        Err(Error::BusOutOfRange { index, n })
    } else {
        Ok(())
    }
}

fn validate_lines<T: Real>(lines: &[LineSpec<T>], n: usize) -> Result<()> {
    let mut seen = Vec::with_capacity(lines.len());
    for line in lines {
        check_bus(line.from_bus, n)?;
        check_bus(line.to_bus, n)?;
        if line.from_bus == line.to_bus {
            return Err(Error::SelfLoop(line.from_bus));
        }
        let key = (line.from_bus.min(line.to_bus), line.from_bus.max(line.to_bus));
        if seen.contains(&key) {
            return Err(Error::DuplicateLine(key.0, key.1));
        }
        seen.push(key);
    }
    Ok(())
}

/// Nodal admittance matrix: off-diagonal `-Y_ij`, diagonal the local load
/// admittance plus every incident line admittance.
pub fn build_ybus<T: Real>(
    lines: &[LineSpec<T>],
    loads: &[LoadSpec<T>],
    n: usize,
    basis: PowerBasis,
) -> Result<BusAdmittanceMatrix<T>> {
    let mut load_y = vec![Complex::new(T::zero(), T::zero()); n];
    for load in loads {
        check_bus(load.bus, n)?;
        load_y[load.bus - 1] += load_admittance_with(load, basis)?;
    }
    ybus_from_parts(lines, &load_y)
}

fn ybus_from_parts<T: Real>(
    lines: &[LineSpec<T>],
    load_y: &[Complex<T>],
) -> Result<BusAdmittanceMatrix<T>> {
    let n = load_y.len();
    validate_lines(lines, n)?;
    let mut y = DMatrix::from_element(n, n, Complex::new(T::zero(), T::zero()));
    for (i, yl) in load_y.iter().enumerate() {
        y[(i, i)] += *yl;
    }
    for line in lines {
        let yl = line_admittance(line.impedance)?;
        let (a, b) = (line.from_bus - 1, line.to_bus - 1);
        y[(a, a)] += yl;
        y[(b, b)] += yl;
        y[(a, b)] -= yl;
        y[(b, a)] -= yl;
    }
    BusAdmittanceMatrix::from_entries(y)
}

/// 2N×2N real matrix acting on `(e_d1, e_q1, …, e_dN, e_qN)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealExpandedAdmittance<T: Real> {
    entries: DMatrix<T>,
}

impl<T: Real> RealExpandedAdmittance<T> {
    pub fn entries(&self) -> &DMatrix<T> {
        &self.entries
    }

    pub fn into_inner(self) -> DMatrix<T> {
        self.entries
    }
}

pub fn expand_real<T: Real>(y: &BusAdmittanceMatrix<T>) -> RealExpandedAdmittance<T> {
    let n = y.n();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let Complex { re: g, im: b } = y.get(i, j);
            m[(2 * i, 2 * j)] = g;
            m[(2 * i, 2 * j + 1)] = -b;
            m[(2 * i + 1, 2 * j)] = b;
            m[(2 * i + 1, 2 * j + 1)] = g;
        }
    }
    RealExpandedAdmittance { entries: m }
}

/// `(re_1, im_1, re_2, im_2, …)`.
pub fn interleave<T: Real>(z: &[Complex<T>]) -> DVector<T> {
    DVector::from_iterator(2 * z.len(), z.iter().flat_map(|c| [c.re, c.im]))
}

pub fn deinterleave<T: Real>(v: &DVector<T>) -> Vec<Complex<T>> {
    v.as_slice()
        .chunks_exact(2)
        .map(|p| Complex::new(p[0], p[1]))
        .collect()
}

/// Line and load description of an N-bus network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel<T: Real> {
    n: usize,
    lines: Vec<LineSpec<T>>,
    loads: Vec<LoadSpec<T>>,
    basis: PowerBasis,
}

impl<T: Real> NetworkModel<T> {
    pub fn new(
        n: usize,
        lines: Vec<LineSpec<T>>,
        loads: Vec<LoadSpec<T>>,
        basis: PowerBasis,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("network needs at least one bus".into()));
        }
        validate_lines(&lines, n)?;
        for load in &loads {
            check_bus(load.bus, n)?;
            if load.apparent_power.re < T::zero() {
                return Err(Error::InvalidParameter(format!(
                    "load at bus {} has negative real power",
                    load.bus
                )));
            }
            load_admittance_with(load, basis)?;
        }
        Ok(Self { n, lines, loads, basis })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lines(&self) -> &[LineSpec<T>] {
        &self.lines
    }

    pub fn loads(&self) -> &[LoadSpec<T>] {
        &self.loads
    }

    pub fn basis(&self) -> PowerBasis {
        self.basis
    }

    /// Per-bus total load admittance.
    pub fn load_admittances(&self) -> Vec<Complex<T>> {
        let mut y = vec![Complex::new(T::zero(), T::zero()); self.n];
        for load in &self.loads {
            // validated in `new`
            y[load.bus - 1] += load_admittance_with(load, self.basis).unwrap();
        }
        y
    }

    pub fn ybus(&self) -> BusAdmittanceMatrix<T> {
        ybus_from_parts(&self.lines, &self.load_admittances()).expect("validated network")
    }

    /// Admittance matrix with bus `i`'s load admittance multiplied by `scale[i]`.
    pub fn ybus_with_load_scale(&self, scale: &[T]) -> Result<BusAdmittanceMatrix<T>> {
        if scale.len() != self.n {
            return Err(Error::Dimension(format!(
                "{} load scale factors for {} buses",
                scale.len(),
                self.n
            )));
        }
        let load_y: Vec<_> = self
            .load_admittances()
            .into_iter()
            .zip(scale)
            .map(|(y, s)| y * *s)
            .collect();
        ybus_from_parts(&self.lines, &load_y)
    }

    /// Real power dissipated in loads and line resistances for bus voltages `e`.
    pub fn dissipation(&self, e: &[Complex<T>], load_scale: &[T]) -> T {
        let loads = self
            .load_admittances()
            .iter()
            .zip(e)
            .zip(load_scale)
            .fold(T::zero(), |acc, ((y, v), s)| acc + y.re * *s * v.norm_sqr());
        let lines = self.lines.iter().fold(T::zero(), |acc, l| {
            let yl = line_admittance(l.impedance).unwrap();
            let i = (e[l.from_bus - 1] - e[l.to_bus - 1]) * yl;
            acc + l.impedance.re * i.norm_sqr()
        });
        loads + lines
    }
}
