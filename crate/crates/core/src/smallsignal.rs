//! Linearized state-space model `A = Ms + Cs·(Is + Es·Ys)·Ks` of N droop
//! inverters coupled through the network, its spectrum, and droop-gain
//! sweeps built on top of it.
//!
//! Per-inverter states are `(Δω, Δe_d, Δe_q)`; inputs are `(ΔP, ΔQ)`. The
//! inverter blocks follow from the filtered droop laws
//! `Δω̇ = −ωf·Δω − kp·ωf·ΔP`, `ΔĖ = −ωf·ΔE − kv·ωf·ΔQ` and the chain rule on
//! `e_d = E·cos δ`, `e_q = E·sin δ` with `δ̇ = Δω`.

use nalgebra::{Complex, DMatrix, DVector, Matrix3, Matrix3x2};
use rayon::prelude::*;

use crate::eigen::eigenvalues;
use crate::equilibrium::{BusState, InverterParams, OperatingPoint};
use crate::error::{Error, Result};
use crate::network::{expand_real, BusAdmittanceMatrix};
use crate::scalar::{cabs, Real};
use crate::system::{DroopSystem, ResolvedSystem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverterBlock<T: Real> {
    pub m: Matrix3<T>,
    pub c: Matrix3x2<T>,
}

/// State and input matrices of one inverter linearized at `bus`.
///
/// The input column for `ΔQ` is the same under both reactive-power
/// conventions; the convention enters through the `ΔQ` rows of
/// [`build_is_es`].
pub fn inverter_block<T: Real>(params: &InverterParams<T>, bus: &BusState<T>) -> Result<InverterBlock<T>> {
    let (ed, eq) = (bus.e_d, bus.e_q);
    let e2 = ed * ed + eq * eq;
    if !(e2 > T::zero()) {
        return Err(Error::SingularLinearization);
    }
    let e = e2.sqrt();
    let wf = params.omega_f;
    #[rustfmt::skip]
    let m = Matrix3::new(
        -wf,  T::zero(),          T::zero(),
        -eq,  -wf * ed * ed / e2, -wf * ed * eq / e2,
        ed,   -wf * ed * eq / e2, -wf * eq * eq / e2,
    );
    #[rustfmt::skip]
    let c = Matrix3x2::new(
        -params.kp * wf, T::zero(),
        T::zero(),       -params.kv * wf * ed / e,
        T::zero(),       -params.kv * wf * eq / e,
    );
    Ok(InverterBlock { m, c })
}

/// Block-diagonal `Is` (current coefficients) and `Es` (voltage
/// coefficients) such that `ΔS = Is·Δe + Es·Δi` to first order, with rows
/// ordered `(ΔP_1, ΔQ_1, …)` and columns `(·_d1, ·_q1, …)`.
pub fn build_is_es<T: Real>(op: &OperatingPoint<T>) -> (DMatrix<T>, DMatrix<T>) {
    let n = op.n();
    let sign: T = op.q_convention.sign();
    let mut is = DMatrix::zeros(2 * n, 2 * n);
    let mut es = DMatrix::zeros(2 * n, 2 * n);
    for (k, b) in op.buses.iter().enumerate() {
        let (r, c) = (2 * k, 2 * k);
        is[(r, c)] = b.i_d;
        is[(r, c + 1)] = b.i_q;
        es[(r, c)] = b.e_d;
        es[(r, c + 1)] = b.e_q;
        // convention A: q = e_q·i_d − e_d·i_q
        is[(r + 1, c)] = -sign * b.i_q;
        is[(r + 1, c + 1)] = sign * b.i_d;
        es[(r + 1, c)] = sign * b.e_q;
        es[(r + 1, c + 1)] = -sign * b.e_d;
    }
    (is, es)
}

/// 2n×3n selection of `(Δe_d, Δe_q)` out of `(Δω, Δe_d, Δe_q)` per inverter.
pub fn build_ks<T: Real>(n: usize) -> DMatrix<T> {
    let mut ks = DMatrix::zeros(2 * n, 3 * n);
    for i in 0..n {
        ks[(2 * i, 3 * i + 1)] = T::one();
        ks[(2 * i + 1, 3 * i + 2)] = T::one();
    }
    ks
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallSignalModel<T: Real> {
    pub ms: DMatrix<T>,
    pub cs: DMatrix<T>,
    pub is_mat: DMatrix<T>,
    pub es_mat: DMatrix<T>,
    pub ys: DMatrix<T>,
    pub ks: DMatrix<T>,
    pub a: DMatrix<T>,
}

/// Alias of [`SmallSignalModel::assemble`].
pub fn assemble_a<T: Real>(
    ms: DMatrix<T>,
    cs: DMatrix<T>,
    is_mat: DMatrix<T>,
    es_mat: DMatrix<T>,
    ys: DMatrix<T>,
    ks: DMatrix<T>,
) -> Result<SmallSignalModel<T>> {
    SmallSignalModel::assemble(ms, cs, is_mat, es_mat, ys, ks)
}

impl<T: Real> SmallSignalModel<T> {
    pub fn assemble(
        ms: DMatrix<T>,
        cs: DMatrix<T>,
        is_mat: DMatrix<T>,
        es_mat: DMatrix<T>,
        ys: DMatrix<T>,
        ks: DMatrix<T>,
    ) -> Result<Self> {
        let s = ms.nrows();
        let p = cs.ncols();
        let shape = |name: &str, m: &DMatrix<T>, r: usize, c: usize| {
            if m.nrows() == r && m.ncols() == c {
                Ok(())
            } else {
                Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {r}x{c}",
                    m.nrows(),
                    m.ncols()
                )))
            }
        };
        shape("ms", &ms, s, s)?;
        shape("cs", &cs, s, p)?;
        shape("is", &is_mat, p, p)?;
        shape("es", &es_mat, p, p)?;
        shape("ys", &ys, p, p)?;
        shape("ks", &ks, p, s)?;
        let a = &ms + &cs * (&is_mat + &es_mat * &ys) * &ks;
        Ok(Self { ms, cs, is_mat, es_mat, ys, ks, a })
    }

    pub fn build(
        ybus: &BusAdmittanceMatrix<T>,
        op: &OperatingPoint<T>,
        inverters: &[InverterParams<T>],
    ) -> Result<Self> {
        let n = op.n();
        if inverters.len() != n || ybus.n() != n {
            return Err(Error::Dimension(format!(
                "{} buses, {} inverters, {}x{} admittance matrix",
                n,
                inverters.len(),
                ybus.n(),
                ybus.n()
            )));
        }
        let mut ms = DMatrix::zeros(3 * n, 3 * n);
        let mut cs = DMatrix::zeros(3 * n, 2 * n);
        for (k, (inv, bus)) in inverters.iter().zip(&op.buses).enumerate() {
            let blk = inverter_block(inv, bus)?;
            ms.view_mut((3 * k, 3 * k), (3, 3)).copy_from(&blk.m);
            cs.view_mut((3 * k, 2 * k), (3, 2)).copy_from(&blk.c);
        }
        let (is_mat, es_mat) = build_is_es(op);
        let ys = expand_real(ybus).into_inner();
        Self::assemble(ms, cs, is_mat, es_mat, ys, build_ks(n))
    }

    pub fn eigenvalues(&self) -> Result<Vec<Complex<T>>> {
        eigenvalues(&self.a)
    }
}

/// Uniform-rotation direction `(0, −e_q, e_d)` per inverter, normalized.
pub fn rotation_vector<T: Real>(op: &OperatingPoint<T>) -> DVector<T> {
    let mut v = DVector::zeros(3 * op.n());
    for (k, b) in op.buses.iter().enumerate() {
        v[3 * k + 1] = -b.e_q;
        v[3 * k + 2] = b.e_d;
    }
    let n = v.norm();
    if n > T::zero() {
        v /= n;
    }
    v
}

/// Gauge threshold used when none is given: `1e-6·ωf`.
pub fn default_zero_tol<T: Real>(omega_f: T) -> T {
    T::lit(1e-6) * omega_f
}

/// `(margin, zero_mode_present)`: the largest real part among eigenvalues
/// with `|λ| ≥ zero_tol`, and whether any eigenvalue falls below it.
/// The margin is `-∞` when every eigenvalue is a gauge mode.
pub fn margin_from_eigenvalues<T: Real>(ev: &[Complex<T>], zero_tol: T) -> (T, bool) {
    let zero = ev.iter().any(|l| cabs(*l) < zero_tol);
    let margin = ev
        .iter()
        .filter(|l| cabs(**l) >= zero_tol)
        .fold(T::lit(f64::NEG_INFINITY), |acc, l| acc.max(l.re));
    (margin, zero)
}

pub fn stability_margin<T: Real>(a: &DMatrix<T>, zero_tol: T) -> Result<(T, bool)> {
    if !(zero_tol > T::zero()) {
        return Err(Error::InvalidParameter("zero_tol must be positive".into()));
    }
    Ok(margin_from_eigenvalues(&eigenvalues(a)?, zero_tol))
}

fn is_complex<T: Real>(l: &Complex<T>) -> bool {
    l.im.abs() > T::lit(1e-7) * cabs(*l).max(T::one())
}

/// Number of eigenvalues with positive imaginary part (one per conjugate pair).
pub fn complex_pair_count<T: Real>(ev: &[Complex<T>]) -> usize {
    ev.iter().filter(|l| is_complex(*l) && l.im > T::zero()).count()
}

/// The `k` non-gauge eigenvalues closest to the imaginary axis. A conjugate
/// pair straddling the cut is kept whole, so the result can hold `k + 1`.
pub fn dominant_modes<T: Real>(ev: &[Complex<T>], zero_tol: T, k: usize) -> Vec<Complex<T>> {
    let mut modes: Vec<_> = ev.iter().copied().filter(|l| cabs(*l) >= zero_tol).collect();
    modes.sort_by(|a, b| {
        b.re.partial_cmp(&a.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.im.partial_cmp(&a.im).unwrap_or(std::cmp::Ordering::Equal))
    });
    let mut out: Vec<_> = modes.iter().take(k).copied().collect();
    if let Some(last) = out.last().copied() {
        if is_complex(&last) && out.len() < modes.len() && !out.iter().any(|m| *m == last.conj()) {
            out.push(modes[out.len()]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenReport<T: Real> {
    pub eigenvalues: Vec<Complex<T>>,
    pub margin: T,
    pub zero_mode_present: bool,
    pub zero_mode_vector: DVector<T>,
    pub complex_pairs: usize,
    pub zero_tol: T,
}

impl<T: Real> EigenReport<T> {
    pub fn new(model: &SmallSignalModel<T>, op: &OperatingPoint<T>, zero_tol: T) -> Result<Self> {
        let ev = model.eigenvalues()?;
        let (margin, zero_mode_present) = margin_from_eigenvalues(&ev, zero_tol);
        Ok(Self {
            complex_pairs: complex_pair_count(&ev),
            eigenvalues: ev,
            margin,
            zero_mode_present,
            zero_mode_vector: rotation_vector(op),
            zero_tol,
        })
    }

    pub fn gauge_count(&self) -> usize {
        self.eigenvalues.iter().filter(|l| cabs(**l) < self.zero_tol).count()
    }
}

/// Linearize `system` at its operating point and report the spectrum.
pub fn analyze<T: Real>(system: &DroopSystem<T>) -> Result<(EigenReport<T>, SmallSignalModel<T>, ResolvedSystem<T>)> {
    let (model, resolved) = system.small_signal()?;
    let wf = system.inverters[0].omega_f;
    let report = EigenReport::new(&model, &resolved.op, default_zero_tol(wf))?;
    Ok((report, model, resolved))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid<T> {
    pub kp: Vec<T>,
    pub kv: Vec<T>,
    /// Measurement poles to sweep; empty keeps each inverter's own value.
    pub omega_f: Vec<T>,
    /// Reuse the nominal operating point for every cell instead of
    /// re-resolving it with the cell's gains.
    pub freeze_operating_point: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSummary<T> {
    pub margin: T,
    pub zero_mode: bool,
    pub complex_pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell<T> {
    pub kp: T,
    pub kv: T,
    pub omega_f: T,
    pub outcome: std::result::Result<CellSummary<T>, String>,
}

fn summarize<T: Real>(model: &SmallSignalModel<T>, omega_f: T) -> Result<CellSummary<T>> {
    let ev = model.eigenvalues()?;
    let (margin, zero_mode) = margin_from_eigenvalues(&ev, default_zero_tol(omega_f));
    Ok(CellSummary { margin, zero_mode, complex_pairs: complex_pair_count(&ev) })
}

/// Margin map over a droop-gain grid, row-major over `(kp, kv, omega_f)`.
/// Cells are evaluated in parallel; a failing cell carries its error message.
pub fn sweep_droop<T: Real>(system: &DroopSystem<T>, grid: &SweepGrid<T>) -> Result<Vec<SweepCell<T>>> {
    if grid.kp.is_empty() || grid.kv.is_empty() {
        return Err(Error::InvalidParameter("sweep grids must be nonempty".into()));
    }
    if grid.kp.iter().chain(&grid.kv).chain(&grid.omega_f).any(|v| !(*v >= T::zero())) {
        return Err(Error::InvalidParameter("sweep values must be non-negative".into()));
    }
    let frozen = if grid.freeze_operating_point { Some(system.resolve()?) } else { None };
    let wf_list: Vec<Option<T>> = if grid.omega_f.is_empty() {
        vec![None]
    } else {
        grid.omega_f.iter().map(|w| Some(*w)).collect()
    };
    let mut cells = Vec::new();
    for &kp in &grid.kp {
        for &kv in &grid.kv {
            for &wf in &wf_list {
                cells.push((kp, kv, wf));
            }
        }
    }
    let out = cells
        .par_iter()
        .map(|&(kp, kv, wf)| {
            let sys = system.with_gains(Some(kp), Some(kv), wf);
            let omega_f = sys.inverters[0].omega_f;
            let outcome = match &frozen {
                Some(r) => {
                    let invs: Vec<_> = r
                        .inverters
                        .iter()
                        .map(|i| InverterParams { kp, kv, omega_f: wf.unwrap_or(i.omega_f), ..*i })
                        .collect();
                    SmallSignalModel::build(&r.ybus, &r.op, &invs).and_then(|m| summarize(&m, omega_f))
                }
                None => sys.small_signal().and_then(|(m, _)| summarize(&m, omega_f)),
            };
            SweepCell { kp, kv, omega_f, outcome: outcome.map_err(|e| e.to_string()) }
        })
        .collect();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KpSearch<T> {
    Found {
        kp_max: T,
        margin: T,
        /// More than one crossing of the target was seen on the scan lattice.
        non_monotonic: bool,
    },
    NotFound,
}

/// Largest `kp` in `[kp_lo, kp_hi]` whose margin is at most `target_margin`.
///
/// The interval is scanned on `lattice` evenly spaced points; the last
/// satisfying lattice point is refined against its unsatisfying neighbour
/// by bisection to a relative width of 1e-3.
pub fn find_max_kp<T: Real>(
    system: &DroopSystem<T>,
    kv: T,
    target_margin: T,
    kp_lo: T,
    kp_hi: T,
    lattice: usize,
) -> Result<KpSearch<T>> {
    if !(kp_lo >= T::zero()) || !(kp_hi > kp_lo) || lattice < 2 {
        return Err(Error::InvalidParameter("need 0 <= kp_lo < kp_hi and at least 2 lattice points".into()));
    }
    let margin_at = |kp: T| -> Option<T> {
        let sys = system.with_gains(Some(kp), Some(kv), None);
        let wf = sys.inverters[0].omega_f;
        sys.small_signal()
            .and_then(|(m, _)| summarize(&m, wf))
            .ok()
            .map(|s| s.margin)
    };
    let ok = |m: Option<T>| m.map_or(false, |m| m <= target_margin);

    let step = (kp_hi - kp_lo) / T::lit((lattice - 1) as f64);
    let points: Vec<T> = (0..lattice).map(|i| kp_lo + step * T::lit(i as f64)).collect();
    let margins: Vec<Option<T>> = points.par_iter().map(|&kp| margin_at(kp)).collect();
    let flags: Vec<bool> = margins.iter().map(|m| ok(*m)).collect();
    let crossings = flags.windows(2).filter(|w| w[0] != w[1]).count();
    let non_monotonic = crossings > 1;

    let Some(last_ok) = flags.iter().rposition(|f| *f) else {
        return Ok(KpSearch::NotFound);
    };
    if last_ok == lattice - 1 {
        return Ok(KpSearch::Found { kp_max: kp_hi, margin: margins[last_ok].unwrap(), non_monotonic });
    }
    let (mut lo, mut hi) = (points[last_ok], points[last_ok + 1]);
    let mut lo_margin = margins[last_ok].unwrap();
    while hi - lo > T::lit(1e-3) * hi {
        let mid = (lo + hi) * T::lit(0.5);
        let m = margin_at(mid);
        if ok(m) {
            lo = mid;
            lo_margin = m.unwrap();
        } else {
            hi = mid;
        }
    }
    Ok(KpSearch::Found { kp_max: lo, margin: lo_margin, non_monotonic })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{bus_powers, OperatingPoint, QConvention};
    use crate::network::{build_ybus, LineSpec, LoadSpec, PowerBasis};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    fn params(kp: f64, kv: f64) -> InverterParams<f64> {
        InverterParams { kp, kv, omega_f: 75.4, omega_0: 377.0, e_0: 277.0 }
    }

    fn bus(ed: f64, eq: f64) -> BusState<f64> {
        BusState { e_d: ed, e_q: eq, i_d: 10.0, i_q: -4.0, p: 0.0, q: 0.0 }
    }

    #[test]
    fn zero_droop_block_has_no_input() {
        let blk = inverter_block(&params(0.0, 0.0), &bus(270.0, 12.0)).unwrap();
        assert_eq!(blk.c, Matrix3x2::zeros());
    }

    #[test]
    fn reference_bus_block() {
        let wf = 75.4;
        let blk = inverter_block(&params(5e-4, 5e-4), &bus(277.0, 0.0)).unwrap();
        let m = Matrix3::new(-wf, 0.0, 0.0, 0.0, -wf, 0.0, 277.0, 0.0, 0.0);
        let cm = Matrix3x2::new(-5e-4 * wf, 0.0, 0.0, -5e-4 * wf, 0.0, 0.0);
        assert!((blk.m - m).norm() < 1e-12);
        assert!((blk.c - cm).norm() < 1e-15);
        assert!(inverter_block(&params(1.0, 1.0), &bus(0.0, 0.0)).is_err());
    }

    #[test]
    fn block_row_one_is_frequency_filter() {
        let p = params(3e-4, 7e-4);
        let blk = inverter_block(&p, &bus(250.0, -40.0)).unwrap();
        assert_eq!(blk.m[(0, 0)], -p.omega_f);
        assert_eq!(blk.m[(0, 1)], 0.0);
        assert_eq!(blk.m[(0, 2)], 0.0);
        assert_eq!(blk.c[(0, 0)], -p.kp * p.omega_f);
        assert_eq!(blk.c[(0, 1)], 0.0);
    }

    proptest! {
        #[test]
        fn block_spectrum_is_filter_filter_zero(ed in -400.0f64..400.0, eq in -400.0f64..400.0) {
            prop_assume!(ed.hypot(eq) > 1.0);
            let blk = inverter_block(&params(5e-4, 5e-4), &bus(ed, eq)).unwrap();
            let m = DMatrix::from_row_slice(3, 3, blk.m.transpose().as_slice());
            let mut ev: Vec<f64> = eigenvalues(&m).unwrap().iter().map(|z| z.re).collect();
            ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assert!((ev[0] + 75.4).abs() < 1e-8 * 75.4 + 1e-9 * ed.hypot(eq));
            prop_assert!((ev[1] + 75.4).abs() < 1e-8 * 75.4 + 1e-9 * ed.hypot(eq));
            prop_assert!(ev[2].abs() < 1e-9 * ed.hypot(eq).max(75.4));
        }
    }

    #[test]
    fn is_es_trivial_cases() {
        let mut op = OperatingPoint {
            buses: vec![BusState { e_d: 1.0, e_q: 0.0, i_d: 0.0, i_q: 0.0, p: 0.0, q: 0.0 }],
            omega: 377.0,
            q_convention: QConvention::A,
        };
        let (is, _) = build_is_es(&op);
        assert_eq!(is, DMatrix::zeros(2, 2));
        op.buses[0].i_d = 1.0;
        let (is, es) = build_is_es(&op);
        assert_eq!((is[(0, 0)], is[(0, 1)]), (1.0, 0.0));
        assert_eq!((es[(0, 0)], es[(0, 1)]), (1.0, 0.0));
    }

    fn fd_check(conv: QConvention, seed: u64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let buses: Vec<_> = (0..3)
            .map(|_| {
                let (ed, eq, id, iq) = (
                    rng.gen_range(200.0..300.0),
                    rng.gen_range(-30.0..30.0),
                    rng.gen_range(-20.0..20.0),
                    rng.gen_range(-20.0..20.0),
                );
                let (p, q) = bus_powers(ed, eq, id, iq, conv);
                BusState { e_d: ed, e_q: eq, i_d: id, i_q: iq, p, q }
            })
            .collect();
        let op = OperatingPoint { buses: buses.clone(), omega: 377.0, q_convention: conv };
        let (is, es) = build_is_es(&op);
        let mut errs = Vec::new();
        let de0 = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
        let di0 = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
        for scale in [1e-2, 1e-3] {
            let de = &de0 * scale;
            let di = &di0 * scale;
            let lin = &is * &de + &es * &di;
            let mut err: f64 = 0.0;
            let lin: DVector<f64> = lin;
            for (k, b) in buses.iter().enumerate() {
                let (p, q) = bus_powers(
                    b.e_d + de[2 * k],
                    b.e_q + de[2 * k + 1],
                    b.i_d + di[2 * k],
                    b.i_q + di[2 * k + 1],
                    conv,
                );
                err = err.max((p - b.p - lin[2 * k]).abs()).max((q - b.q - lin[2 * k + 1]).abs());
            }
            // second-order remainder: bounded by |Δe|·|Δi|
            assert!(err <= 4.0 * scale * scale, "err {err} at scale {scale}");
            errs.push(err);
        }
        assert!(errs[1] < errs[0] / 50.0 || errs[0] < 1e-9);
    }

    #[test]
    fn is_es_match_finite_differences() {
        for seed in 0..5 {
            fd_check(QConvention::A, seed);
            fd_check(QConvention::B, seed + 100);
        }
    }

    #[test]
    fn ks_matches_printed_selection() {
        let ks: DMatrix<f64> = build_ks(3);
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(6, 9, &[
            0., 1., 0., 0., 0., 0., 0., 0., 0.,
            0., 0., 1., 0., 0., 0., 0., 0., 0.,
            0., 0., 0., 0., 1., 0., 0., 0., 0.,
            0., 0., 0., 0., 0., 1., 0., 0., 0.,
            0., 0., 0., 0., 0., 0., 0., 1., 0.,
            0., 0., 0., 0., 0., 0., 0., 0., 1.,
        ]);
        assert_eq!(ks, expected);
        assert_eq!(build_ks::<f64>(1), DMatrix::from_row_slice(2, 3, &[0., 1., 0., 0., 0., 1.]));
        for n in 1..6 {
            let k: DMatrix<f64> = build_ks(n);
            assert_eq!(&k * k.transpose(), DMatrix::identity(2 * n, 2 * n));
            for row in k.row_iter() {
                assert_eq!(row.iter().filter(|x| **x == 1.0).count(), 1);
                assert_eq!(row.iter().filter(|x| **x == 0.0).count(), 3 * n - 1);
            }
        }
    }

    #[test]
    fn assemble_checks_dimensions() {
        let z = |r, c| DMatrix::<f64>::zeros(r, c);
        assert!(assemble_a(z(9, 9), z(9, 6), z(6, 6), z(6, 6), z(6, 6), z(6, 9)).is_ok());
        assert!(matches!(
            assemble_a(z(9, 9), z(9, 6), z(6, 6), z(6, 5), z(6, 6), z(6, 9)),
            Err(Error::Dimension(_))
        ));
    }

    fn three_bus(lines_on: bool) -> (BusAdmittanceMatrix<f64>, OperatingPoint<f64>) {
        let lines = if lines_on {
            vec![
                LineSpec::new(1, 2, c(1.5, 3.0)),
                LineSpec::new(1, 3, c(0.25, 1.0)),
                LineSpec::new(2, 3, c(0.5, 4.0)),
            ]
        } else {
            vec![]
        };
        let loads: Vec<_> = [c(11059.0, 6128.0), c(14061.0, 6183.0), c(7025.0, 3462.0)]
            .iter()
            .enumerate()
            .map(|(i, s)| LoadSpec::new(i + 1, *s, 480.0))
            .collect();
        let y = build_ybus(&lines, &loads, 3, PowerBasis::ThreePhaseTotal).unwrap();
        let e = [c(277.6, 0.0), Complex::from_polar(276.5, -0.01), Complex::from_polar(278.1, 0.004)];
        let op = OperatingPoint::from_voltages(&y, &e, 377.0, QConvention::A).unwrap();
        (y, op)
    }

    #[test]
    fn zero_droop_spectrum() {
        let (y, op) = three_bus(true);
        let m = SmallSignalModel::build(&y, &op, &[params(0.0, 0.0); 3]).unwrap();
        assert_eq!(m.a, m.ms);
        let ev = m.eigenvalues().unwrap();
        let filt = ev.iter().filter(|l| (*l + c(75.4, 0.0)).norm() <= 1e-9 * 75.4).count();
        let zero = ev.iter().filter(|l| l.norm() <= 1e-9 * 75.4).count();
        assert_eq!((filt, zero), (6, 3));
    }

    #[test]
    fn no_lines_decouples() {
        let (y, op) = three_bus(false);
        let m = SmallSignalModel::build(&y, &op, &[params(5e-4, 5e-4); 3]).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                if i / 3 != j / 3 {
                    assert_eq!(m.a[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn rotation_is_in_kernel() {
        for conv in [QConvention::A, QConvention::B] {
            let (y, mut op) = three_bus(true);
            op = OperatingPoint::from_voltages(&y, &op.voltages(), op.omega, conv).unwrap();
            let m = SmallSignalModel::build(&y, &op, &[params(5e-4, 5e-4); 3]).unwrap();
            let v = rotation_vector(&op);
            assert!((&m.a * &v).norm() <= 1e-8 * m.a.norm() * v.norm());
        }
    }

    #[test]
    fn margin_examples() {
        let ev = [c(-1.0, 0.0), c(-2.0, 0.0), c(0.0, 0.0)];
        assert_eq!(margin_from_eigenvalues(&ev, 1e-6), (-1.0, true));
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0, 0.0]));
        assert_eq!(stability_margin(&a, 1e-6).unwrap(), (-1.0, true));
        assert!(stability_margin(&a, 0.0).is_err());
    }

    #[test]
    fn dominant_modes_keep_pairs_whole() {
        let ev = [c(-1.0, 0.0), c(-2.0, 3.0), c(-2.0, -3.0), c(-5.0, 0.0), c(0.0, 0.0)];
        let d = dominant_modes(&ev, 1e-6, 2);
        assert_eq!(d.len(), 3);
        assert_eq!(complex_pair_count(&d), 1);
        assert_eq!(dominant_modes(&ev, 1e-6, 3).len(), 3);
    }
}
