//! Exact master-equation integration for a handful of molecules in a
//! truncated Fock space. Used as ground truth for the moment equations.
//!
//! Basis index is `n·2^N + bits`, where bit `j` set means molecule `j` is
//! excited. Operators are assembled densely and stored as coordinate lists;
//! the density matrix is kept column-major, matching `nalgebra`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::cumulant::{CumulantState, MomentTrace, SolverConfig, ThirdMoments};
use crate::error::{Error, Result};
use crate::model::{energy_density_from_inversion, pulse_envelope, ModelParams, PulseParams, Rates};
use crate::ode::{integrate_dense, OdeSystem};

/// Largest Hilbert-space dimension accepted.
pub const DIMENSION_CAP: usize = 64;
/// Largest molecule count accepted.
pub const MAX_MOLECULES: usize = 3;
/// Population allowed in the highest Fock level.
pub const TRUNCATION_LIMIT: f64 = 1e-6;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub n_molecules: usize,
    /// Highest Fock level kept.
    pub fock_cutoff: usize,
    /// `n_molecules` overrides `params.n_molecules`.
    pub params: ModelParams,
    pub pulse: PulseParams,
    pub solver: SolverConfig,
    /// Photons in the initial Fock state (molecules start in `|↓⟩`).
    pub initial_photons: usize,
    /// Check the smallest eigenvalue of ρ at every output time.
    pub check_positivity: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_molecules: 1,
            fock_cutoff: 8,
            params: ModelParams::default(),
            pulse: PulseParams::default(),
            solver: SolverConfig::default(),
            initial_photons: 0,
            check_positivity: false,
        }
    }
}

impl OracleConfig {
    pub fn dimension(&self) -> usize {
        (self.fock_cutoff + 1) << self.n_molecules.min(16)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_molecules == 0 || self.n_molecules > MAX_MOLECULES {
            return Err(Error::Config(format!("oracle supports 1..={MAX_MOLECULES} molecules, got {}", self.n_molecules)));
        }
        if self.fock_cutoff == 0 {
            return Err(Error::Config("fock_cutoff must be at least 1".into()));
        }
        let dim = self.dimension();
        if dim > DIMENSION_CAP {
            return Err(Error::DimensionCap { dim, cap: DIMENSION_CAP });
        }
        if self.initial_photons > self.fock_cutoff {
            return Err(Error::Config("initial_photons exceeds fock_cutoff".into()));
        }
        self.model().validate()?;
        self.pulse.validate()?;
        self.solver.validate()
    }

    /// Model parameters with `N` set to the oracle's molecule count.
    pub fn model(&self) -> ModelParams {
        self.params.with_n(self.n_molecules as f64)
    }
}

/// Sparse operator as a coordinate list.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOp {
    dim: usize,
    entries: Vec<(usize, usize, Complex64)>,
}

impl SparseOp {
    pub fn from_dense(m: &DMatrix<Complex64>) -> Self {
        let mut entries = Vec::new();
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                let v = m[(r, c)];
                if v != ZERO {
                    entries.push((r, c, v));
                }
            }
        }
        Self { dim: m.nrows(), entries }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// `Tr(O X)` for a column-major `X`.
    pub fn trace_with(&self, x: &[Complex64]) -> Complex64 {
        let d = self.dim;
        self.entries.iter().map(|&(r, c, v)| v * x[r * d + c]).sum()
    }

    /// `out += s · O X`.
    fn left_mul_add(&self, x: &[Complex64], out: &mut [Complex64], s: Complex64) {
        let d = self.dim;
        for &(r, k, v) in &self.entries {
            let sv = s * v;
            for c in 0..d {
                out[c * d + r] += sv * x[c * d + k];
            }
        }
    }

    /// `out += s · X O†`.
    fn right_mul_adjoint_add(&self, x: &[Complex64], out: &mut [Complex64], s: Complex64) {
        let d = self.dim;
        for &(c, k, v) in &self.entries {
            let sv = s * v.conj();
            let (src, dst) = (k * d, c * d);
            for r in 0..d {
                out[dst + r] += sv * x[src + r];
            }
        }
    }
}

/// A density matrix (or any operator on the oracle space).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub entries: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.trace()
    }

    /// `max |ρ - ρ†|`.
    pub fn hermiticity_error(&self) -> f64 {
        let a = &self.entries;
        let mut worst: f64 = 0.0;
        for c in 0..a.ncols() {
            for r in 0..a.nrows() {
                worst = worst.max((a[(r, c)] - a[(c, r)].conj()).norm());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.entries + self.entries.adjoint()) * Complex64::new(0.5, 0.0);
        h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > 1e-10 {
            return Err(Error::Domain(format!("density matrix not Hermitian ({herm:e})")));
        }
        let tr = (self.trace() - ONE).norm();
        if tr > 1e-8 {
            return Err(Error::Domain(format!("density matrix trace off by {tr:e}")));
        }
        let ev = self.min_eigenvalue();
        if ev < -1e-8 {
            return Err(Error::Domain(format!("density matrix has eigenvalue {ev:e}")));
        }
        Ok(())
    }
}

/// Operators of the truncated cavity plus `N` two-level molecules.
#[derive(Debug, Clone)]
pub struct OracleSpace {
    pub n_molecules: usize,
    pub fock_cutoff: usize,
    pub dim: usize,
    a: DMatrix<Complex64>,
    sigma_minus: Vec<DMatrix<Complex64>>,
    moment_ops: Vec<SparseOp>,
    third_ops: Vec<SparseOp>,
    top_level: SparseOp,
}

/// Order of complex moment operators, see [`OracleSpace::expectations`].
const MOMENT_NAMES: [&str; 15] = ["a", "x", "y", "z", "n", "aa", "ax", "ay", "az", "xx", "yy", "zz", "xy", "xz", "yz"];

impl OracleSpace {
    pub fn new(n_molecules: usize, fock_cutoff: usize) -> Result<Self> {
        if n_molecules == 0 || n_molecules > MAX_MOLECULES {
            return Err(Error::Config(format!("oracle supports 1..={MAX_MOLECULES} molecules")));
        }
        let spins = 1usize << n_molecules;
        let dim = (fock_cutoff + 1) * spins;
        if dim > DIMENSION_CAP {
            return Err(Error::DimensionCap { dim, cap: DIMENSION_CAP });
        }
        let mut a = DMatrix::zeros(dim, dim);
        for n in 1..=fock_cutoff {
            for b in 0..spins {
                a[((n - 1) * spins + b, n * spins + b)] = Complex64::new((n as f64).sqrt(), 0.0);
            }
        }
        let sigma_minus: Vec<_> = (0..n_molecules)
            .map(|j| {
                let mut s = DMatrix::zeros(dim, dim);
                for n in 0..=fock_cutoff {
                    for b in 0..spins {
                        if b & (1 << j) != 0 {
                            s[(n * spins + (b & !(1 << j)), n * spins + b)] = ONE;
                        }
                    }
                }
                s
            })
            .collect();
        let mut top = DMatrix::zeros(dim, dim);
        for b in 0..spins {
            top[(fock_cutoff * spins + b, fock_cutoff * spins + b)] = ONE;
        }

        let mut space = Self {
            n_molecules,
            fock_cutoff,
            dim,
            a,
            sigma_minus,
            moment_ops: Vec::new(),
            third_ops: Vec::new(),
            top_level: SparseOp::from_dense(&top),
        };
        space.build_observables();
        Ok(space)
    }

    fn pauli(&self, j: usize, axis: char) -> DMatrix<Complex64> {
        let sm = &self.sigma_minus[j];
        let sp = sm.adjoint();
        match axis {
            'x' => &sp + sm,
            'y' => (sm - &sp) * I,
            'z' => &sp * sm * Complex64::new(2.0, 0.0) - DMatrix::identity(self.dim, self.dim),
            _ => unreachable!(),
        }
    }

    /// Average of `f(j)` over molecules.
    fn single_average(&self, f: impl Fn(usize) -> DMatrix<Complex64>) -> DMatrix<Complex64> {
        let n = self.n_molecules;
        let mut acc = DMatrix::zeros(self.dim, self.dim);
        for j in 0..n {
            acc += f(j);
        }
        acc / Complex64::new(n as f64, 0.0)
    }

    /// Symmetrised average of `σ^α_i σ^β_j` over ordered pairs `i ≠ j`.
    fn pair_average(&self, alpha: char, beta: char) -> DMatrix<Complex64> {
        let n = self.n_molecules;
        let mut acc = DMatrix::zeros(self.dim, self.dim);
        if n < 2 {
            return acc;
        }
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    acc += self.pauli(i, alpha) * self.pauli(j, beta);
                    acc += self.pauli(i, beta) * self.pauli(j, alpha);
                }
            }
        }
        acc / Complex64::new((2 * n * (n - 1)) as f64, 0.0)
    }

    fn build_observables(&mut self) {
        let a = self.a.clone();
        let ad = a.adjoint();
        let num = &ad * &a;
        let aa = &a * &a;
        let single = |s: &Self, axis: char| s.single_average(|j| s.pauli(j, axis));
        let (sx, sy, sz) = (single(self, 'x'), single(self, 'y'), single(self, 'z'));
        let pair = |p: char, q: char| self.pair_average(p, q);
        let moments = vec![
            a.clone(),
            sx.clone(),
            sy.clone(),
            sz.clone(),
            num.clone(),
            aa.clone(),
            &a * &sx,
            &a * &sy,
            &a * &sz,
            pair('x', 'x'),
            pair('y', 'y'),
            pair('z', 'z'),
            pair('x', 'y'),
            pair('x', 'z'),
            pair('y', 'z'),
        ];
        let third = vec![
            &aa * &sx,
            &aa * &sy,
            &aa * &sz,
            &num * &sx,
            &num * &sy,
            &num * &sz,
            &a * pair('x', 'x'),
            &a * pair('y', 'y'),
            &a * pair('z', 'z'),
            &a * pair('x', 'y'),
            &a * pair('x', 'z'),
            &a * pair('y', 'z'),
        ];
        self.moment_ops = moments.iter().map(SparseOp::from_dense).collect();
        self.third_ops = third.iter().map(SparseOp::from_dense).collect();
    }

    /// Hamiltonian without drive, and the drive operator `i(a† - a)`.
    fn hamiltonian(&self, r: &Rates) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
        let a = &self.a;
        let ad = a.adjoint();
        let mut h = &ad * a * Complex64::new(r.delta_c, 0.0);
        for (j, sm) in self.sigma_minus.iter().enumerate() {
            h += self.pauli(j, 'z') * Complex64::new(0.5 * r.delta_a, 0.0);
            h += (&ad * sm + a * sm.adjoint()) * Complex64::new(r.g, 0.0);
        }
        let drive = (&ad - a) * I;
        (h, drive)
    }

    fn jump_operators(&self, r: &Rates) -> Vec<DMatrix<Complex64>> {
        let mut jumps = Vec::new();
        let push = |jumps: &mut Vec<_>, rate: f64, op: DMatrix<Complex64>| {
            if rate > 0.0 {
                jumps.push(op * Complex64::new(rate.sqrt(), 0.0));
            }
        };
        push(&mut jumps, r.kappa, self.a.clone());
        for j in 0..self.n_molecules {
            push(&mut jumps, r.gamma_z, self.pauli(j, 'z'));
            push(&mut jumps, r.gamma_minus, self.sigma_minus[j].clone());
        }
        jumps
    }

    /// Generator of the master equation for the given rates.
    pub fn lindbladian(&self, r: &Rates) -> Lindbladian {
        let (h, drive) = self.hamiltonian(r);
        let jumps = self.jump_operators(r);
        let mut h_eff = h;
        for l in &jumps {
            h_eff -= l.adjoint() * l * Complex64::new(0.0, 0.5);
        }
        Lindbladian {
            dim: self.dim,
            h_eff: SparseOp::from_dense(&h_eff),
            drive: SparseOp::from_dense(&drive),
            jumps: jumps.iter().map(SparseOp::from_dense).collect(),
        }
    }

    /// Vacuum-ground product state with `photons` in the cavity.
    pub fn initial_state(&self, photons: usize) -> DensityMatrix {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        let idx = photons << self.n_molecules;
        m[(idx, idx)] = ONE;
        DensityMatrix { entries: m }
    }

    /// Average over all permutations of the molecules, `Σ_P P X P† / N!`.
    pub fn symmetrize(&self, x: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let n = self.n_molecules;
        let spins = 1usize << n;
        let perms = permutations(n);
        let mut acc = DMatrix::zeros(self.dim, self.dim);
        for perm in &perms {
            let map = |idx: usize| {
                let (photons, bits) = (idx / spins, idx % spins);
                let mut out = 0;
                for (j, &pj) in perm.iter().enumerate() {
                    if bits & (1 << j) != 0 {
                        out |= 1 << pj;
                    }
                }
                photons * spins + out
            };
            for c in 0..self.dim {
                for r in 0..self.dim {
                    acc[(map(r), map(c))] += x[(r, c)];
                }
            }
        }
        acc / Complex64::new(perms.len() as f64, 0.0)
    }

    fn expect_all(ops: &[SparseOp], x: &[Complex64]) -> Vec<Complex64> {
        ops.iter().map(|op| op.trace_with(x)).collect()
    }

    /// First and second moments `Tr(O X)`. Pair moments are zero for a
    /// single molecule.
    pub fn expectations(&self, x: &DMatrix<Complex64>) -> CumulantState {
        self.expectations_slice(x.as_slice())
    }

    fn expectations_slice(&self, x: &[Complex64]) -> CumulantState {
        let v = Self::expect_all(&self.moment_ops, x);
        debug_assert_eq!(v.len(), MOMENT_NAMES.len());
        CumulantState {
            a: v[0],
            x: v[1].re,
            y: v[2].re,
            z: v[3].re,
            n: v[4].re,
            aa: v[5],
            ax: v[6],
            ay: v[7],
            az: v[8],
            xx: v[9].re,
            yy: v[10].re,
            zz: v[11].re,
            xy: v[12].re,
            xz: v[13].re,
            yz: v[14].re,
        }
    }

    /// Exact third moments needed by the moment equations.
    pub fn third_moments(&self, x: &DMatrix<Complex64>) -> ThirdMoments {
        let v = Self::expect_all(&self.third_ops, x.as_slice());
        ThirdMoments {
            aax: v[0],
            aay: v[1],
            aaz: v[2],
            adag_ax: v[3],
            adag_ay: v[4],
            adag_az: v[5],
            axx: v[6],
            ayy: v[7],
            azz: v[8],
            axy: v[9],
            axz: v[10],
            ayz: v[11],
        }
    }

    /// Population of the highest Fock level.
    pub fn top_fock_population(&self, x: &[Complex64]) -> f64 {
        self.top_level.trace_with(x).re
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// `dρ/dt = -i(H_eff ρ - ρ H_eff†) + Σ L ρ L†`, `H_eff = H - (i/2)Σ L†L`.
#[derive(Debug, Clone)]
pub struct Lindbladian {
    dim: usize,
    h_eff: SparseOp,
    drive: SparseOp,
    jumps: Vec<SparseOp>,
}

impl Lindbladian {
    /// Apply to a column-major operator with drive amplitude `eta`.
    pub fn apply(&self, rho: &[Complex64], eta: f64, out: &mut [Complex64], scratch: &mut [Complex64]) {
        out.fill(ZERO);
        self.h_eff.left_mul_add(rho, out, -I);
        self.h_eff.right_mul_adjoint_add(rho, out, I);
        if eta != 0.0 {
            let e = Complex64::new(0.0, -eta);
            self.drive.left_mul_add(rho, out, e);
            self.drive.right_mul_adjoint_add(rho, out, -e);
        }
        for l in &self.jumps {
            scratch.fill(ZERO);
            l.left_mul_add(rho, scratch, ONE);
            l.right_mul_adjoint_add(scratch, out, ONE);
        }
    }

    pub fn apply_matrix(&self, rho: &DMatrix<Complex64>, eta: f64) -> DMatrix<Complex64> {
        let d = self.dim;
        let mut out = vec![ZERO; d * d];
        let mut scratch = vec![ZERO; d * d];
        self.apply(rho.as_slice(), eta, &mut out, &mut scratch);
        DMatrix::from_column_slice(d, d, &out)
    }
}

struct MasterEquation<'a> {
    generator: &'a Lindbladian,
    pulse: PulseParams,
}

impl OdeSystem for MasterEquation<'_> {
    fn dim(&self) -> usize {
        2 * self.generator.dim * self.generator.dim
    }

    fn rhs(&self, t: f64, y: &[f64], dydt: &mut [f64]) -> Result<()> {
        let rho = unpack(y);
        let n = rho.len();
        let mut out = vec![ZERO; n];
        let mut scratch = vec![ZERO; n];
        self.generator.apply(&rho, pulse_envelope(&self.pulse, t), &mut out, &mut scratch);
        pack(&out, dydt);
        Ok(())
    }
}

fn unpack(y: &[f64]) -> Vec<Complex64> {
    y.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

fn pack(x: &[Complex64], y: &mut [f64]) {
    for (c, v) in y.chunks_exact_mut(2).zip(x) {
        c[0] = v.re;
        c[1] = v.im;
    }
}

/// Output of [`evolve_exact`].
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutput {
    pub times: Vec<f64>,
    pub moments: Vec<CumulantState>,
    pub params: ModelParams,
    pub max_trace_error: f64,
    pub max_top_population: f64,
    /// Smallest eigenvalue seen, if positivity was checked.
    pub min_eigenvalue: Option<f64>,
}

impl OracleOutput {
    pub fn energy(&self) -> Vec<f64> {
        self.moments
            .iter()
            .map(|m| energy_density_from_inversion(m.z, self.params.transition_energy))
            .collect()
    }

    pub fn as_moment_trace(&self) -> MomentTrace {
        MomentTrace { times: self.times.clone(), states: self.moments.clone(), unphysical_at: None }
    }
}

/// Integrate the master equation from the ground state and record moments.
pub fn evolve_exact(config: &OracleConfig) -> Result<OracleOutput> {
    config.validate()?;
    let space = OracleSpace::new(config.n_molecules, config.fock_cutoff)?;
    let params = config.model();
    let generator = space.lindbladian(&params.rates());
    let system = MasterEquation { generator: &generator, pulse: config.pulse };

    let rho0 = space.initial_state(config.initial_photons);
    let mut y0 = vec![0.0; 2 * space.dim * space.dim];
    pack(rho0.entries.as_slice(), &mut y0);

    let times = config.solver.times();
    let mut moments = Vec::with_capacity(times.len());
    let mut max_trace_error: f64 = 0.0;
    let mut max_top: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    let d = space.dim;
    integrate_dense(&system, &y0, &times, &config.solver.ode_options(&config.pulse), |t, y| {
        let rho = unpack(y);
        let tr: Complex64 = (0..d).map(|i| rho[i * d + i]).sum();
        max_trace_error = max_trace_error.max((tr - ONE).norm());
        let top = space.top_fock_population(&rho);
        max_top = max_top.max(top);
        if top >= TRUNCATION_LIMIT {
            return Err(Error::TruncationInadequate { population: top, t, n_max: config.fock_cutoff });
        }
        if config.check_positivity {
            let m = DensityMatrix { entries: DMatrix::from_column_slice(d, d, &rho) };
            min_eig = min_eig.min(m.min_eigenvalue());
        }
        moments.push(space.expectations_slice(&rho));
        Ok(())
    })?;
    Ok(OracleOutput {
        times,
        moments,
        params,
        max_trace_error,
        max_top_population: max_top,
        min_eigenvalue: config.check_positivity.then_some(min_eig),
    })
}

/// Quantity compared by [`compare_cumulant`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    Energy,
    Inversion,
    PhotonNumber,
    FieldReal,
    FieldImag,
}

impl Observable {
    fn extract(self, s: &CumulantState, transition_energy: f64) -> f64 {
        match self {
            Observable::Energy => energy_density_from_inversion(s.z, transition_energy),
            Observable::Inversion => s.z,
            Observable::PhotonNumber => s.n,
            Observable::FieldReal => s.a.re,
            Observable::FieldImag => s.a.im,
        }
    }
}

impl std::str::FromStr for Observable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "energy" | "E" => Observable::Energy,
            "inversion" | "Cz" => Observable::Inversion,
            "photons" | "n" => Observable::PhotonNumber,
            "field_re" => Observable::FieldReal,
            "field_im" => Observable::FieldImag,
            other => return Err(Error::Config(format!("unknown observable '{other}'"))),
        })
    }
}

/// Error norms between the oracle and a moment trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub max_abs_error: f64,
    /// `max_abs_error` divided by the largest oracle magnitude.
    pub max_rel_error: f64,
    /// Relative difference of the two maxima.
    pub peak_rel_error: f64,
}

/// Compare on the oracle grid over the overlap window, interpolating the
/// trace linearly.
pub fn compare_cumulant(oracle: &OracleOutput, trace: &MomentTrace, observable: Observable) -> Result<Comparison> {
    let w = oracle.params.transition_energy;
    let ref_t = &oracle.times;
    let ref_v: Vec<f64> = oracle.moments.iter().map(|s| observable.extract(s, w)).collect();
    let cmp_v: Vec<f64> = trace.states.iter().map(|s| observable.extract(s, w)).collect();
    compare_series(ref_t, &ref_v, &trace.times, &cmp_v)
}

/// Compare two sampled series, resampling the second onto the first.
pub fn compare_series(ref_t: &[f64], ref_v: &[f64], t: &[f64], v: &[f64]) -> Result<Comparison> {
    if ref_t.is_empty() || t.is_empty() {
        return Err(Error::DisjointRanges);
    }
    let lo = ref_t[0].max(t[0]);
    let hi = ref_t[ref_t.len() - 1].min(t[t.len() - 1]);
    if lo > hi {
        return Err(Error::DisjointRanges);
    }
    let mut max_abs: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let mut peak_ref = f64::NEG_INFINITY;
    let mut peak_cmp = f64::NEG_INFINITY;
    for (&tr, &vr) in ref_t.iter().zip(ref_v) {
        if tr < lo || tr > hi {
            continue;
        }
        let vc = interpolate(t, v, tr);
        max_abs = max_abs.max((vc - vr).abs());
        scale = scale.max(vr.abs());
        peak_ref = peak_ref.max(vr);
        peak_cmp = peak_cmp.max(vc);
    }
    let rel = |x: f64, s: f64| if s > 0.0 { x / s } else if x == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(Comparison {
        max_abs_error: max_abs,
        max_rel_error: rel(max_abs, scale),
        peak_rel_error: rel((peak_cmp - peak_ref).abs(), peak_ref.abs()),
    })
}

/// Linear interpolation on an increasing grid, clamped at the ends.
pub fn interpolate(t: &[f64], v: &[f64], x: f64) -> f64 {
    if x <= t[0] {
        return v[0];
    }
    let last = t.len() - 1;
    if x >= t[last] {
        return v[last];
    }
    let k = t.partition_point(|&ti| ti <= x) - 1;
    let f = (x - t[k]) / (t[k + 1] - t[k]);
    v[k] + f * (v[k + 1] - v[k])
}

/// Cavity field of an uncoupled driven cavity starting empty at `times[0]`:
/// `C_a(t) = ∫ exp(-(κ/2 + iΔ_c)(t - s)) η(s) ds`, by composite Simpson
/// quadrature between consecutive output times.
pub fn analytic_cavity_field(params: &ModelParams, pulse: &PulseParams, times: &[f64]) -> Vec<Complex64> {
    const PANELS: usize = 64;
    let r = params.rates();
    let lambda = Complex64::new(0.5 * r.kappa, r.delta_c);
    let mut out = Vec::with_capacity(times.len());
    let mut field = ZERO;
    for (k, &t) in times.iter().enumerate() {
        if k > 0 {
            let t0 = times[k - 1];
            let h = t - t0;
            let dh = h / PANELS as f64;
            let f = |u: f64| (-lambda * (h - u)).exp() * pulse_envelope(pulse, t0 + u);
            let mut acc = f(0.0) + f(h);
            for i in 1..PANELS {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += f(i as f64 * dh) * w;
            }
            field = (-lambda * h).exp() * field + acc * (dh / 3.0);
        }
        out.push(field);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_cap_is_enforced() {
        assert!(matches!(OracleSpace::new(3, 8), Err(Error::DimensionCap { dim: 72, cap: 64 })));
        assert!(OracleSpace::new(3, 7).is_ok());
        assert!(OracleSpace::new(4, 1).is_err());
    }

    #[test]
    fn ground_state_moments() {
        let s = OracleSpace::new(2, 3).unwrap();
        let m = s.expectations(&s.initial_state(0).entries);
        assert!(m.max_abs_diff(&CumulantState::ground()) < 1e-15);
    }

    #[test]
    fn permutations_count() {
        assert_eq!(permutations(3).len(), 6);
    }

    #[test]
    fn interpolation_is_linear_and_clamped() {
        let t = [0.0, 1.0, 2.0];
        let v = [0.0, 10.0, 0.0];
        assert_eq!(interpolate(&t, &v, 0.25), 2.5);
        assert_eq!(interpolate(&t, &v, 1.5), 5.0);
        assert_eq!(interpolate(&t, &v, -1.0), 0.0);
        assert_eq!(interpolate(&t, &v, 3.0), 0.0);
    }

    #[test]
    fn identical_series_compare_to_zero() {
        let t = [0.0, 1.0, 2.0];
        let v = [0.0, 3.0, 1.0];
        let c = compare_series(&t, &v, &t, &v).unwrap();
        assert_eq!((c.max_abs_error, c.max_rel_error, c.peak_rel_error), (0.0, 0.0, 0.0));
        assert!(matches!(compare_series(&t, &v, &[5.0, 6.0], &[1.0, 1.0]), Err(Error::DisjointRanges)));
    }
}
