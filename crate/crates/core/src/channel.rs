//! Network topology and exponentially-correlated Rayleigh channel generation.
//!
//! A [`ChannelSet`] holds every channel vector `h[m][n][k]` of one network
//! realization: the `N_T`-antenna row vector from BS `n` to the `k`-th user
//! served by BS `m`. The channel block from BS `n` to the users of cell `m`
//! is drawn as `H = H̃ · R^{1/2}` with `H̃` i.i.d. `CN(0, 1)` entries and `R`
//! the user-correlation matrix produced by [`correlation_matrix`].

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Static description of the multi-cell network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Number of coordinated base stations `M`.
    pub num_bs: usize,
    /// Users served by each base station `K`.
    pub users_per_bs: usize,
    /// Transmit antennas per base station `N_T`.
    pub antennas: usize,
    /// Per-user transmit SNR in dB. The power budget is `K · 10^(snr/10) · σ²`.
    pub snr_db: f64,
    /// Noise power `σ²`.
    pub sigma2: f64,
    /// Mean correlation of the data channels `H_mm`.
    pub corr_data: f64,
    /// Mean correlation of the interference channels `H_mn`, `m ≠ n`.
    pub corr_interf: f64,
    /// Path-loss exponent.
    pub pathloss_exponent: f64,
    /// Path-loss reference distance `d0`.
    pub ref_distance: f64,
    /// `distances[n][m]`: distance from BS `n` to the users of cell `m`.
    /// `None` means every distance is zero (no attenuation).
    pub distances: Option<Vec<Vec<f64>>>,
    /// Minimum rate requirement per user (bps/Hz).
    pub min_rate: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            num_bs: 3,
            users_per_bs: 6,
            antennas: 4,
            snr_db: 20.0,
            sigma2: 1.0,
            corr_data: 0.6,
            corr_interf: 0.5,
            pathloss_exponent: 3.0,
            ref_distance: 1.0,
            distances: None,
            min_rate: 0.3,
        }
    }
}

impl NetworkConfig {
    pub fn new(num_bs: usize, users_per_bs: usize, antennas: usize) -> Self {
        Self {
            num_bs,
            users_per_bs,
            antennas,
            ..Self::default()
        }
    }

    /// Per-BS transmit power budget `P^max`.
    pub fn p_max(&self) -> f64 {
        self.users_per_bs as f64 * 10f64.powf(self.snr_db / 10.0) * self.sigma2
    }

    /// Number of reals needed to describe one BS's channels to one cell.
    pub fn feature_dim(&self) -> usize {
        2 * self.antennas * self.users_per_bs
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_bs == 0 {
            return Err(invalid("num_bs", "must be at least 1"));
        }
        if self.users_per_bs == 0 {
            return Err(invalid("users_per_bs", "must be at least 1"));
        }
        if self.antennas == 0 {
            return Err(invalid("antennas", "must be at least 1"));
        }
        check_corr("corr_data", self.corr_data)?;
        check_corr("corr_interf", self.corr_interf)?;
        if !(self.sigma2 > 0.0) {
            return Err(invalid("sigma2", "noise power must be positive"));
        }
        if !(self.p_max() > 0.0) || !self.p_max().is_finite() {
            return Err(invalid(
                "snr_db",
                "power budget must be positive and finite",
            ));
        }
        if !(self.ref_distance > 0.0) {
            return Err(invalid("ref_distance", "must be positive"));
        }
        if let Some(d) = &self.distances {
            if d.len() != self.num_bs || d.iter().any(|row| row.len() != self.num_bs) {
                return Err(invalid("distances", "must be an M x M matrix"));
            }
            if d.iter().flatten().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(invalid(
                    "distances",
                    "entries must be finite and non-negative",
                ));
            }
        }
        Ok(())
    }

    /// Distance from BS `tx` to the users of cell `cell`.
    pub fn distance(&self, tx: usize, cell: usize) -> f64 {
        self.distances.as_ref().map_or(0.0, |d| d[tx][cell])
    }

    /// Hexagonal layout preset: BSs on the first ring of a hexagonal grid with
    /// inter-site distance `isd` (BS 0 at the centre); users sit at their own
    /// BS, so the intra-cell distance is zero and the BS→cell distance equals
    /// the inter-site distance between the two sites.
    pub fn with_hexagonal_layout(mut self, isd: f64) -> Self {
        let sites: Vec<(f64, f64)> = (0..self.num_bs)
            .map(|i| {
                if i == 0 {
                    (0.0, 0.0)
                } else {
                    let ring = (i - 1) / 6 + 1;
                    let angle = PI / 3.0 * ((i - 1) % 6) as f64 + PI / 6.0;
                    let r = ring as f64 * isd;
                    (r * angle.cos(), r * angle.sin())
                }
            })
            .collect();
        let d = sites
            .iter()
            .map(|a| {
                sites
                    .iter()
                    .map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt())
                    .collect()
            })
            .collect();
        self.distances = Some(d);
        self
    }
}

fn check_corr(name: &'static str, corr: f64) -> Result<()> {
    if !(0.0..1.0).contains(&corr) {
        return Err(invalid(name, format!("correlation {corr} outside [0, 1)")));
    }
    Ok(())
}

/// Path-loss factor `(1 + d/d0)^(-exponent)`.
pub fn pathloss(distance: f64, cfg: &NetworkConfig) -> Result<f64> {
    if !(distance >= 0.0) {
        return Err(invalid("distance", format!("{distance} is negative")));
    }
    Ok((1.0 + distance / cfg.ref_distance).powf(-cfg.pathloss_exponent))
}

/// Hermitian user-correlation matrix with `R[i][k] = (corr · e^{jφ})^{k-i}`
/// for `k ≥ i` and a uniformly random phase `φ`.
pub fn correlation_matrix<R: Rng + ?Sized>(
    users: usize,
    corr: f64,
    rng: &mut R,
) -> Result<DMatrix<Complex64>> {
    check_corr("corr", corr)?;
    let phase = rng.random_range(0.0..2.0 * PI);
    correlation_matrix_with_phase(users, corr, phase)
}

/// [`correlation_matrix`] with the phase supplied by the caller.
pub fn correlation_matrix_with_phase(
    users: usize,
    corr: f64,
    phase: f64,
) -> Result<DMatrix<Complex64>> {
    check_corr("corr", corr)?;
    let base = Complex64::from_polar(corr, phase);
    let mut r = DMatrix::from_element(users, users, Complex64::new(0.0, 0.0));
    for i in 0..users {
        for k in i..users {
            let v = base.powu((k - i) as u32);
            r[(i, k)] = v;
            r[(k, i)] = v.conj();
        }
        r[(i, i)] = Complex64::new(1.0, 0.0);
    }
    Ok(r)
}

/// Hermitian square root `S` with `S·Sᴴ ≈ R`, via eigendecomposition with
/// negative eigenvalues clipped to zero. Returns `S` and the total clipped
/// magnitude.
pub fn hermitian_sqrt(r: &DMatrix<Complex64>) -> (DMatrix<Complex64>, f64) {
    let eig = r.clone().symmetric_eigen();
    let mut clipped = 0.0;
    let roots: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| {
            if l < 0.0 {
                clipped += -l;
                0.0
            } else {
                l.sqrt()
            }
        })
        .collect();
    let n = r.nrows();
    let q = &eig.eigenvectors;
    let mut s = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (j, &root) in roots.iter().enumerate() {
        if root == 0.0 {
            continue;
        }
        for a in 0..n {
            for b in 0..n {
                s[(a, b)] += q[(a, j)] * q[(b, j)].conj() * root;
            }
        }
    }
    if clipped > 0.0 {
        log::debug!("correlation square root clipped {clipped:.3e} of negative eigenvalue mass");
    }
    (s, clipped)
}

/// One realization of every channel vector in the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    num_bs: usize,
    users: usize,
    antennas: usize,
    h: Vec<Complex64>,
}

impl ChannelSet {
    pub fn zeros(num_bs: usize, users: usize, antennas: usize) -> Self {
        Self {
            num_bs,
            users,
            antennas,
            h: vec![Complex64::new(0.0, 0.0); num_bs * num_bs * users * antennas],
        }
    }

    pub fn num_bs(&self) -> usize {
        self.num_bs
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    fn offset(&self, cell: usize, tx: usize, user: usize) -> usize {
        debug_assert!(cell < self.num_bs && tx < self.num_bs && user < self.users);
        ((cell * self.num_bs + tx) * self.users + user) * self.antennas
    }

    /// Channel row vector from BS `tx` to user `user` of cell `cell`.
    pub fn h(&self, cell: usize, tx: usize, user: usize) -> &[Complex64] {
        let o = self.offset(cell, tx, user);
        &self.h[o..o + self.antennas]
    }

    pub fn h_mut(&mut self, cell: usize, tx: usize, user: usize) -> &mut [Complex64] {
        let o = self.offset(cell, tx, user);
        &mut self.h[o..o + self.antennas]
    }

    /// Data-channel gain `‖h_{mk}^m‖`.
    pub fn data_gain(&self, cell: usize, user: usize) -> f64 {
        self.h(cell, cell, user)
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Interleaved `(re, im)` features of the channels from BS `tx` to all
    /// users of `cell`, user-major.
    pub fn block_features(&self, cell: usize, tx: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.users * self.antennas);
        for k in 0..self.users {
            for z in self.h(cell, tx, k) {
                out.push(z.re);
                out.push(z.im);
            }
        }
        out
    }

    /// Flat interleaved `(re, im)` array in `(cell, tx, user, antenna)` order.
    pub fn to_interleaved(&self) -> Vec<f64> {
        self.h.iter().flat_map(|z| [z.re, z.im]).collect()
    }

    pub fn from_interleaved(
        num_bs: usize,
        users: usize,
        antennas: usize,
        data: &[f64],
    ) -> Result<Self> {
        let n = num_bs * num_bs * users * antennas;
        if data.len() != 2 * n {
            return Err(Error::DimensionMismatch(format!(
                "channel array has {} reals, expected {}",
                data.len(),
                2 * n
            )));
        }
        let h = data
            .chunks_exact(2)
            .map(|c| Complex64::new(c[0], c[1]))
            .collect();
        Ok(Self {
            num_bs,
            users,
            antennas,
            h,
        })
    }

    /// Relabels base stations: BS `perm[m]` of the result is BS `m` of `self`.
    pub fn permute_bs(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(self.num_bs, self.users, self.antennas);
        for m in 0..self.num_bs {
            for n in 0..self.num_bs {
                for k in 0..self.users {
                    out.h_mut(perm[m], perm[n], k)
                        .copy_from_slice(self.h(m, n, k));
                }
            }
        }
        out
    }

    /// Reorders users of every cell by ascending data-channel gain.
    pub fn sort_users(&mut self) {
        for m in 0..self.num_bs {
            let mut order: Vec<usize> = (0..self.users).collect();
            let gains: Vec<f64> = (0..self.users).map(|k| self.data_gain(m, k)).collect();
            order.sort_by(|&a, &b| gains[a].total_cmp(&gains[b]));
            if order.iter().enumerate().all(|(i, &o)| i == o) {
                continue;
            }
            for n in 0..self.num_bs {
                let old: Vec<Vec<Complex64>> =
                    (0..self.users).map(|k| self.h(m, n, k).to_vec()).collect();
                for (new_k, &old_k) in order.iter().enumerate() {
                    self.h_mut(m, n, new_k).copy_from_slice(&old[old_k]);
                }
            }
        }
    }

    pub fn users_sorted(&self) -> bool {
        (0..self.num_bs)
            .all(|m| (1..self.users).all(|k| self.data_gain(m, k - 1) <= self.data_gain(m, k)))
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Draws one channel realization.
pub fn sample_channels<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Result<ChannelSet> {
    cfg.validate()?;
    let (m_bs, k_users, n_t) = (cfg.num_bs, cfg.users_per_bs, cfg.antennas);
    let mut set = ChannelSet::zeros(m_bs, k_users, n_t);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    for cell in 0..m_bs {
        for tx in 0..m_bs {
            let corr = if tx == cell {
                cfg.corr_data
            } else {
                cfg.corr_interf
            };
            let r = correlation_matrix(k_users, corr, rng)?;
            let (s, _) = hermitian_sqrt(&r);
            let raw = DMatrix::from_fn(n_t, k_users, |_, _| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re * scale, im * scale)
            });
            let mixed = raw * s;
            let gain = pathloss(cfg.distance(tx, cell), cfg)?.sqrt();
            for k in 0..k_users {
                for (t, z) in set.h_mut(cell, tx, k).iter_mut().enumerate() {
                    *z = mixed[(t, k)] * gain;
                }
            }
        }
    }
    set.sort_users();
    Ok(set)
}

/// Independent per-sample generator: sample `index` of stream `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Minibatch counts and batch size for the three dataset splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub train_batches: usize,
    pub val_batches: usize,
    pub test_batches: usize,
    pub batch_size: usize,
}

impl DatasetSpec {
    pub fn desk() -> Self {
        Self {
            train_batches: 10,
            val_batches: 4,
            test_batches: 4,
            batch_size: 8,
        }
    }

    pub fn paper() -> Self {
        Self {
            train_batches: 40,
            val_batches: 10,
            test_batches: 10,
            batch_size: 32,
        }
    }
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self::desk()
    }
}

/// Minibatched channel realizations for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub seed: u64,
    pub config: NetworkConfig,
    pub batches: Vec<Vec<ChannelSet>>,
}

impl Dataset {
    pub fn num_batches(&self) -> usize {
        self.batches.len()
    }

    pub fn batch_size(&self) -> usize {
        self.batches.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples(&self) -> impl Iterator<Item = &ChannelSet> {
        self.batches.iter().flatten()
    }

    /// Replaces every draw, keeping the shape. The new seed is taken from `rng`.
    pub fn renew<R: RngCore + ?Sized>(&self, rng: &mut R) -> Result<Dataset> {
        make_dataset(
            &self.config,
            self.split,
            self.num_batches(),
            self.batch_size(),
            rng.next_u64(),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = DatasetFile::from(self);
        fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        if !path.exists() {
            return Err(Error::MissingFile {
                what: "dataset",
                path: path.to_path_buf(),
            });
        }
        let file: DatasetFile = serde_json::from_slice(&fs::read(path)?)?;
        file.into_dataset()
    }
}

/// Generates `n_batches × batch_size` samples. Sample `i` is drawn from its
/// own sub-stream of `seed`, so the result does not depend on thread count.
pub fn make_dataset(
    cfg: &NetworkConfig,
    split: Split,
    n_batches: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Dataset> {
    cfg.validate()?;
    let total = n_batches * batch_size;
    let samples: Vec<ChannelSet> = (0..total)
        .into_par_iter()
        .map(|i| sample_channels(cfg, &mut sample_rng(seed, i as u64)))
        .collect::<Result<_>>()?;
    let batches = if batch_size == 0 {
        vec![Vec::new(); n_batches]
    } else {
        samples.chunks(batch_size).map(<[_]>::to_vec).collect()
    };
    Ok(Dataset {
        split,
        seed,
        config: cfg.clone(),
        batches,
    })
}

pub const DATASET_FORMAT: &str = "cfnoma-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    num_bs: usize,
    users_per_bs: usize,
    antennas: usize,
    seed: u64,
    corr_data: f64,
    corr_interf: f64,
    split: Split,
    n_batches: usize,
    batch_size: usize,
}

/// On-disk dataset layout (see README).
#[derive(Debug, Serialize, Deserialize)]
struct DatasetFile {
    format: String,
    version: u32,
    header: DatasetHeader,
    config: NetworkConfig,
    batches: Vec<Vec<Vec<f64>>>,
}

impl From<&Dataset> for DatasetFile {
    fn from(d: &Dataset) -> Self {
        Self {
            format: DATASET_FORMAT.to_string(),
            version: DATASET_VERSION,
            header: DatasetHeader {
                num_bs: d.config.num_bs,
                users_per_bs: d.config.users_per_bs,
                antennas: d.config.antennas,
                seed: d.seed,
                corr_data: d.config.corr_data,
                corr_interf: d.config.corr_interf,
                split: d.split,
                n_batches: d.num_batches(),
                batch_size: d.batch_size(),
            },
            config: d.config.clone(),
            batches: d
                .batches
                .iter()
                .map(|b| b.iter().map(ChannelSet::to_interleaved).collect())
                .collect(),
        }
    }
}

impl DatasetFile {
    fn into_dataset(self) -> Result<Dataset> {
        if self.version != DATASET_VERSION {
            return Err(Error::Version {
                found: self.version,
                expected: DATASET_VERSION,
            });
        }
        let h = &self.header;
        let batches = self
            .batches
            .iter()
            .map(|b| {
                b.iter()
                    .map(|s| ChannelSet::from_interleaved(h.num_bs, h.users_per_bs, h.antennas, s))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            split: h.split,
            seed: h.seed,
            config: self.config,
            batches,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn zero_correlation_is_identity() {
        let r = correlation_matrix(3, 0.0, &mut sample_rng(1, 0)).unwrap();
        assert_eq!(r, DMatrix::identity(3, 3));
    }

    #[test]
    fn near_unit_correlation_with_zero_phase_is_real_symmetric() {
        let c = 1.0 - 1e-6;
        let r = correlation_matrix_with_phase(2, c, 0.0).unwrap();
        assert_eq!(r[(0, 1)], Complex64::new(c, 0.0));
        assert_eq!(r[(1, 0)], Complex64::new(c, 0.0));
    }

    #[test]
    fn correlation_matches_direct_formula() {
        let phi = PI / 4.0;
        let r = correlation_matrix_with_phase(3, 0.6, phi).unwrap();
        for i in 0..3 {
            for k in i..3 {
                let p = (k - i) as f64;
                let expect = Complex64::from_polar(0.6f64.powf(p), phi * p);
                assert!(close(r[(i, k)], expect, 1e-15), "({i},{k})");
            }
        }
        assert_eq!(r, r.adjoint());
    }

    #[test]
    fn correlation_rejects_out_of_range() {
        assert!(correlation_matrix_with_phase(3, 1.0, 0.0).is_err());
        assert!(correlation_matrix_with_phase(3, -0.1, 0.0).is_err());
    }

    #[test]
    fn sqrt_reconstructs_correlation() {
        let mut rng = sample_rng(5, 0);
        for &c in &[0.0, 0.3, 0.6, 0.8, 0.95] {
            let r = correlation_matrix(6, c, &mut rng).unwrap();
            let (s, _) = hermitian_sqrt(&r);
            let err = (&s * s.adjoint() - &r).norm();
            assert!(err <= 1e-9, "corr {c}: {err}");
        }
    }

    #[test]
    fn pathloss_values() {
        let cfg = NetworkConfig::default();
        assert_eq!(pathloss(0.0, &cfg).unwrap(), 1.0);
        assert_eq!(pathloss(1.0, &cfg).unwrap(), 0.125);
        assert!((pathloss(3.0, &cfg).unwrap() - 1.0 / 64.0).abs() < 1e-15);
        assert!(pathloss(-1.0, &cfg).is_err());
    }

    #[test]
    fn uncorrelated_channels_have_identity_covariance() {
        let mut cfg = NetworkConfig::new(1, 3, 2);
        cfg.corr_data = 0.0;
        cfg.corr_interf = 0.0;
        let mut rng = sample_rng(11, 0);
        let draws = 10_000;
        let mut cov = [[Complex64::new(0.0, 0.0); 3]; 3];
        // Sorting permutes users, so test the raw model without the ordering step.
        for _ in 0..draws {
            let r = correlation_matrix(3, 0.0, &mut rng).unwrap();
            let (s, _) = hermitian_sqrt(&r);
            let raw = DMatrix::from_fn(cfg.antennas, 3, |_, _| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
            });
            let h = raw * s;
            for a in 0..3 {
                for b in 0..3 {
                    for t in 0..cfg.antennas {
                        cov[a][b] += h[(t, a)].conj() * h[(t, b)];
                    }
                }
            }
        }
        let n = (draws * cfg.antennas) as f64;
        for a in 0..3 {
            for b in 0..3 {
                let v = cov[a][b] / n;
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((v - target).norm() < 0.05, "cov[{a}][{b}] = {v}");
            }
        }
    }

    #[test]
    fn sampled_users_are_sorted_and_finite() {
        let cfg = NetworkConfig::new(3, 4, 2);
        for s in 0..20 {
            let set = sample_channels(&cfg, &mut sample_rng(3, s)).unwrap();
            assert!(set.users_sorted());
            assert!(set.is_finite());
        }
    }

    #[test]
    fn dataset_is_deterministic_and_sized() {
        let cfg = NetworkConfig::new(2, 2, 2);
        let a = make_dataset(&cfg, Split::Train, 10, 8, 42).unwrap();
        let b = make_dataset(&cfg, Split::Train, 10, 8, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 80);
        let renewed = a.renew(&mut sample_rng(1, 1)).unwrap();
        assert_eq!(renewed.num_batches(), 10);
        assert_eq!(renewed.batch_size(), 8);
        assert_ne!(renewed.batches, a.batches);
    }

    #[test]
    fn dataset_round_trips_through_json() {
        let cfg = NetworkConfig::new(2, 3, 2);
        let d = make_dataset(&cfg, Split::Test, 2, 3, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        d.save(&path).unwrap();
        assert_eq!(Dataset::load(&path).unwrap(), d);
        assert!(matches!(
            Dataset::load(&dir.path().join("missing.json")),
            Err(Error::MissingFile { .. })
        ));
    }

    #[test]
    fn paper_scale_spec() {
        let p = DatasetSpec::paper();
        assert_eq!(
            (p.train_batches, p.val_batches, p.test_batches, p.batch_size),
            (40, 10, 10, 32)
        );
    }

    #[test]
    fn hexagonal_layout_distances() {
        let cfg = NetworkConfig::new(3, 2, 2).with_hexagonal_layout(100.0);
        cfg.validate().unwrap();
        assert_eq!(cfg.distance(0, 0), 0.0);
        assert!((cfg.distance(0, 1) - 100.0).abs() < 1e-9);
        assert!((cfg.distance(1, 2) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn permute_bs_relabels_blocks() {
        let cfg = NetworkConfig::new(3, 2, 2);
        let set = sample_channels(&cfg, &mut sample_rng(1, 2)).unwrap();
        let perm = [2, 0, 1];
        let p = set.permute_bs(&perm);
        assert_eq!(p.h(perm[0], perm[1], 1), set.h(0, 1, 1));
    }
}
