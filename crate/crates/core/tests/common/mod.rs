//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use vbdvs::statespace::SystemSequences;
use vbdvs::RegressionData;

/// A small random state-space problem.
pub struct Instance {
    pub data: RegressionData,
    pub sys: SystemSequences,
    pub m0: DVector<f64>,
    pub p0: DMatrix<f64>,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=10);
    let p = rng.gen_range(1..=3);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let x = DMatrix::from_fn(n, p, |_, _| normal());
    let y = DVector::from_fn(n, |_, _| normal());
    let m0 = DVector::from_fn(p, |_, _| 0.5 * normal());
    let a = DMatrix::from_fn(p, p, |_, _| normal());
    let p0 = &a * a.transpose() + DMatrix::identity(p, p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let f = DMatrix::from_fn(n, p, |_, _| rng.gen_range(0.05..=1.0));
    let w = DMatrix::from_fn(n, p, |_, _| rng.gen_range(0.01..1.0));
    let sigma2 = DVector::from_fn(n, |_, _| rng.gen_range(0.1..2.0));
    Instance {
        data: RegressionData::new(y, x).unwrap(),
        sys: SystemSequences::new(f, w, sigma2).unwrap(),
        m0,
        p0,
    }
}

/// Moments of `beta_t` given `y_1..y_k` for every `t` and `k`.
pub struct JointGaussian {
    /// `a[t]` maps the stacked `(beta_0, eta_1..eta_T)` to `beta_t`.
    a: Vec<DMatrix<f64>>,
    mu_z: DVector<f64>,
    sigma_z: DMatrix<f64>,
    /// Rows `x_t a[t]`.
    h: DMatrix<f64>,
    sigma2: DVector<f64>,
    y: DVector<f64>,
}

impl JointGaussian {
    pub fn new(inst: &Instance) -> Self {
        let (n, p) = (inst.data.n_obs(), inst.data.n_predictors());
        let dim = (n + 1) * p;
        let mut a = Vec::with_capacity(n + 1);
        let mut a0 = DMatrix::zeros(p, dim);
        a0.view_mut((0, 0), (p, p)).fill_with_identity();
        a.push(a0);
        for t in 1..=n {
            let mut next = DMatrix::zeros(p, dim);
            for j in 0..p {
                for c in 0..dim {
                    next[(j, c)] = inst.sys.f_tilde[(t - 1, j)] * a[t - 1][(j, c)];
                }
                next[(j, t * p + j)] += 1.0;
            }
            a.push(next);
        }
        let mut mu_z = DVector::zeros(dim);
        mu_z.rows_mut(0, p).copy_from(&inst.m0);
        let mut sigma_z = DMatrix::zeros(dim, dim);
        sigma_z.view_mut((0, 0), (p, p)).copy_from(&inst.p0);
        for t in 1..=n {
            for j in 0..p {
                sigma_z[(t * p + j, t * p + j)] = inst.sys.w_tilde[(t - 1, j)];
            }
        }
        let mut h = DMatrix::zeros(n, dim);
        for t in 1..=n {
            let row = inst.data.x.row(t - 1) * &a[t];
            h.row_mut(t - 1).copy_from(&row);
        }
        Self {
            a,
            mu_z,
            sigma_z,
            h,
            sigma2: inst.sys.sigma2.clone(),
            y: inst.data.y.clone(),
        }
    }

    /// Mean and covariance of `beta_t` (t = 1..T) given the first `k` observations.
    pub fn moments(&self, t: usize, k: usize) -> (DVector<f64>, DMatrix<f64>) {
        let at = &self.a[t];
        let prior_mean = at * &self.mu_z;
        let prior_cov = at * &self.sigma_z * at.transpose();
        if k == 0 {
            return (prior_mean, prior_cov);
        }
        let hk = self.h.rows(0, k).into_owned();
        let cross = at * &self.sigma_z * hk.transpose();
        let mut s = &hk * &self.sigma_z * hk.transpose();
        for i in 0..k {
            s[(i, i)] += self.sigma2[i];
        }
        let s_inv = s
            .try_inverse()
            .expect("observation covariance is invertible");
        let resid = self.y.rows(0, k) - &hk * &self.mu_z;
        let mean = prior_mean + &cross * &s_inv * resid;
        let cov = prior_cov - &cross * &s_inv * cross.transpose();
        (mean, cov)
    }
}

/// Full `D_t` matrix product, diagonal extracted afterwards.
pub fn brute_force_d(
    m: &DVector<f64>,
    p: &DMatrix<f64>,
    m_prev: &DVector<f64>,
    p_prev: &DMatrix<f64>,
    f: &[f64],
) -> DVector<f64> {
    let k = m.len();
    let f_mat = DMatrix::from_diagonal(&DVector::from_column_slice(f));
    let d = p
        + m * m.transpose()
        + (p_prev + m_prev * m_prev.transpose())
            * (DMatrix::identity(k, k) - f_mat * 2.0).transpose();
    d.diagonal()
}

pub fn max_abs<'a>(
    a: impl IntoIterator<Item = &'a f64>,
    b: impl IntoIterator<Item = &'a f64>,
) -> f64 {
    a.into_iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Largest deviation between every Kalman/RTS moment and the oracle.
pub fn oracle_gap(inst: &Instance) -> f64 {
    let filtered =
        vbdvs::statespace::kalman_filter(&inst.data, &inst.sys, &inst.m0, &inst.p0).unwrap();
    let smoothed = vbdvs::statespace::rts_smoother(filtered, &inst.sys).unwrap();
    let oracle = JointGaussian::new(inst);
    let n = inst.data.n_obs();
    let mut gap: f64 = 0.0;
    for t in 1..=n {
        let i = t - 1;
        let (mp, pp) = oracle.moments(t, t - 1);
        let (mf, pf) = oracle.moments(t, t);
        let (ms, ps) = oracle.moments(t, n);
        gap = gap
            .max(max_abs(smoothed.m_pred[i].iter(), mp.iter()))
            .max(max_abs(smoothed.p_pred[i].iter(), pp.iter()))
            .max(max_abs(smoothed.m_filt[i].iter(), mf.iter()))
            .max(max_abs(smoothed.p_filt[i].iter(), pf.iter()))
            .max(max_abs(smoothed.m_smooth[i].iter(), ms.iter()))
            .max(max_abs(smoothed.p_smooth[i].iter(), ps.iter()));
    }
    gap
}

/// Gaussian draws for test data.
pub fn normals(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Runs the built binary from `cwd`.
pub fn run_cli(cwd: &std::path::Path, args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_vbdvs"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("binary runs")
}

const TIMING_FIELDS: [&str; 2] = ["wall_ms", "mean_wall_ms"];

fn strip_timing(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            for key in TIMING_FIELDS {
                map.remove(key);
            }
            map.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

/// Contents of every output file with wall-clock fields removed.
pub fn numeric_artifacts(dir: &std::path::Path) -> std::collections::BTreeMap<String, String> {
    let mut out = std::collections::BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let text = std::fs::read_to_string(&path).unwrap();
        let cleaned = if name.ends_with(".json") {
            let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
            strip_timing(&mut v);
            v.to_string()
        } else {
            let mut lines = text.lines();
            let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
            let keep: Vec<usize> = (0..header.len())
                .filter(|i| !TIMING_FIELDS.contains(&header[*i]))
                .collect();
            std::iter::once(header.join(","))
                .chain(lines.map(|l| {
                    let cells: Vec<&str> = l.split(',').collect();
                    keep.iter().map(|i| cells[*i]).collect::<Vec<_>>().join(",")
                }))
                .collect::<Vec<_>>()
                .join("\n")
        };
        out.insert(name, cleaned);
    }
    out
}

pub const CLI_CONFIG: &str = r#"
seed = 11
threads = 1

[prior]
preset = "prior3"

[simulate]
n_obs = 60
n_predictors = 6

[fit]
y = "sim/y.csv"
x = "sim/x.csv"

[montecarlo]
n_obs = 40
n_predictors = 5
replications = 2

[forecast]
horizons = [1, 2, 4, 8]

[forecast.synthetic]
n_obs = 60
n_predictors = 5

[[forecast.models]]
name = "VBDVS/FAC2"
kind = "vbdvs"
factors = 2
h0 = 1.0

[[forecast.models]]
name = "VBDVS/X"
kind = "vbdvs"
h0 = 100.0
"#;

/// Runs every command twice in `root` and returns, per command, whether the
/// numeric artifacts of both runs agree.
pub fn cli_determinism(root: &std::path::Path) -> Vec<(String, bool)> {
    std::fs::write(root.join("run.toml"), CLI_CONFIG).unwrap();
    let mut results = Vec::new();
    for cmd in ["simulate", "fit", "montecarlo", "forecast-eval"] {
        let mut runs = Vec::new();
        for rep in 0..2 {
            let out_dir = if cmd == "simulate" {
                format!("sim{rep}")
            } else {
                format!("{cmd}{rep}")
            };
            let status = run_cli(root, &[cmd, "--config", "run.toml", "--out", &out_dir]);
            assert!(
                status.status.success(),
                "{cmd}: {}",
                String::from_utf8_lossy(&status.stderr)
            );
            runs.push(numeric_artifacts(&root.join(&out_dir)));
            if cmd == "simulate" && rep == 0 {
                copy_dir(&root.join("sim0"), &root.join("sim"));
            }
        }
        results.push((cmd.to_string(), !runs[0].is_empty() && runs[0] == runs[1]));
    }
    results
}

fn copy_dir(from: &std::path::Path, to: &std::path::Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let path = entry.unwrap().path();
        std::fs::copy(&path, to.join(path.file_name().unwrap())).unwrap();
    }
}
