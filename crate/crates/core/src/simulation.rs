//! Synthetic populations: Gaussian-mixture preference parameters, uniform
//! travel contexts and margin-logistic choices.
//!
//! The third mixture coordinate is an orientation propensity; a user's
//! orientation is its sign (zero maps to +1), so the latent space stays
//! continuous while the drawn parameters are always valid.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::choice::{
    predict_choice, OptionIndex, Orientation, PreferenceParams, TravelContext, UserHistory,
};
use crate::clustering::{loss_guided_distance, CentroidSet};
use crate::error::{EwcError, Result};
use crate::seeding::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    /// Mean of `(b, s, orientation propensity)`.
    pub mean: [f64; 3],
    pub covariance: [[f64; 3]; 3],
}

impl MixtureComponent {
    /// Component with isotropic covariance `std^2 * I`.
    pub fn isotropic(weight: f64, mean: [f64; 3], std: f64) -> Self {
        let v = std * std;
        MixtureComponent {
            weight,
            mean,
            covariance: [[v, 0.0, 0.0], [0.0, v, 0.0], [0.0, 0.0, v]],
        }
    }

    /// The component mean read as preference parameters.
    pub fn mean_params(&self) -> PreferenceParams {
        PreferenceParams {
            bias: self.mean[0],
            slope: self.mean[1],
            orientation: Orientation::from_sign(self.mean[2]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextRanges {
    pub tau: [f64; 2],
    pub e: [f64; 2],
}

impl Default for ContextRanges {
    fn default() -> Self {
        ContextRanges {
            tau: [1.0, 1.5],
            e: [0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub components: Vec<MixtureComponent>,
    #[serde(default)]
    pub context: ContextRanges,
    #[serde(default)]
    pub noise_temperature: f64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        six_cluster_population(0.05, 0.0)
    }
}

/// Six equally weighted clusters whose boundaries cut the default context box
/// in three directions, each with both orientations.
pub fn six_cluster_population(std: f64, noise_temperature: f64) -> PopulationSpec {
    let lines = [(0.25, 1.0), (1.25, 0.0), (2.0, -1.0)];
    let components = lines
        .iter()
        .flat_map(|&(b, s)| [3.0, -3.0].map(|o| MixtureComponent::isotropic(1.0 / 6.0, [b, s, o], std)))
        .collect();
    PopulationSpec {
        components,
        context: ContextRanges::default(),
        noise_temperature,
    }
}

/// Four boundary-cutting clusters plus two one-class clusters (always option 1
/// and always option 2) that together hold `one_class_share` of the weight.
pub fn one_class_mix_population(std: f64, one_class_share: f64, noise_temperature: f64) -> PopulationSpec {
    let w = (1.0 - one_class_share) / 4.0;
    let mut components: Vec<MixtureComponent> = [(0.25, 1.0), (1.25, 0.0)]
        .iter()
        .flat_map(|&(b, s)| [3.0, -3.0].map(|o| MixtureComponent::isotropic(w, [b, s, o], std)))
        .collect();
    components.push(MixtureComponent::isotropic(one_class_share / 2.0, [3.0, 0.0, 3.0], std));
    components.push(MixtureComponent::isotropic(one_class_share / 2.0, [-1.0, 0.0, 3.0], std));
    PopulationSpec {
        components,
        context: ContextRanges::default(),
        noise_temperature,
    }
}

fn range_ok(r: [f64; 2]) -> bool {
    r[0].is_finite() && r[1].is_finite() && r[0] > 0.0 && r[0] <= r[1]
}

/// Lower-triangular `L` with `L L^T = cov`, allowing zero pivots so that
/// semidefinite (including all-zero) covariances are accepted.
fn psd_factor(cov: &[[f64; 3]; 3]) -> Result<[[f64; 3]; 3]> {
    let scale = (0..3).map(|i| cov[i][i].abs()).fold(0.0, f64::max).max(1.0);
    let tol = 1e-12 * scale;
    for (i, row) in cov.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() || (v - cov[j][i]).abs() > tol {
                return Err(EwcError::Config("covariance must be finite and symmetric".into()));
            }
        }
    }
    let mut l = [[0.0f64; 3]; 3];
    for j in 0..3 {
        let pivot = cov[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if pivot < -tol {
            return Err(EwcError::Config("covariance is not positive semidefinite".into()));
        }
        if pivot <= tol {
            for i in j + 1..3 {
                let rest = cov[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
                if rest.abs() > tol.sqrt() {
                    return Err(EwcError::Config("covariance is not positive semidefinite".into()));
                }
            }
            continue;
        }
        let d = pivot.sqrt();
        l[j][j] = d;
        for i in j + 1..3 {
            l[i][j] = (cov[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>()) / d;
        }
    }
    Ok(l)
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(EwcError::Config("population needs at least one component".into()));
        }
        let mut total = 0.0;
        for (k, c) in self.components.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight <= 1.0) {
                return Err(EwcError::Config(format!(
                    "component {k} weight must lie in (0, 1], got {}",
                    c.weight
                )));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(EwcError::Config(format!("component {k} mean must be finite")));
            }
            psd_factor(&c.covariance)
                .map_err(|e| EwcError::Config(format!("component {k}: {e}")))?;
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(EwcError::Config(format!(
                "component weights must sum to 1, got {total}"
            )));
        }
        if !range_ok(self.context.tau) || !range_ok(self.context.e) {
            return Err(EwcError::Config(format!(
                "context ranges must satisfy 0 < lo <= hi, got tau={:?}, e={:?}",
                self.context.tau, self.context.e
            )));
        }
        if !(self.noise_temperature.is_finite() && self.noise_temperature >= 0.0) {
            return Err(EwcError::Config("noise temperature must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: PopulationSpec = serde_json::from_str(text)
            .map_err(|e| EwcError::Config(format!("population spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EwcError::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            EwcError::Config(msg) => EwcError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Draws a component index and a raw latent `(b, s, propensity)` vector.
pub fn sample_latent<R: Rng + ?Sized>(spec: &PopulationSpec, rng: &mut R) -> Result<(usize, [f64; 3])> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut component = spec.components.len() - 1;
    for (k, c) in spec.components.iter().enumerate() {
        acc += c.weight;
        if u < acc {
            component = k;
            break;
        }
    }
    let c = &spec.components[component];
    let l = psd_factor(&c.covariance)?;
    let z: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let mut x = c.mean;
    for i in 0..3 {
        for j in 0..=i {
            x[i] += l[i][j] * z[j];
        }
    }
    Ok((component, x))
}

fn latent_to_params(x: [f64; 3]) -> PreferenceParams {
    PreferenceParams {
        bias: x[0],
        slope: x[1],
        orientation: Orientation::from_sign(x[2]),
    }
}

/// Draws `count` users' parameters with their component ids.
pub fn sample_population<R: Rng + ?Sized>(
    spec: &PopulationSpec,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(PreferenceParams, usize)>> {
    spec.validate()?;
    (0..count)
        .map(|_| sample_latent(spec, rng).map(|(k, x)| (latent_to_params(x), k)))
        .collect()
}

pub fn sample_context<R: Rng + ?Sized>(ranges: &ContextRanges, rng: &mut R) -> Result<TravelContext> {
    if !range_ok(ranges.tau) || !range_ok(ranges.e) {
        return Err(EwcError::Config(format!(
            "context ranges must satisfy 0 < lo <= hi, got tau={:?}, e={:?}",
            ranges.tau, ranges.e
        )));
    }
    let draw = |r: [f64; 2], u: f64| r[0] + (r[1] - r[0]) * u;
    let tau = draw(ranges.tau, rng.random());
    let e = draw(ranges.e, rng.random());
    TravelContext::new(tau, e)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let z = x.exp();
        z / (1.0 + z)
    }
}

/// The user's choice: deterministic at temperature 0, otherwise option 2 with
/// probability `sigmoid(margin / temperature)`.
pub fn generate_choice<R: Rng + ?Sized>(
    theta: &PreferenceParams,
    ctx: &TravelContext,
    temperature: f64,
    rng: &mut R,
) -> OptionIndex {
    if temperature <= 0.0 {
        return predict_choice(theta, ctx);
    }
    let p_eco = sigmoid(theta.margin(ctx) / temperature);
    OptionIndex::from_indicator(rng.random::<f64>() < p_eco)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticUser {
    pub user_id: u64,
    pub split: Split,
    pub cluster_id: usize,
    pub theta_true: PreferenceParams,
    pub history: UserHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub users: Vec<SyntheticUser>,
}

impl SyntheticDataset {
    pub fn train(&self) -> impl Iterator<Item = &SyntheticUser> + '_ {
        self.users.iter().filter(|u| u.split == Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &SyntheticUser> + '_ {
        self.users.iter().filter(|u| u.split == Split::Test)
    }

    pub fn train_histories(&self) -> Vec<UserHistory> {
        self.train().map(|u| u.history.clone()).collect()
    }

    pub fn num_rounds(&self) -> usize {
        self.users.iter().map(|u| u.history.len()).sum()
    }
}

/// Generates `n_train` training users followed by `n_test` test users from
/// the same population. User `i` draws everything from its own stream derived
/// from `master_seed` and `i`.
pub fn generate_dataset(
    spec: &PopulationSpec,
    n_test: usize,
    n_train: usize,
    t_test: usize,
    t_train: usize,
    master_seed: u64,
) -> Result<SyntheticDataset> {
    spec.validate()?;
    if n_test == 0 || n_train == 0 || t_test == 0 || t_train == 0 {
        return Err(EwcError::Config("user and round counts must be at least 1".into()));
    }
    let users = (0..n_train + n_test)
        .map(|i| {
            let (split, rounds) = if i < n_train {
                (Split::Train, t_train)
            } else {
                (Split::Test, t_test)
            };
            let mut rng = stream_rng(master_seed, Stream::User, i as u64);
            let (cluster_id, latent) = sample_latent(spec, &mut rng)?;
            let theta = latent_to_params(latent);
            let mut contexts = Vec::with_capacity(rounds);
            let mut choices = Vec::with_capacity(rounds);
            for _ in 0..rounds {
                let ctx = sample_context(&spec.context, &mut rng)?;
                choices.push(generate_choice(&theta, &ctx, spec.noise_temperature, &mut rng));
                contexts.push(ctx);
            }
            Ok(SyntheticUser {
                user_id: i as u64,
                split,
                cluster_id,
                theta_true: theta,
                history: UserHistory::new(contexts, choices)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset { users })
}

/// Mean over test users of `(1/T) min_k dist(i, c_k)`: the average per-round
/// loss of each user's best centroid.
pub fn empirical_centroid_loss(dataset: &SyntheticDataset, centroids: &CentroidSet) -> f64 {
    let per_user: Vec<f64> = dataset
        .test()
        .map(|u| {
            let best = centroids
                .as_slice()
                .iter()
                .map(|c| loss_guided_distance(&u.history, c))
                .fold(f64::INFINITY, f64::min);
            best / u.history.len() as f64
        })
        .collect();
    if per_user.is_empty() {
        return 0.0;
    }
    per_user.iter().sum::<f64>() / per_user.len() as f64
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetRecord {
    user_id: u64,
    split: Split,
    cluster_id: usize,
    b: f64,
    s: f64,
    o: i8,
    round: usize,
    tau: f64,
    e: f64,
    choice: u8,
}

/// Writes one CSV row per (user, round) with a header.
pub fn write_dataset_csv<W: Write>(dataset: &SyntheticDataset, writer: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for u in &dataset.users {
        for (t, (ctx, choice)) in u.history.rounds().enumerate() {
            w.serialize(DatasetRecord {
                user_id: u.user_id,
                split: u.split,
                cluster_id: u.cluster_id,
                b: u.theta_true.bias,
                s: u.theta_true.slope,
                o: u.theta_true.orientation.into(),
                round: t + 1,
                tau: ctx.tau,
                e: ctx.e,
                choice: choice.as_u8(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: Read>(reader: R) -> Result<SyntheticDataset> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut order: Vec<u64> = Vec::new();
    let mut rows: HashMap<u64, Vec<DatasetRecord>> = HashMap::new();
    for (line, record) in rdr.deserialize::<DatasetRecord>().enumerate() {
        let record = record.map_err(|e| EwcError::Data(format!("row {}: {e}", line + 1)))?;
        let entry = rows.entry(record.user_id).or_insert_with(|| {
            order.push(record.user_id);
            Vec::new()
        });
        entry.push(record);
    }
    if order.is_empty() {
        return Err(EwcError::Data("dataset has no rows".into()));
    }
    let users = order
        .into_iter()
        .map(|id| {
            let records = rows.remove(&id).expect("collected above");
            let first = &records[0];
            let theta = PreferenceParams::new(first.b, first.s, Orientation::try_from(first.o)?)?;
            let mut contexts = Vec::with_capacity(records.len());
            let mut choices = Vec::with_capacity(records.len());
            for (t, r) in records.iter().enumerate() {
                if r.round != t + 1 {
                    return Err(EwcError::Data(format!(
                        "user {id}: expected round {}, found {}",
                        t + 1,
                        r.round
                    )));
                }
                if r.split != first.split
                    || r.cluster_id != first.cluster_id
                    || r.b != first.b
                    || r.s != first.s
                    || r.o != first.o
                {
                    return Err(EwcError::Data(format!(
                        "user {id}: per-user fields change between rounds"
                    )));
                }
                contexts.push(TravelContext::new(r.tau, r.e)?);
                choices.push(OptionIndex::try_from(r.choice)?);
            }
            Ok(SyntheticUser {
                user_id: id,
                split: first.split,
                cluster_id: first.cluster_id,
                theta_true: theta,
                history: UserHistory::new(contexts, choices)?,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            EwcError::InvalidInput(msg) => EwcError::Data(msg),
            other => other,
        })?;
    Ok(SyntheticDataset { users })
}

pub fn save_dataset(dataset: &SyntheticDataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset_csv(dataset, &mut buf).map_err(|source| EwcError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    crate::harness::report::write_atomic(path, &buf)
}

pub fn load_dataset(path: &Path) -> Result<SyntheticDataset> {
    let file = std::fs::File::open(path).map_err(|e| EwcError::io(path, e))?;
    read_dataset_csv(std::io::BufReader::new(file)).map_err(|e| match e {
        EwcError::Data(msg) => EwcError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}
