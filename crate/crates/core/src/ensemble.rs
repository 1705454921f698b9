//! Anchored ensembles: every member is regularised toward its own draw from
//! the parameter prior, and member outputs are pooled into a predictive
//! distribution.
//!
//! Anchors are drawn from the prior itself (`S_0 = S_prior`). The exact
//! anchor covariance needs the likelihood covariance, which a network does not
//! expose; it is available for linear models through
//! [`crate::gaussian::anchor_distribution`] and [`Ensemble::from_anchors`].

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::DiagGaussian;
use crate::network::{self, Activation, Batch, NetworkParams, NetworkShape, TrainConfig};
use crate::predictive::PredictiveDist;

/// Zero-mean diagonal prior over network parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    /// First-layer weights.
    pub first_layer_var: f64,
    /// First-layer biases.
    pub bias_var: f64,
    /// Output weights get `output_layer_var_base / H`.
    pub output_layer_var_base: f64,
    pub output_bias_var: f64,
    /// RBF centres.
    pub center_var: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            first_layer_var: 1.0,
            bias_var: 1.0,
            output_layer_var_base: 1.0,
            output_bias_var: 1.0,
            center_var: 1.0,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("first_layer_var", self.first_layer_var),
            ("bias_var", self.bias_var),
            ("output_layer_var_base", self.output_layer_var_base),
            ("output_bias_var", self.output_bias_var),
            ("center_var", self.center_var),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("prior {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Diagonal prior over the flattened parameter vector of `shape`.
pub fn materialize_prior(shape: &NetworkShape, spec: &PriorSpec) -> Result<DiagGaussian> {
    spec.validate()?;
    let layout = shape.layout();
    let h = shape.hidden_width as f64;
    let mut var = DVector::zeros(shape.num_params());
    let first = if shape.activation == Activation::Rbf {
        spec.center_var
    } else {
        spec.first_layer_var
    };
    var.rows_mut(layout.first_weights.start, layout.first_weights.len())
        .fill(first);
    if let Some(b) = layout.first_biases {
        var.rows_mut(b.start, b.len()).fill(spec.bias_var);
    }
    var.rows_mut(layout.output_weights.start, layout.output_weights.len())
        .fill(spec.output_layer_var_base / h);
    var[layout.output_bias] = spec.output_bias_var;
    Ok(DiagGaussian::zero_mean(var))
}

/// `Gamma_kk = sigma_eps^2 / prior_var_k`.
pub fn regulariser(prior_var: &DVector<f64>, sigma_eps_sq: f64) -> DVector<f64> {
    prior_var.map(|v| sigma_eps_sq / v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchoredMember {
    pub params: NetworkParams,
    pub anchor: DVector<f64>,
    pub gamma: DVector<f64>,
    pub seed: u64,
}

impl AnchoredMember {
    pub fn loss(&self, batch: Batch<'_>) -> Result<f64> {
        network::anchored_loss(&self.params, &self.anchor, &self.gamma, batch)
    }
}

#[derive(Debug, Clone)]
pub struct MemberSummary {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    shape: NetworkShape,
    prior: Option<PriorSpec>,
    sigma_eps_sq: f64,
    base_seed: u64,
    members: Vec<AnchoredMember>,
}

fn check_noise(sigma_eps_sq: f64) -> Result<()> {
    if !(sigma_eps_sq > 0.0 && sigma_eps_sq.is_finite()) {
        return Err(Error::invalid(format!(
            "noise variance must be positive, got {sigma_eps_sq}"
        )));
    }
    Ok(())
}

/// `m` members with anchors drawn from the materialised prior using seeds
/// `base_seed + i`; parameters start at the anchors.
pub fn build_ensemble(
    m: usize,
    shape: NetworkShape,
    spec: &PriorSpec,
    sigma_eps_sq: f64,
    base_seed: u64,
) -> Result<Ensemble> {
    if m == 0 {
        return Err(Error::invalid("ensemble needs at least one member"));
    }
    check_noise(sigma_eps_sq)?;
    let prior = materialize_prior(&shape, spec)?;
    let gamma = regulariser(&prior.var, sigma_eps_sq);
    let anchors = (0..m as u64).map(|i| {
        let seed = base_seed.wrapping_add(i);
        (seed, prior.sample(seed))
    });
    let mut ens = Ensemble::from_anchors(shape, gamma, anchors, sigma_eps_sq)?;
    ens.prior = Some(*spec);
    ens.base_seed = base_seed;
    Ok(ens)
}

impl Ensemble {
    /// Members with caller-supplied anchors and a shared regulariser.
    pub fn from_anchors(
        shape: NetworkShape,
        gamma: DVector<f64>,
        anchors: impl IntoIterator<Item = (u64, DVector<f64>)>,
        sigma_eps_sq: f64,
    ) -> Result<Self> {
        check_noise(sigma_eps_sq)?;
        if gamma.len() != shape.num_params() {
            return Err(Error::DimensionMismatch {
                context: "regulariser length",
                expected: shape.num_params(),
                found: gamma.len(),
            });
        }
        let members = anchors
            .into_iter()
            .map(|(seed, anchor)| {
                Ok(AnchoredMember {
                    params: NetworkParams::new(shape, anchor.clone())?,
                    anchor,
                    gamma: gamma.clone(),
                    seed,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if members.is_empty() {
            return Err(Error::invalid("ensemble needs at least one member"));
        }
        Ok(Self {
            shape,
            prior: None,
            sigma_eps_sq,
            base_seed: members[0].seed,
            members,
        })
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn prior_spec(&self) -> Option<&PriorSpec> {
        self.prior.as_ref()
    }

    pub fn sigma_eps_sq(&self) -> f64 {
        self.sigma_eps_sq
    }

    pub fn members(&self) -> &[AnchoredMember] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [AnchoredMember] {
        &mut self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Trains every member on the same data, each against its own anchor.
    /// Members are independent, so the result does not depend on `threads`.
    pub fn train(
        &mut self,
        batch: Batch<'_>,
        config: &TrainConfig,
        threads: Option<usize>,
    ) -> Result<Vec<MemberSummary>> {
        config.validate()?;
        let run =
            |members: &mut [AnchoredMember]| -> Result<Vec<MemberSummary>> {
                members
                    .par_iter_mut()
                    .enumerate()
                    .map(|(index, member)| {
                        let out = network::train(&member.params, &member.anchor, &member.gamma, batch, config)
                            .map_err(|e| Error::Member {
                                index,
                                source: Box::new(e),
                            })?;
                        member.params = out.params;
                        Ok(MemberSummary {
                            initial_loss: out.initial_loss,
                            final_loss: out.final_loss,
                            epochs_run: out.epochs_run,
                        })
                    })
                    .collect()
            };
        match threads {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
                .install(|| run(&mut self.members)),
            None => run(&mut self.members),
        }
    }

    /// Output of every member at every query row, `Q x m`.
    pub fn member_outputs(&self, x_query: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let cols = self
            .members
            .iter()
            .map(|m| m.params.forward_batch(x_query))
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_columns(&cols))
    }

    pub fn predict(&self, x_query: &DMatrix<f64>) -> Result<Vec<PredictiveDist>> {
        if x_query.nrows() == 0 {
            return Err(Error::invalid("no query points"));
        }
        Ok(pool_outputs(&self.member_outputs(x_query)?, self.sigma_eps_sq))
    }
}

/// Mean and unbiased sample variance across the columns of each row; a single
/// column has zero epistemic variance.
pub fn pool_outputs(outputs: &DMatrix<f64>, sigma_eps_sq: f64) -> Vec<PredictiveDist> {
    let m = outputs.ncols();
    outputs
        .row_iter()
        .map(|row| {
            let mean = row.sum() / m as f64;
            let var = if m > 1 {
                row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64
            } else {
                0.0
            };
            PredictiveDist::new(mean, var, sigma_eps_sq)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Persistence

const MEMBER_MAGIC: [u8; 4] = *b"ANCM";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Directory manifest. Member files use the parameter-file header (magic
/// `ANCM`) followed by the member seed (u64) and the parameter, anchor and
/// regulariser vectors, all little-endian.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub format: String,
    pub shape: NetworkShape,
    pub prior: Option<PriorSpec>,
    pub sigma_eps_sq: f64,
    pub base_seed: u64,
    pub members: Vec<ManifestMember>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestMember {
    pub file: String,
    pub seed: u64,
}

impl Ensemble {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.members.len());
        for (i, member) in self.members.iter().enumerate() {
            let file = format!("member_{i:04}.bin");
            let mut w = BufWriter::new(File::create(dir.join(&file))?);
            network::format::write_header(&mut w, MEMBER_MAGIC, &self.shape)?;
            w.write_all(&member.seed.to_le_bytes())?;
            for v in [member.params.theta(), &member.anchor, &member.gamma] {
                network::format::write_vector(&mut w, v)?;
            }
            w.flush()?;
            entries.push(ManifestMember {
                file,
                seed: member.seed,
            });
        }
        let manifest = EnsembleManifest {
            format: "anchored-ensemble/1".into(),
            shape: self.shape,
            prior: self.prior,
            sigma_eps_sq: self.sigma_eps_sq,
            base_seed: self.base_seed,
            members: entries,
        };
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: EnsembleManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        let with_path = |path: PathBuf| {
            move |e: Error| match e {
                Error::Format { message, .. } => Error::Format {
                    path: path.clone(),
                    message,
                },
                other => other,
            }
        };
        let mut members = Vec::with_capacity(manifest.members.len());
        for entry in &manifest.members {
            let path = dir.join(&entry.file);
            let mut r = BufReader::new(File::open(&path)?);
            let shape = network::format::read_header(&mut r, MEMBER_MAGIC).map_err(with_path(path.clone()))?;
            if shape != manifest.shape {
                return Err(Error::Format {
                    path,
                    message: "member shape differs from manifest".into(),
                });
            }
            let mut seed = [0u8; 8];
            r.read_exact(&mut seed)?;
            let p = shape.num_params();
            let theta = network::format::read_vector(&mut r, p)?;
            let anchor = network::format::read_vector(&mut r, p)?;
            let gamma = network::format::read_vector(&mut r, p)?;
            members.push(AnchoredMember {
                params: NetworkParams::new(shape, theta)?,
                anchor,
                gamma,
                seed: u64::from_le_bytes(seed),
            });
        }
        if members.is_empty() {
            return Err(Error::Format {
                path: dir.join(MANIFEST_FILE),
                message: "manifest lists no members".into(),
            });
        }
        check_noise(manifest.sigma_eps_sq)?;
        Ok(Self {
            shape: manifest.shape,
            prior: manifest.prior,
            sigma_eps_sq: manifest.sigma_eps_sq,
            base_seed: manifest.base_seed,
            members,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_layout_and_width_scaling() {
        let shape = NetworkShape::new(1, 1, Activation::Relu).unwrap();
        let p = materialize_prior(&shape, &PriorSpec::default()).unwrap();
        assert_eq!(p.var.as_slice(), &[1.0, 1.0, 1.0, 1.0]);

        let spec = PriorSpec {
            first_layer_var: 2.0,
            bias_var: 3.0,
            output_layer_var_base: 4.0,
            output_bias_var: 5.0,
            center_var: 6.0,
        };
        let narrow = materialize_prior(&NetworkShape::new(2, 4, Activation::Erf).unwrap(), &spec).unwrap();
        let wide = materialize_prior(&NetworkShape::new(2, 8, Activation::Erf).unwrap(), &spec).unwrap();
        assert_eq!(narrow.var.rows(12, 4).as_slice(), &[1.0; 4]);
        assert_eq!(wide.var.rows(24, 8).as_slice(), &[0.5; 8]);
        assert_eq!(narrow.var.rows(0, 8).as_slice(), &[2.0; 8]);
        assert_eq!(narrow.var.rows(8, 4).as_slice(), &[3.0; 4]);
        assert_eq!(narrow.var[16], 5.0);

        let rbf = materialize_prior(&NetworkShape::new(2, 4, Activation::Rbf).unwrap(), &spec).unwrap();
        assert_eq!(rbf.var.rows(0, 8).as_slice(), &[6.0; 8]);
        assert_eq!(rbf.var.rows(8, 4).as_slice(), &[1.0; 4]);
        assert_eq!(rbf.var[12], 5.0);
    }

    #[test]
    fn build_is_deterministic_and_anchored() {
        let shape = NetworkShape::new(2, 5, Activation::Relu).unwrap();
        let spec = PriorSpec::default();
        let a = build_ensemble(4, shape, &spec, 0.1, 42).unwrap();
        let b = build_ensemble(4, shape, &spec, 0.1, 42).unwrap();
        assert_eq!(a, b);
        let prior = materialize_prior(&shape, &spec).unwrap();
        for (i, m) in a.members().iter().enumerate() {
            assert_eq!(m.seed, 42 + i as u64);
            assert_eq!(m.params.theta(), &m.anchor);
            for (g, v) in m.gamma.iter().zip(prior.var.iter()) {
                assert_eq!(*g, 0.1 / v);
            }
        }
        assert_ne!(a.members()[0].anchor, a.members()[1].anchor);
        assert!(build_ensemble(0, shape, &spec, 0.1, 0).is_err());
    }

    #[test]
    fn pooled_moments() {
        let out = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 5.0, 5.0]);
        let p = pool_outputs(&out, 0.25);
        assert_eq!(p[0].mean, 2.0);
        assert_eq!(p[0].epistemic_var, 2.0);
        assert_eq!(p[1].epistemic_var, 0.0);
        assert_eq!(p[1].total_var(), 0.25);

        let single = pool_outputs(&DMatrix::from_row_slice(1, 1, &[7.0]), 0.5);
        assert_eq!(single[0].epistemic_var, 0.0);
        assert_eq!(single[0].total_var(), 0.5);
    }

    #[test]
    fn save_and_load_is_bit_exact() {
        let shape = NetworkShape::new(1, 3, Activation::Rbf).unwrap();
        let ens = build_ensemble(3, shape, &PriorSpec::default(), 0.05, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ens.save(dir.path()).unwrap();
        let back = Ensemble::load(dir.path()).unwrap();
        assert_eq!(back, ens);
        let xq = DMatrix::from_row_slice(2, 1, &[0.3, -1.0]);
        assert_eq!(back.predict(&xq).unwrap(), ens.predict(&xq).unwrap());
    }
}
