//! Simulated observational studies with a known treatment effect.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{AnalysisDataset, ColumnData, CovariateSpec, DatasetSchema};
use crate::stats::sigmoid;

/// Parameters of the confounded generator:
/// `x, z ~ N(0, 1)`, `D ~ Bernoulli(sigmoid(intercept + slope·x))`,
/// `Y = effect·D + x + N(0, 1)`. `z` is unrelated to both.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Confounded {
    pub n: usize,
    pub effect: f64,
    pub intercept: f64,
    pub slope: f64,
}

impl Default for Confounded {
    fn default() -> Self {
        Self { n: 2000, effect: 2.0, intercept: -0.5, slope: 1.0 }
    }
}

pub fn schema() -> DatasetSchema {
    DatasetSchema {
        unit_id: "unit_id".into(),
        outcome: "y".into(),
        treatment: Some("d".into()),
        date: None,
        covariates: vec![CovariateSpec::continuous("x"), CovariateSpec::continuous("z")],
    }
}

impl Confounded {
    pub fn generate(&self, seed: u64) -> AnalysisDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(self.n);
        let mut z = Vec::with_capacity(self.n);
        let mut d = Vec::with_capacity(self.n);
        let mut y = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            let xi: f64 = rng.sample(StandardNormal);
            let zi: f64 = rng.sample(StandardNormal);
            let di = u8::from(rng.random::<f64>() < sigmoid(self.intercept + self.slope * xi));
            let noise: f64 = rng.sample(StandardNormal);
            x.push(xi);
            z.push(zi);
            d.push(di);
            y.push(self.effect * f64::from(di) + xi + noise);
        }
        AnalysisDataset::from_parts(
            schema(),
            (0..self.n).map(|i| format!("u{i:06}")).collect(),
            vec![ColumnData::Numeric(x), ColumnData::Numeric(z)],
            y,
            Some(d),
            None,
        )
        .expect("generated data satisfies the dataset invariants")
    }
}
