//! Finite-difference gradient checks over every tensor op and the composite
//! detector blocks, in double precision.

use fanet_tensor::ops::{
    cat_channels, concat_channels, conv2d, dot, linear_combination, maxpool2x2, narrow_channels,
    relu, upsample_bilinear2x, Conv2dOpts,
};
use fanet_tensor::{grad_check, GradCheckReport, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agglomeration::{ABlock, ContextModule};
use crate::anchors::MatchAssignment;
use crate::config::{AblockConfig, LossConfig};
use crate::loss::{hierarchical_loss, multibox_loss};
use crate::model::LevelPredictions;
use crate::Result;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCase {
    /// `group/input`, e.g. `conv3x3/weight`.
    pub name: String,
    pub report: GradCheckReport,
}

impl GradCase {
    pub fn passes(&self) -> bool {
        self.report.passes(TOLERANCE)
    }
}

struct Suite {
    rng: ChaCha8Rng,
    cases: Vec<GradCase>,
}

impl Suite {
    fn values(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.rng.gen_range(-1.0..1.0)).collect()
    }

    fn leaf(&mut self, shape: &[usize]) -> Tensor<f64> {
        let v = self.values(shape.iter().product());
        Tensor::leaf(shape, v).expect("shape matches data")
    }

    fn check<F>(&mut self, name: String, f: F, t: &Tensor<f64>) -> Result<()>
    where
        F: FnMut() -> fanet_tensor::Result<Tensor<f64>>,
    {
        let report = grad_check(f, t, STEP)?;
        self.cases.push(GradCase { name, report });
        Ok(())
    }

    /// Projects `y` onto fixed random weights so every output element matters.
    fn projected<F>(&mut self, name: &str, inputs: &[(&str, &Tensor<f64>)], f: F) -> Result<()>
    where
        F: Fn() -> fanet_tensor::Result<Tensor<f64>>,
    {
        let n = f()?.numel();
        let w = self.values(n);
        for (label, t) in inputs {
            self.check(format!("{name}/{label}"), || dot(&f()?, &w), t)?;
        }
        Ok(())
    }

    fn tensor_ops(&mut self) -> Result<()> {
        let kernels = [
            ("conv3x3", 3, 3, Conv2dOpts::same(3, 3)),
            ("conv1x3", 1, 3, Conv2dOpts::same(1, 3)),
            ("conv3x1", 3, 1, Conv2dOpts::same(3, 1)),
            ("conv1x1", 1, 1, Conv2dOpts::new(1, 0)),
            ("conv3x3s2", 3, 3, Conv2dOpts::new(2, 1)),
        ];
        for (name, kh, kw, opts) in kernels {
            let x = self.leaf(&[2, 3, 5, 5]);
            let w = self.leaf(&[4, 3, kh, kw]);
            let b = self.leaf(&[4]);
            self.projected(name, &[("input", &x), ("weight", &w), ("bias", &b)], || {
                conv2d(&x, &w, Some(&b), opts)
            })?;
        }

        let x = self.leaf(&[2, 3, 4, 4]);
        self.projected("relu", &[("input", &x)], || Ok(relu(&x)))?;
        let x = self.leaf(&[1, 2, 6, 4]);
        self.projected("maxpool", &[("input", &x)], || maxpool2x2(&x))?;
        let x = self.leaf(&[2, 2, 3, 4]);
        self.projected("upsample", &[("input", &x)], || upsample_bilinear2x(&x))?;

        let a = self.leaf(&[2, 3, 2, 2]);
        let b = self.leaf(&[2, 1, 2, 2]);
        self.projected("concat", &[("a", &a), ("b", &b)], || concat_channels(&a, &b))?;
        let c = self.leaf(&[2, 2, 2, 2]);
        self.projected("cat3", &[("a", &a), ("b", &b), ("c", &c)], || {
            cat_channels(&[a.clone(), b.clone(), c.clone()])
        })?;
        self.projected("narrow", &[("input", &a)], || narrow_channels(&a, 1, 2))?;

        let p = self.leaf(&[5]);
        let q = self.leaf(&[5]);
        self.projected("lincomb", &[("a", &p), ("b", &q)], || {
            linear_combination(&[p.clone(), q.clone()], &[0.3, -2.0])
        })?;
        Ok(())
    }

    fn blocks(&mut self) -> Result<()> {
        let cfg = AblockConfig {
            context_channels: 8,
            ..AblockConfig::default()
        };
        let mut store = ParamStore::<f64>::new();
        let context = ContextModule::new(&mut store, "context", 4, &cfg, &mut self.rng)?;
        let x = self.leaf(&[1, 4, 4, 4]);
        let mut inputs: Vec<(String, Tensor<f64>)> = vec![("input".into(), x.clone())];
        inputs.extend(store.iter().map(|p| (p.name().to_string(), p.tensor().clone())));
        let f = || context.forward(&x).map_err(to_tensor_error);
        let refs: Vec<(&str, &Tensor<f64>)> = inputs.iter().map(|(n, t)| (n.as_str(), t)).collect();
        self.projected("context_module", &refs, f)?;

        let mut store = ParamStore::<f64>::new();
        let block = ABlock::new(&mut store, "ablock", 4, 16, &cfg, &mut self.rng)?;
        let shallow = self.leaf(&[1, 4, 4, 4]);
        let deep = self.leaf(&[1, 16, 2, 2]);
        let mut inputs: Vec<(String, Tensor<f64>)> =
            vec![("shallow".into(), shallow.clone()), ("deep".into(), deep.clone())];
        inputs.extend(store.iter().map(|p| (p.name().to_string(), p.tensor().clone())));
        let f = || block.forward(&shallow, &deep).map_err(to_tensor_error);
        let refs: Vec<(&str, &Tensor<f64>)> = inputs.iter().map(|(n, t)| (n.as_str(), t)).collect();
        self.projected("a_block", &refs, f)
    }

    fn losses(&mut self) -> Result<()> {
        let shapes = [(4, 4), (2, 2)];
        let batch = 2;
        let anchors: usize = shapes.iter().map(|(h, w)| h * w).sum();
        let mut level = || LevelPredictions {
            cls: shapes.iter().map(|&(h, w)| self.leaf(&[batch, 2, h, w])).collect(),
            loc: shapes.iter().map(|&(h, w)| self.leaf(&[batch, 4, h, w])).collect(),
        };
        let levels = [level(), level()];
        let assigns: Vec<MatchAssignment> = (0..batch)
            .map(|_| {
                let labels: Vec<Option<u32>> = (0..anchors)
                    .map(|_| self.rng.gen_bool(0.15).then_some(0))
                    .collect();
                let targets = labels
                    .iter()
                    .map(|l| match l {
                        Some(_) => std::array::from_fn(|_| self.rng.gen_range(-0.3..0.3)),
                        None => [0.0; 4],
                    })
                    .collect();
                MatchAssignment { labels, targets }
            })
            .collect();
        let cfg = LossConfig::default();
        let preds = &levels[0];
        let mb = || multibox_loss(preds, &assigns, &cfg).map(|(t, _)| t).map_err(to_tensor_error);
        for (l, t) in preds.cls.iter().enumerate() {
            self.check(format!("multibox/cls{l}"), mb, t)?;
        }
        for (l, t) in preds.loc.iter().enumerate() {
            self.check(format!("multibox/loc{l}"), mb, t)?;
        }
        let refs = [&levels[0], &levels[1]];
        let hl = || {
            hierarchical_loss(&refs, &assigns, &[0.4, 0.6], &cfg)
                .map(|(t, _)| t)
                .map_err(to_tensor_error)
        };
        for (k, preds) in levels.iter().enumerate() {
            self.check(format!("hierarchical/level{k}.cls0"), hl, &preds.cls[0])?;
            self.check(format!("hierarchical/level{k}.loc1"), hl, &preds.loc[1])?;
        }
        Ok(())
    }
}

fn to_tensor_error(e: crate::FanetError) -> fanet_tensor::TensorError {
    match e {
        crate::FanetError::Tensor(t) => t,
        other => fanet_tensor::TensorError::shape("gradsuite", other.to_string()),
    }
}

/// Runs every check with a fixed seed. Results are in a stable order.
pub fn run(seed: u64) -> Result<Vec<GradCase>> {
    let mut suite = Suite {
        rng: ChaCha8Rng::seed_from_u64(seed),
        cases: Vec::new(),
    };
    suite.tensor_ops()?;
    suite.blocks()?;
    suite.losses()?;
    Ok(suite.cases)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_passes() {
        let cases = run(0).unwrap();
        assert!(cases.len() > 30);
        for c in &cases {
            assert!(c.passes(), "{}: {:?}", c.name, c.report);
        }
    }
}
