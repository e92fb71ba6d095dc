//! Max-pooled MIML classifier.
//!
//! Depth counts affine layers including the head:
//!
//! - depth 1: affine head on the max-pooled raw features
//! - depth 2: one relu layer per instance, max-pool, affine head
//! - depth 3: two relu layers per instance, max-pool, affine head

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Bag, MimlDataset};
use crate::error::{Error, Result};
use crate::nn::{init_net_with, Activation, FeedForwardNet, ForwardTrace, ParameterVector};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    depth: usize,
    instance_net: Option<FeedForwardNet>,
    head: FeedForwardNet,
    pooling: Pooling,
}

struct BagCache {
    traces: Vec<ForwardTrace>,
    /// Winning instance per pooled coordinate.
    argmax: Vec<usize>,
    head: ForwardTrace,
}

/// Cached forward pass over a batch.
pub struct ClassifierForward {
    bags: Vec<BagCache>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

impl ClassifierModel {
    pub fn new(feature_dim: usize, label_count: usize, depth: usize, seed: u64) -> Result<Self> {
        if feature_dim == 0 || label_count == 0 {
            return Err(Error::config("classifier dimensions must be positive"));
        }
        let hidden = 32.max(2 * label_count);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let instance_net = match depth {
            1 => None,
            2 => Some(init_net_with(&[feature_dim, hidden], Activation::Relu, Activation::Relu, &mut rng)?),
            3 => Some(init_net_with(
                &[feature_dim, hidden, hidden],
                Activation::Relu,
                Activation::Relu,
                &mut rng,
            )?),
            other => return Err(Error::config(format!("classifier depth must be 1, 2 or 3, got {other}"))),
        };
        let pooled = if depth == 1 { feature_dim } else { hidden };
        let head = init_net_with(&[pooled, label_count], Activation::Identity, Activation::Identity, &mut rng)?;
        Ok(ClassifierModel {
            depth,
            instance_net,
            head,
            pooling: Pooling::Max,
        })
    }

    pub fn from_parts(instance_net: Option<FeedForwardNet>, head: FeedForwardNet) -> Result<Self> {
        let depth = 1 + instance_net.as_ref().map_or(0, |n| n.layers().len());
        if depth > 3 {
            return Err(Error::config("classifier depth must be 1, 2 or 3"));
        }
        if let Some(net) = &instance_net {
            if net.output_dim() != head.input_dim() {
                return Err(Error::shape("instance net output must feed the head"));
            }
        }
        if head.layers().len() != 1 {
            return Err(Error::config("the classifier head is a single affine layer"));
        }
        Ok(ClassifierModel {
            depth,
            instance_net,
            head,
            pooling: Pooling::Max,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    pub fn instance_net(&self) -> Option<&FeedForwardNet> {
        self.instance_net.as_ref()
    }

    pub fn head(&self) -> &FeedForwardNet {
        &self.head
    }

    pub fn feature_dim(&self) -> usize {
        self.instance_net.as_ref().map_or(self.head.input_dim(), |n| n.input_dim())
    }

    pub fn label_count(&self) -> usize {
        self.head.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.instance_net.as_ref().map_or(0, |n| n.param_count()) + self.head.param_count()
    }

    /// Instance net parameters first, then the head.
    pub fn to_vector(&self) -> ParameterVector {
        let inst = self.instance_net.as_ref().map(|n| n.to_vector()).unwrap_or_default();
        ParameterVector::concat(&[&inst, &self.head.to_vector()])
    }

    pub fn set_from_slice(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::shape(format!(
                "{} parameters for a classifier with {}",
                params.len(),
                self.param_count()
            )));
        }
        let split = self.instance_net.as_ref().map_or(0, |n| n.param_count());
        if let Some(net) = &mut self.instance_net {
            net.set_from_slice(&params[..split])?;
        }
        self.head.set_from_slice(&params[split..])
    }

    fn forward_bag(&self, bag: &Bag) -> Result<BagCache> {
        if bag.feature_dim() != self.feature_dim() {
            return Err(Error::shape(format!(
                "bag has {} features, classifier expects {}",
                bag.feature_dim(),
                self.feature_dim()
            )));
        }
        let traces = match &self.instance_net {
            Some(net) => bag
                .instances()
                .outer_iter()
                .map(|x| net.forward_trace(x))
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        let instances = bag.instances();
        let rows: Vec<ArrayView1<f64>> = if traces.is_empty() {
            instances.outer_iter().collect()
        } else {
            traces.iter().map(|t| t.output().view()).collect()
        };
        let width = rows[0].len();
        let mut pooled = Array1::from_elem(width, f64::NEG_INFINITY);
        let mut argmax = vec![0; width];
        for (i, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v > pooled[c] {
                    pooled[c] = v;
                    argmax[c] = i;
                }
            }
        }
        let head = self.head.forward_trace(pooled.view())?;
        Ok(BagCache { traces, argmax, head })
    }

    /// Logits and sigmoid probabilities for one bag.
    pub fn predict_bag(&self, bag: &Bag) -> Result<(Array1<f64>, Array1<f64>)> {
        let cache = self.forward_bag(bag)?;
        let logits = cache.head.output().clone();
        let probs = logits.mapv(util::sigmoid);
        Ok((logits, probs))
    }

    pub fn forward(&self, bags: &[&Bag]) -> Result<ClassifierForward> {
        let t = self.label_count();
        let mut logits = Array2::zeros((bags.len(), t));
        let mut caches = Vec::with_capacity(bags.len());
        for (i, bag) in bags.iter().enumerate() {
            let cache = self.forward_bag(bag)?;
            logits.row_mut(i).assign(cache.head.output());
            caches.push(cache);
        }
        let probs = logits.mapv(util::sigmoid);
        Ok(ClassifierForward {
            bags: caches,
            logits,
            probs,
        })
    }

    pub fn predict_dataset(&self, ds: &MimlDataset) -> Result<(Array2<f64>, Array2<f64>)> {
        let refs: Vec<&Bag> = ds.bags().iter().collect();
        let fwd = self.forward(&refs)?;
        Ok((fwd.logits, fwd.probs))
    }

    /// Parameter gradient given the upstream gradient on the batch logits.
    pub fn backward(&self, fwd: &ClassifierForward, grad_logits: ArrayView2<f64>) -> Result<ParameterVector> {
        if grad_logits.dim() != fwd.logits.dim() {
            return Err(Error::shape("upstream gradient must match the batch logits"));
        }
        let split = self.instance_net.as_ref().map_or(0, |n| n.param_count());
        let mut g_inst = vec![0.0; split];
        let mut g_head = vec![0.0; self.head.param_count()];
        for (cache, g) in fwd.bags.iter().zip(grad_logits.outer_iter()) {
            let g_pooled = self.head.backward_trace(&cache.head, g, &mut g_head);
            let Some(net) = &self.instance_net else { continue };
            let width = g_pooled.len();
            for (i, tr) in cache.traces.iter().enumerate() {
                let mut upstream = Array1::zeros(width);
                let mut any = false;
                for c in 0..width {
                    if cache.argmax[c] == i {
                        upstream[c] = g_pooled[c];
                        any = true;
                    }
                }
                if any {
                    net.backward_trace(tr, upstream.view(), &mut g_inst);
                }
            }
        }
        Ok(ParameterVector::concat(&[&g_inst, &g_head]))
    }
}

/// 1 where `prob > threshold`, else 0.
pub fn binarize(probs: ArrayView2<f64>, threshold: f64) -> Result<Array2<u8>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::config(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    Ok(probs.mapv(|p| u8::from(p > threshold)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DenseLayer;
    use ndarray::array;
    use proptest::prelude::*;

    fn bag(rows: Array2<f64>) -> Bag {
        let t = 3;
        Bag::new(rows, vec![1; t]).unwrap()
    }

    #[test]
    fn depth_layouts() {
        let c1 = ClassifierModel::new(4, 3, 1, 0).unwrap();
        assert!(c1.instance_net().is_none());
        assert_eq!(c1.head().input_dim(), 4);
        let c2 = ClassifierModel::new(4, 3, 2, 0).unwrap();
        assert_eq!(c2.instance_net().unwrap().dims(), vec![4, 32]);
        assert_eq!(c2.head().dims(), vec![32, 3]);
        let c3 = ClassifierModel::new(4, 20, 3, 0).unwrap();
        assert_eq!(c3.instance_net().unwrap().dims(), vec![4, 40, 40]);
        assert_eq!(c3.label_count(), 20);
        assert!(matches!(ClassifierModel::new(4, 3, 4, 0), Err(Error::Config(_))));
    }

    #[test]
    fn single_instance_and_duplicates() {
        let c = ClassifierModel::new(2, 3, 2, 1).unwrap();
        let x = array![[0.4, -1.2]];
        let (s, _) = c.predict_bag(&bag(x.clone())).unwrap();
        let hidden = c.instance_net().unwrap().forward(x.row(0)).unwrap();
        assert_eq!(s, c.head().forward(hidden.view()).unwrap());

        let b = bag(array![[0.4, -1.2], [1.0, 0.3]]);
        let d = bag(array![[0.4, -1.2], [1.0, 0.3], [1.0, 0.3]]);
        assert_eq!(c.predict_bag(&b).unwrap(), c.predict_bag(&d).unwrap());
    }

    #[test]
    fn zero_model_gives_half() {
        let mut c = ClassifierModel::new(2, 3, 2, 1).unwrap();
        c.set_from_slice(&vec![0.0; c.param_count()]).unwrap();
        let (s, p) = c.predict_bag(&bag(array![[0.4, -1.2]])).unwrap();
        assert_eq!(s, Array1::<f64>::zeros(3));
        assert_eq!(p, Array1::from_elem(3, 0.5));
    }

    #[test]
    fn dataset_rows_match_bags() {
        let c = ClassifierModel::new(2, 3, 3, 2).unwrap();
        let bags = vec![
            bag(array![[0.4, -1.2], [1.0, 0.3]]),
            bag(array![[0.4, -1.2], [1.0, 0.3]]),
            bag(array![[-0.1, 0.2]]),
        ];
        let ds = MimlDataset::new("t", 2, 3, bags.clone()).unwrap();
        let (s, p) = c.predict_dataset(&ds).unwrap();
        assert_eq!(s.row(0), s.row(1));
        for (i, b) in bags.iter().enumerate() {
            let (si, pi) = c.predict_bag(b).unwrap();
            assert_eq!(s.row(i), si);
            assert_eq!(p.row(i), pi);
        }
        let one = MimlDataset::new("t", 2, 3, vec![bags[2].clone()]).unwrap();
        assert_eq!(c.predict_dataset(&one).unwrap().0.dim(), (1, 3));
    }

    #[test]
    fn wrong_dimension() {
        let c = ClassifierModel::new(3, 3, 2, 0).unwrap();
        assert!(matches!(c.predict_bag(&bag(array![[1.0, 2.0]])), Err(Error::Shape(_))));
    }

    #[test]
    fn binarize_examples() {
        let half = Array2::from_elem((2, 3), 0.5);
        assert_eq!(binarize(half.view(), 0.5).unwrap(), Array2::<u8>::zeros((2, 3)));
        assert_eq!(binarize(array![[0.9, 0.1]].view(), 0.5).unwrap(), array![[1u8, 0]]);
        let b = binarize(array![[0.9, 0.1, 0.7]].view(), 0.5).unwrap();
        assert_eq!(binarize(b.mapv(f64::from).view(), 0.5).unwrap(), b);
        assert!(matches!(binarize(half.view(), 1.0), Err(Error::Config(_))));
        assert!(matches!(binarize(half.view(), 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for depth in 1..=3 {
            let c = ClassifierModel::new(3, 4, depth, 9).unwrap();
            let bags = [
                bag(array![[0.3, -0.2, 0.9], [1.0, 0.05, 2.0], [0.4, 0.1, -0.5]]),
                bag(array![[0.1, 0.4, -0.6]]),
            ];
            let refs: Vec<&Bag> = bags.iter().collect();
            let w = array![[0.3, -1.0, 0.5, 0.2], [-0.4, 0.6, 0.1, 0.9]];
            let err = crate::nn::grad_check(
                |p| {
                    let mut m = c.clone();
                    m.set_from_slice(p)?;
                    let fwd = m.forward(&refs)?;
                    Ok(((&fwd.logits * &w).sum(), m.backward(&fwd, w.view())?))
                },
                &c.to_vector(),
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "depth {depth}: {err}");
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let c = ClassifierModel::new(3, 4, 3, 5).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        let back: ClassifierModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        let head = FeedForwardNet::new(vec![DenseLayer::new(Array2::zeros((2, 3)), Array1::zeros(2), Activation::Identity).unwrap()]).unwrap();
        assert_eq!(ClassifierModel::from_parts(None, head).unwrap().depth(), 1);
    }

    proptest! {
        #[test]
        fn permutation_invariance_and_monotone_pooling(seed in 0u64..300, rot in 1usize..3) {
            let c = ClassifierModel::new(2, 3, 2, seed).unwrap();
            let rows = Array2::from_shape_fn((3, 2), |(r, k)| ((seed as usize * 3 + r * 7 + k) as f64).sin());
            let mut rotated = Array2::zeros((3, 2));
            for r in 0..3 {
                rotated.row_mut(r).assign(&rows.row((r + rot) % 3));
            }
            prop_assert_eq!(c.predict_bag(&bag(rows.clone())).unwrap(), c.predict_bag(&bag(rotated)).unwrap());

            let net = c.instance_net().unwrap();
            let pool = |m: &Array2<f64>| {
                let mut out = Array1::from_elem(net.output_dim(), f64::NEG_INFINITY);
                for r in m.outer_iter() {
                    let h = net.forward(r).unwrap();
                    out.zip_mut_with(&h, |a, &b| *a = a.max(b));
                }
                out
            };
            let mut more = Array2::zeros((4, 2));
            more.slice_mut(ndarray::s![..3, ..]).assign(&rows);
            more.row_mut(3).assign(&array![0.7, -0.3]);
            let before = pool(&rows);
            let after = pool(&more);
            prop_assert!(before.iter().zip(after.iter()).all(|(a, b)| b >= a));
        }
    }
}
