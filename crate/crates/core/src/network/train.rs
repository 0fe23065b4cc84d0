//! Minibatch SGD with momentum and L2 weight decay.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::PatchDataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numerics::Rng;

use super::eval::evaluate_with;
use super::model::{Gradients, Network};

/// Samples per gradient work item. Chunk sums are combined in chunk order,
/// so the batch gradient does not depend on how chunks were scheduled.
pub const GRADIENT_CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdParams {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl SgdParams {
    /// Centre of the default tuning box: lr 10^-2.5, weight decay 10^-4,
    /// momentum 0.495, batch 136.
    pub fn box_midpoint() -> Self {
        SgdParams {
            learning_rate: 10f64.powf(-2.5),
            weight_decay: 1e-4,
            momentum: 0.495,
            batch_size: 136,
            epochs: 30,
            seed: 0,
        }
    }

    /// A zero learning rate is accepted and leaves the weights untouched.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::validation(m));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!(
                "learning rate {} must be finite and nonnegative",
                self.learning_rate
            ));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!(
                "weight decay {} must be finite and nonnegative",
                self.weight_decay
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} must lie in [0, 1)", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epoch count must be positive".into());
        }
        Ok(())
    }
}

impl Default for SgdParams {
    fn default() -> Self {
        SgdParams::box_midpoint()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean loss over the epoch's minibatches, measured before each update.
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn last(&self) -> Option<&EpochLog> {
        self.epochs.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_acc\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                e.epoch, e.train_loss, e.train_acc, e.val_acc
            );
        }
        out
    }
}

fn check_dataset(net: &Network, data: &PatchDataset, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::validation(format!("{what} set is empty")));
    }
    if data.dims != net.config().input_dims {
        return Err(Error::validation(format!(
            "{what} set dims {:?} do not match the network input {:?}",
            data.dims,
            net.config().input_dims
        )));
    }
    Ok(())
}

/// Per-layer momentum buffers, shaped like the parameters.
struct Velocity {
    layers: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Velocity {
    fn new(net: &Network) -> Self {
        Velocity {
            layers: net
                .layers()
                .iter()
                .map(|l| l.param_counts().map(|(w, b)| (vec![0.0; w], vec![0.0; b])))
                .collect(),
        }
    }
}

/// `v = momentum v - lr (g + wd w)`, `w += v`; biases are not decayed.
fn apply_update(net: &mut Network, grads: &Gradients, velocity: &mut Velocity, p: &SgdParams) {
    let (lr, wd, mu) = (p.learning_rate, p.weight_decay, p.momentum);
    for ((layer, g), v) in net
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut velocity.layers)
    {
        let (Some((w, b)), Some(g), Some((vw, vb))) = (layer.params_mut(), g, v.as_mut()) else {
            continue;
        };
        for ((wi, gi), vi) in w.iter_mut().zip(&g.weights).zip(vw.iter_mut()) {
            *vi = mu * *vi - lr * (gi + wd * *wi);
            *wi += *vi;
        }
        for ((bi, gi), vi) in b.iter_mut().zip(&g.bias).zip(vb.iter_mut()) {
            *vi = mu * *vi - lr * gi;
            *bi += *vi;
        }
    }
}

/// Mean gradient, summed loss and correct count over `indices`.
fn batch_gradient(
    net: &Network,
    data: &PatchDataset,
    indices: &[usize],
    exec: Execution,
) -> Result<(Gradients, f64, usize)> {
    let chunks: Vec<&[usize]> = indices.chunks(GRADIENT_CHUNK).collect();
    let parts = exec.map_slice(&chunks, |chunk| -> Result<(Gradients, f64, usize)> {
        let mut g = net.zero_gradients();
        let mut loss = 0.0;
        let mut correct = 0;
        for &i in chunk.iter() {
            let rec = &data.records[i];
            let class = rec.label.class();
            let (l, pred) = net.accumulate_gradient(&rec.patch, class, &mut g)?;
            loss += l;
            correct += usize::from(pred == class);
        }
        Ok((g, loss, correct))
    });
    let mut total: Option<Gradients> = None;
    let (mut loss, mut correct) = (0.0, 0);
    for part in parts {
        let (g, l, c) = part?;
        loss += l;
        correct += c;
        match total.as_mut() {
            None => total = Some(g),
            Some(t) => t.add_assign(&g),
        }
    }
    let mut total = total.expect("batch is non-empty");
    total.scale(1.0 / indices.len() as f64);
    Ok((total, loss, correct))
}

/// Trains `net` in place and returns per-epoch statistics. Each epoch
/// reshuffles the training set from the run seed; the final partial
/// minibatch is kept.
pub fn train(
    net: &mut Network,
    train_set: &PatchDataset,
    val_set: &PatchDataset,
    params: &SgdParams,
) -> Result<TrainingLog> {
    train_with(net, train_set, val_set, params, Execution::default())
}

pub fn train_with(
    net: &mut Network,
    train_set: &PatchDataset,
    val_set: &PatchDataset,
    params: &SgdParams,
    exec: Execution,
) -> Result<TrainingLog> {
    train_until(net, train_set, val_set, params, exec, |_| false)
}

/// Like [`train_with`], but stops after any epoch for which `stop` returns
/// true. `params.epochs` is still the upper bound.
pub fn train_until(
    net: &mut Network,
    train_set: &PatchDataset,
    val_set: &PatchDataset,
    params: &SgdParams,
    exec: Execution,
    mut stop: impl FnMut(&EpochLog) -> bool,
) -> Result<TrainingLog> {
    params.validate()?;
    check_dataset(net, train_set, "training")?;
    check_dataset(net, val_set, "validation")?;

    let mut rng = Rng::new(params.seed);
    let mut velocity = Velocity::new(net);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = TrainingLog::default();
    for epoch in 1..=params.epochs {
        rng.shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for batch in order.chunks(params.batch_size) {
            let (grads, loss, c) = batch_gradient(net, train_set, batch, exec)?;
            loss_sum += loss;
            correct += c;
            apply_update(net, &grads, &mut velocity, params);
        }
        let val = evaluate_with(net, val_set, exec)?;
        log.epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_loss: val.mean_loss,
            val_acc: val.accuracy,
        });
        if stop(log.last().expect("just pushed")) {
            break;
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_synthetic_dataset, normalize, EventKind};
    use crate::network::{evaluate, preset_config};

    fn tc_data(n: usize, seed: u64) -> PatchDataset {
        let ds =
            build_synthetic_dataset(EventKind::TropicalCyclone, n, n, &mut Rng::new(seed)).unwrap();
        normalize(&ds).unwrap().0
    }

    fn tc_net(seed: u64) -> Network {
        Network::build(
            preset_config(EventKind::TropicalCyclone),
            &mut Rng::new(seed),
        )
        .unwrap()
    }

    #[test]
    fn early_stop_truncates_the_log() {
        let data = tc_data(4, 3);
        let mut a = tc_net(2);
        let mut b = tc_net(2);
        let p = SgdParams {
            epochs: 5,
            batch_size: 4,
            ..SgdParams::box_midpoint()
        };
        let full = train(&mut a, &data, &data, &p).unwrap();
        let short = train_until(&mut b, &data, &data, &p, Execution::default(), |e| {
            e.epoch == 2
        })
        .unwrap();
        assert_eq!(short.epochs.len(), 2);
        assert_eq!(short.epochs[..], full.epochs[..2]);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let data = tc_data(6, 1);
        let mut net = tc_net(2);
        let before = net.clone();
        let p = SgdParams {
            learning_rate: 0.0,
            epochs: 2,
            batch_size: 5,
            ..SgdParams::box_midpoint()
        };
        let log = train(&mut net, &data, &data, &p).unwrap();
        assert_eq!(net, before);
        assert_eq!(log.epochs.len(), 2);
    }

    #[test]
    fn decay_scales_weights_without_gradient() {
        let mut net = tc_net(3);
        let before = net.clone();
        let grads = net.zero_gradients();
        let mut v = Velocity::new(&net);
        let p = SgdParams {
            learning_rate: 0.1,
            weight_decay: 0.01,
            momentum: 0.0,
            ..SgdParams::box_midpoint()
        };
        apply_update(&mut net, &grads, &mut v, &p);
        apply_update(&mut net, &grads, &mut v, &p);
        for (a, b) in net.layers().iter().zip(before.layers()) {
            if let (Some((wa, ba)), Some((wb, bb))) = (a.params(), b.params()) {
                for (x, y) in wa.iter().zip(wb) {
                    assert!((x - y * 0.999 * 0.999).abs() <= 1e-14 * y.abs());
                }
                assert_eq!(ba, bb);
            }
        }
    }

    #[test]
    fn momentum_accumulates() {
        let mut net = tc_net(3);
        let w0 = net.layers()[0].params().unwrap().1[0];
        let mut grads = net.zero_gradients();
        grads.layers[0].as_mut().unwrap().bias[0] = 1.0;
        let mut v = Velocity::new(&net);
        let p = SgdParams {
            learning_rate: 0.1,
            weight_decay: 0.0,
            momentum: 0.5,
            ..SgdParams::box_midpoint()
        };
        apply_update(&mut net, &grads, &mut v, &p);
        apply_update(&mut net, &grads, &mut v, &p);
        let w2 = net.layers()[0].params().unwrap().1[0];
        assert!((w2 - (w0 - 0.1 - 0.15)).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_log_and_weights() {
        let data = tc_data(10, 5);
        let p = SgdParams {
            epochs: 2,
            batch_size: 7,
            seed: 11,
            ..SgdParams::box_midpoint()
        };
        let (mut a, mut b) = (tc_net(1), tc_net(1));
        let la = train_with(&mut a, &data, &data, &p, Execution::Sequential).unwrap();
        let lb = train_with(&mut b, &data, &data, &p, Execution::Parallel).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a, b);
    }

    #[test]
    fn single_batch_overfits() {
        let data = tc_data(4, 9);
        let mut net = tc_net(4);
        let p = SgdParams {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 8,
            epochs: 200,
            ..SgdParams::box_midpoint()
        };
        let log = train(&mut net, &data, &data, &p).unwrap();
        assert_eq!(evaluate(&net, &data).unwrap().accuracy, 1.0);
        assert!(log.epochs.last().unwrap().train_loss < log.epochs[0].train_loss);
    }

    #[test]
    fn validates_inputs() {
        let data = tc_data(2, 1);
        let mut net = tc_net(1);
        let empty = data.with_records(Vec::new());
        let p = SgdParams::box_midpoint();
        assert!(matches!(
            train(&mut net, &empty, &data, &p),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            train(&mut net, &data, &empty, &p),
            Err(Error::Validation(_))
        ));
        for bad in [
            SgdParams {
                learning_rate: -1.0,
                ..p
            },
            SgdParams { momentum: 1.0, ..p },
            SgdParams { batch_size: 0, ..p },
            SgdParams { epochs: 0, ..p },
            SgdParams {
                weight_decay: f64::NAN,
                ..p
            },
        ] {
            assert!(train(&mut net, &data, &data, &bad).is_err());
        }
        let wf = build_synthetic_dataset(EventKind::WeatherFront, 1, 1, &mut Rng::new(1)).unwrap();
        assert!(matches!(
            train(&mut net, &wf, &wf, &p),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn csv_header() {
        let log = TrainingLog {
            epochs: vec![EpochLog {
                epoch: 1,
                train_loss: 0.5,
                train_acc: 0.75,
                val_loss: 0.6,
                val_acc: 0.5,
            }],
        };
        assert_eq!(
            log.to_csv(),
            "epoch,train_loss,train_acc,val_acc\n1,0.5,0.75,0.5\n"
        );
    }
}
