use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{RunningStats, TrainConfig};
use super::losses::{correct_count, evaluate_box, guaranteed_count, label_mask, TaskData};
use crate::autograd::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{freeze, Network, ReparamState};

/// `p <- p - lr g`.
pub fn sgd_step(param: &mut Matrix, grad: &Matrix, lr: f64) -> Result<()> {
    if param.dim() != grad.dim() {
        let (p, g) = (param.dim(), grad.dim());
        return Err(Error::shape("sgd_step", &[p.0, p.1], &[g.0, g.1]));
    }
    param.scaled_add(-lr, grad);
    Ok(())
}

/// Which part of the per-task procedure produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Center,
    Radii,
    Plain,
}

/// Summary of one epoch (or the partial epoch where phase 2 stopped).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub task: usize,
    pub phase: Phase,
    pub epoch: usize,
    /// Mean batch accuracy at the centers.
    pub train_acc: f64,
    /// Mean batch guaranteed accuracy; absent outside the radii phase.
    pub wc_acc: Option<f64>,
    /// Mean batch worst-case loss; absent outside the radii phase.
    pub wc_loss: Option<f64>,
    /// Mean batch loss at the centers; absent in the radii phase.
    pub loss: Option<f64>,
    pub region_size: f64,
}

/// Outcome of training one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: usize,
    pub center_epochs: usize,
    /// Radii epochs started, counting the one where the threshold fired.
    pub radii_epochs: usize,
    pub radii_steps: usize,
    pub threshold_met: bool,
    /// Window means at the moment phase 2 ended, when the window was full.
    pub window_acc: Option<f64>,
    pub window_wc_acc: Option<f64>,
    /// Full training-set statistics of the final box.
    pub train_acc: f64,
    pub guaranteed_acc: f64,
    pub worst_case_loss: f64,
    /// Region size after the center phase, after the radius reset, and after
    /// every radii epoch.
    pub region_trace: Vec<f64>,
}

fn task_rng(seed: u64, task: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task as u64);
    rng
}

fn check_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged(format!("{what} became {v}")))
    }
}

/// Trains one task with the two-phase procedure and leaves the result in
/// `state` (call [`freeze_task`] afterwards to confine the next task).
///
/// Phase 1 moves centers through `mu` with plain cross-entropy; on networks
/// with per-task heads the active head trains alongside at `lr_center`.
/// Then `nu` is reset and phase 2 shrinks radii by minimizing the worst-case
/// loss until the windowed guaranteed accuracy reaches `acc_thresh` times
/// the windowed accuracy, or `radii_epochs` run out.
pub fn train_task(
    net: &mut Network,
    state: &mut ReparamState,
    data: &TaskData,
    cfg: &TrainConfig,
    task: usize,
    observer: &mut dyn FnMut(&EpochRecord, &Network, &ReparamState),
) -> Result<TaskReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset(format!("training data of task {task}")));
    }
    let head = net.head_index(data.head)?;
    let n_tensors = state.frozen.len();
    let mut rng = task_rng(cfg.seed, task);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.center_epochs {
        order.shuffle(&mut rng);
        let (mut correct, mut loss_sum) = (0usize, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let (x, y) = data.gather(batch);
            let mut tape = Tape::new();
            let centers: Vec<Var> = (0..n_tensors)
                .map(|k| {
                    let mu = tape.param(k, state.mu[k].clone());
                    let nu = tape.constant(state.nu[k].clone());
                    let f = &state.frozen.tensors[k];
                    tape.reparam(mu, nu, &f.center, &f.radius).map(|(c, _)| c)
                })
                .collect::<Result<_>>()?;
            let head_vars = head.map(|h| {
                let w = tape.param(n_tensors, net.heads[h].w.clone());
                let b = tape.param(n_tensors + 1, net.heads[h].b.clone());
                (w, b)
            });
            let xv = tape.constant(x);
            let z = net.center_on_tape(&mut tape, &centers, head_vars, xv)?;
            let loss = tape.cross_entropy(z, &y)?;
            let lv = tape.scalar(loss);
            check_finite(lv, "center loss")?;
            correct += correct_count(tape.value(z), &y);
            loss_sum += lv * y.len() as f64;
            let mut grads = tape.backward(loss, 1.0)?;
            for k in 0..n_tensors {
                if let Some(g) = grads.take(k) {
                    sgd_step(&mut state.mu[k], &g, cfg.lr_center)?;
                }
            }
            if let Some(h) = head {
                if let Some(g) = grads.take(n_tensors) {
                    sgd_step(&mut net.heads[h].w, &g, cfg.lr_center)?;
                }
                if let Some(g) = grads.take(n_tensors + 1) {
                    sgd_step(&mut net.heads[h].b, &g, cfg.lr_center)?;
                }
            }
        }
        let n = data.len() as f64;
        let record = EpochRecord {
            task,
            phase: Phase::Center,
            epoch,
            train_acc: correct as f64 / n,
            wc_acc: None,
            wc_loss: None,
            loss: Some(loss_sum / n),
            region_size: state.realize()?.region_size(),
        };
        observer(&record, net, state);
    }

    let mut region_trace = vec![state.realize()?.region_size()];
    state.reset_nu(cfg.nu_reset);
    region_trace.push(state.realize()?.region_size());

    let mut stats = RunningStats::new(cfg.running_window);
    let mut threshold_met = false;
    let mut radii_epochs = 0;
    let mut radii_steps = 0;
    let mut window = None;
    'epochs: for epoch in 0..cfg.radii_epochs {
        radii_epochs += 1;
        order.shuffle(&mut rng);
        let (mut correct, mut guaranteed, mut wc_sum, mut seen) = (0usize, 0usize, 0.0, 0usize);
        let mut stop = false;
        for batch in order.chunks(cfg.batch_size) {
            let (x, y) = data.gather(batch);
            let mut tape = Tape::new();
            let mut centers = Vec::with_capacity(n_tensors);
            let mut bounds = Vec::with_capacity(n_tensors);
            for k in 0..n_tensors {
                let mu = tape.constant(state.mu[k].clone());
                let nu = tape.param(k, state.nu[k].clone());
                let f = &state.frozen.tensors[k];
                let (c, e) = tape.reparam(mu, nu, &f.center, &f.radius)?;
                centers.push(c);
                bounds.push((tape.sub(c, e)?, tape.add(c, e)?));
            }
            let head_vars = head.map(|h| {
                let w = tape.constant(net.heads[h].w.clone());
                let b = tape.constant(net.heads[h].b.clone());
                (w, b)
            });
            let xv = tape.constant(x);
            let z = net.center_on_tape(&mut tape, &centers, head_vars, xv)?;
            let (lo, hi) = net.interval_on_tape(&mut tape, &bounds, head_vars, (xv, xv))?;
            let classes = tape.value(lo).ncols();
            let zhat = tape.select(label_mask(&y, classes), lo, hi)?;
            let loss = tape.cross_entropy(zhat, &y)?;
            let lv = tape.scalar(loss);
            check_finite(lv, "worst-case loss")?;
            let batch_correct = correct_count(tape.value(z), &y);
            let batch_guaranteed = guaranteed_count(tape.value(lo), tape.value(hi), &y);
            correct += batch_correct;
            guaranteed += batch_guaranteed;
            wc_sum += lv * y.len() as f64;
            seen += y.len();
            let grads = tape.backward(loss, 1.0)?;
            for k in 0..n_tensors {
                if let Some(g) = grads.get(k) {
                    sgd_step(&mut state.nu[k], g, cfg.lr_radii)?;
                }
            }
            radii_steps += 1;
            let m = y.len() as f64;
            stats.push(batch_correct as f64 / m, batch_guaranteed as f64 / m);
            if stats.threshold_reached(cfg.acc_thresh) {
                threshold_met = true;
                stop = true;
                break;
            }
        }
        window = stats.means();
        let s = seen as f64;
        let region = state.realize()?.region_size();
        region_trace.push(region);
        let record = EpochRecord {
            task,
            phase: Phase::Radii,
            epoch,
            train_acc: correct as f64 / s,
            wc_acc: Some(guaranteed as f64 / s),
            wc_loss: Some(wc_sum / s),
            loss: None,
            region_size: region,
        };
        observer(&record, net, state);
        if stop {
            break 'epochs;
        }
    }

    let final_box = state.realize()?;
    let eval = evaluate_box(net, &final_box, data)?;
    Ok(TaskReport {
        task,
        center_epochs: cfg.center_epochs,
        radii_epochs,
        radii_steps,
        threshold_met,
        window_acc: window.map(|w| w.0),
        window_wc_acc: window.map(|w| w.1),
        train_acc: eval.accuracy,
        guaranteed_acc: eval.guaranteed_accuracy,
        worst_case_loss: eval.worst_case_loss,
        region_trace,
    })
}

/// Confines all later training to the box realized now.
pub fn freeze_task(state: &ReparamState, cfg: &TrainConfig) -> Result<ReparamState> {
    freeze(state, cfg.nu_reset)
}

/// Outcome of plain sequential training on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlainReport {
    pub task: usize,
    pub epochs: usize,
    pub train_acc: f64,
    pub loss: f64,
}

/// Unconstrained minibatch SGD on cross-entropy, the sequential baseline.
/// On networks with per-task heads the active head trains too.
#[allow(clippy::too_many_arguments)]
pub fn train_plain(
    net: &mut Network,
    params: &mut [Matrix],
    data: &TaskData,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
    task: usize,
    observer: &mut dyn FnMut(&EpochRecord, &Network, &[Matrix]),
) -> Result<PlainReport> {
    if batch_size == 0 || !(lr.is_finite() && lr > 0.0) {
        return Err(Error::Config(
            "baseline needs a positive batch size and learning rate".into(),
        ));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset(format!("training data of task {task}")));
    }
    let head = net.head_index(data.head)?;
    let n = params.len();
    let mut rng = task_rng(seed, task);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let (mut last_acc, mut last_loss) = (0.0, 0.0);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let (mut correct, mut loss_sum) = (0usize, 0.0);
        for batch in order.chunks(batch_size) {
            let (x, y) = data.gather(batch);
            let mut tape = Tape::new();
            let vars: Vec<Var> = params
                .iter()
                .enumerate()
                .map(|(k, p)| tape.param(k, p.clone()))
                .collect();
            let head_vars = head.map(|h| {
                let w = tape.param(n, net.heads[h].w.clone());
                let b = tape.param(n + 1, net.heads[h].b.clone());
                (w, b)
            });
            let xv = tape.constant(x);
            let z = net.center_on_tape(&mut tape, &vars, head_vars, xv)?;
            let loss = tape.cross_entropy(z, &y)?;
            let lv = tape.scalar(loss);
            check_finite(lv, "baseline loss")?;
            correct += correct_count(tape.value(z), &y);
            loss_sum += lv * y.len() as f64;
            let mut grads = tape.backward(loss, 1.0)?;
            for (k, p) in params.iter_mut().enumerate() {
                if let Some(g) = grads.take(k) {
                    sgd_step(p, &g, lr)?;
                }
            }
            if let Some(h) = head {
                if let Some(g) = grads.take(n) {
                    sgd_step(&mut net.heads[h].w, &g, lr)?;
                }
                if let Some(g) = grads.take(n + 1) {
                    sgd_step(&mut net.heads[h].b, &g, lr)?;
                }
            }
        }
        last_acc = correct as f64 / data.len() as f64;
        last_loss = loss_sum / data.len() as f64;
        let record = EpochRecord {
            task,
            phase: Phase::Plain,
            epoch,
            train_acc: last_acc,
            wc_acc: None,
            wc_loss: None,
            loss: Some(last_loss),
            region_size: 0.0,
        };
        observer(&record, net, params);
    }
    Ok(PlainReport {
        task,
        epochs,
        train_acc: last_acc,
        loss: last_loss,
    })
}
