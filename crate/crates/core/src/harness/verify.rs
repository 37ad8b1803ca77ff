use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stream::TaskStream;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, ContainmentViolation, Network};
use crate::training::{evaluate_box, loss_and_accuracy_at};

/// Coordinates reported per containment failure between two boxes.
const VIOLATIONS_PER_PAIR: usize = 20;

/// Parameter samples held in memory at once. Draws are sequential, so the
/// report does not depend on the thread count.
const SAMPLE_CHUNK: usize = 16;

/// A broken guarantee.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Violation {
    /// Box `inner` is not inside box `outer` (`None` is the initial box).
    Containment {
        outer: Option<usize>,
        inner: usize,
        at: ContainmentViolation,
    },
    /// Guaranteed accuracy recomputed at the final box fell below the
    /// recorded value.
    GuaranteeShrank {
        task: usize,
        recorded: f64,
        recomputed: f64,
    },
    /// Center accuracy fell below the recorded guaranteed accuracy.
    CenterBelowGuarantee {
        task: usize,
        recorded: f64,
        center_acc: f64,
    },
    SampledAccuracy {
        task: usize,
        sample: usize,
        accuracy: f64,
        bound: f64,
    },
    SampledLoss {
        task: usize,
        sample: usize,
        loss: f64,
        bound: f64,
    },
}

/// Per-task numbers behind the checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskVerification {
    pub task: usize,
    pub recorded_guaranteed_acc: f64,
    pub guaranteed_acc: f64,
    pub center_acc: f64,
    pub worst_case_loss: f64,
    pub min_sampled_acc: Option<f64>,
    pub max_sampled_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub tasks: usize,
    pub samples: usize,
    pub per_task: Vec<TaskVerification>,
    pub violations: Vec<Violation>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every recorded guarantee of `ck` against the training data.
///
/// For each task: the guaranteed accuracy recomputed at the final box must
/// not drop below the recorded value and the centers must do at least as
/// well; `samples` uniform draws from the final box must each reach the
/// recorded guaranteed accuracy and stay under the worst-case loss. Finally
/// the frozen boxes must form a containment chain.
pub fn verify_guarantees(
    ck: &Checkpoint,
    stream: &TaskStream,
    train: &Dataset,
    samples: usize,
    seed: u64,
) -> Result<VerificationReport> {
    if ck.boxes.len() > stream.len() || ck.records.len() > ck.boxes.len() {
        return Err(Error::Config(format!(
            "checkpoint holds {} boxes and {} records, stream has {} tasks",
            ck.boxes.len(),
            ck.records.len(),
            stream.len()
        )));
    }
    if ck.scenario != stream.scenario {
        return Err(Error::Config(format!(
            "checkpoint was trained on the {} scenario, stream is {}",
            ck.scenario, stream.scenario
        )));
    }
    let net = Network::with_heads(ck.arch.clone(), ck.heads.clone())?;
    let mut violations = Vec::new();

    let mut outer = (None, &ck.initial);
    for (k, b) in ck.boxes.iter().enumerate() {
        for at in outer.1.violations(b, VIOLATIONS_PER_PAIR)? {
            violations.push(Violation::Containment {
                outer: outer.0,
                inner: k,
                at,
            });
        }
        outer = (Some(k), b);
    }

    let fin = ck.final_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_task = Vec::with_capacity(ck.records.len());
    for rec in &ck.records {
        let task = rec.task;
        if task >= stream.len() {
            return Err(Error::Config(format!("record for unknown task {task}")));
        }
        let data = stream.train_data(task, train);
        let eval = evaluate_box(&net, fin, &data)?;
        if eval.guaranteed_accuracy < rec.guaranteed_acc {
            violations.push(Violation::GuaranteeShrank {
                task,
                recorded: rec.guaranteed_acc,
                recomputed: eval.guaranteed_accuracy,
            });
        }
        if eval.accuracy < rec.guaranteed_acc || eval.accuracy < eval.guaranteed_accuracy {
            violations.push(Violation::CenterBelowGuarantee {
                task,
                recorded: rec.guaranteed_acc,
                center_acc: eval.accuracy,
            });
        }
        let (mut min_acc, mut max_loss) = (None::<f64>, None::<f64>);
        let mut s = 0;
        while s < samples {
            let take = SAMPLE_CHUNK.min(samples - s);
            let thetas: Vec<_> = (0..take).map(|_| fin.sample_uniform(&mut rng)).collect();
            let results = thetas
                .par_iter()
                .map(|theta| loss_and_accuracy_at(&net, theta, &data))
                .collect::<Result<Vec<_>>>()?;
            for (loss, acc) in results {
                min_acc = Some(min_acc.map_or(acc, |m| m.min(acc)));
                max_loss = Some(max_loss.map_or(loss, |m| m.max(loss)));
                if acc < rec.guaranteed_acc {
                    violations.push(Violation::SampledAccuracy {
                        task,
                        sample: s,
                        accuracy: acc,
                        bound: rec.guaranteed_acc,
                    });
                }
                if loss > eval.worst_case_loss {
                    violations.push(Violation::SampledLoss {
                        task,
                        sample: s,
                        loss,
                        bound: eval.worst_case_loss,
                    });
                }
                s += 1;
            }
        }
        per_task.push(TaskVerification {
            task,
            recorded_guaranteed_acc: rec.guaranteed_acc,
            guaranteed_acc: eval.guaranteed_accuracy,
            center_acc: eval.accuracy,
            worst_case_loss: eval.worst_case_loss,
            min_sampled_acc: min_acc,
            max_sampled_loss: max_loss,
        });
    }
    Ok(VerificationReport {
        tasks: ck.boxes.len(),
        samples,
        per_task,
        violations,
    })
}
