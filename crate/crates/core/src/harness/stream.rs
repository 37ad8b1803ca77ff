use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Scenario;
use crate::training::TaskData;

/// One task: its classes, example indices and remapped labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub classes: Vec<usize>,
    pub train: Vec<usize>,
    pub train_labels: Vec<usize>,
    pub test: Vec<usize>,
    pub test_labels: Vec<usize>,
    /// Head used for this task when heads are per task.
    pub head: Option<usize>,
}

/// Ordered tasks of a continual-learning scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStream {
    pub scenario: Scenario,
    pub classes_per_task: usize,
    pub tasks: Vec<Task>,
}

impl Scenario {
    /// Label seen by the network for original class `class` of task `task`.
    pub fn remap(self, class: usize, task: usize, classes_per_task: usize) -> usize {
        match self {
            Scenario::IncrementalTask | Scenario::IncrementalDomain => class - task * classes_per_task,
            Scenario::IncrementalClass => class,
        }
    }
}

fn split_indices(
    ds: &Dataset,
    classes: &[usize],
    scenario: Scenario,
    task: usize,
    cpt: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut idx = ds.indices_of(classes);
    idx.shuffle(rng);
    let labels = idx.iter().map(|&i| scenario.remap(ds.labels[i], task, cpt)).collect();
    (idx, labels)
}

/// Splits the classes into contiguous groups: task `t` holds classes
/// `t * classes_per_task .. (t + 1) * classes_per_task`. The seed only fixes
/// the order of examples inside each task.
pub fn build_stream(
    train: &Dataset,
    test: &Dataset,
    scenario: Scenario,
    n_tasks: usize,
    classes_per_task: usize,
    seed: u64,
) -> Result<TaskStream> {
    let classes = train.classes.max(test.classes);
    if n_tasks == 0 || classes_per_task == 0 || n_tasks * classes_per_task > classes {
        return Err(Error::Config(format!(
            "cannot split {classes} classes into {n_tasks} tasks of {classes_per_task}"
        )));
    }
    if train.shape != test.shape {
        return Err(Error::Config("train and test sets have different input shapes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks = Vec::with_capacity(n_tasks);
    for t in 0..n_tasks {
        let cls: Vec<usize> = (t * classes_per_task..(t + 1) * classes_per_task).collect();
        let (tr, trl) = split_indices(train, &cls, scenario, t, classes_per_task, &mut rng);
        let (te, tel) = split_indices(test, &cls, scenario, t, classes_per_task, &mut rng);
        if tr.is_empty() {
            return Err(Error::EmptyDataset(format!("no training examples for classes {cls:?}")));
        }
        tasks.push(Task {
            classes: cls,
            train: tr,
            train_labels: trl,
            test: te,
            test_labels: tel,
            head: (scenario == Scenario::IncrementalTask).then_some(t),
        });
    }
    Ok(TaskStream {
        scenario,
        classes_per_task,
        tasks,
    })
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn outputs(&self) -> usize {
        self.scenario.outputs(self.len(), self.classes_per_task)
    }

    pub fn train_data<'a>(&'a self, task: usize, ds: &'a Dataset) -> TaskData<'a> {
        let t = &self.tasks[task];
        TaskData {
            features: &ds.features,
            indices: &t.train,
            labels: &t.train_labels,
            head: t.head,
        }
    }

    pub fn test_data<'a>(&'a self, task: usize, ds: &'a Dataset) -> TaskData<'a> {
        let t = &self.tasks[task];
        TaskData {
            features: &ds.features,
            indices: &t.test,
            labels: &t.test_labels,
            head: t.head,
        }
    }

    /// Keeps the first `n` tasks.
    pub fn truncate(&mut self, n: usize) {
        self.tasks.truncate(n);
    }
}
