use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{evaluate, fit, Examples, Learner, MetricsReport, TrainConfig, TrainOutcome};
use crate::layers::{Mode, ParamSet, Pass};
use crate::model::DeviceIdModel;
use crate::tensor::{Tape, Var};
use crate::{Error, Real, Result};

/// Layers left trainable during fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trainable {
    /// Output layer only.
    #[serde(rename = "head")]
    Head,
    /// Hidden MLP layer and output layer.
    #[serde(rename = "mlp+head")]
    MlpAndHead,
}

impl core::str::FromStr for Trainable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(Trainable::Head),
            "mlp+head" => Ok(Trainable::MlpAndHead),
            _ => Err(Error::Config(alloc::format!("trainable must be `head` or `mlp+head`, got `{s}`"))),
        }
    }
}

/// Trains the head of a model on cached inputs of its first trainable layer.
pub struct HeadLearner<'m, T> {
    pub model: &'m mut DeviceIdModel<T>,
    pub trainable: Trainable,
}

impl<T: Real> Learner<T> for HeadLearner<'_, T> {
    fn params(&self) -> &ParamSet<T> {
        &self.model.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.model.params
    }

    fn logits(&self, pass: &Pass<'_, T>, x: Var) -> Result<Var> {
        match self.trainable {
            Trainable::Head => self.model.net.head_out.forward(pass, x),
            Trainable::MlpAndHead => self.model.net.head(pass, x),
        }
    }
}

/// Inference-mode inputs of the first trainable layer for every sample:
/// backbone embeddings for `MlpAndHead`, hidden MLP activations for `Head`.
pub fn cache_head_inputs<T: Real>(model: &DeviceIdModel<T>, data: &Examples, trainable: Trainable, batch: usize) -> Result<Examples> {
    let mut out = Vec::new();
    let mut width = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let tape = Tape::new();
        let pass = Pass::new(&tape, &model.params, Mode::Eval);
        let x = tape.constant(data.batch(chunk));
        let mut v = model.net.embed(&pass, x)?;
        if trainable == Trainable::Head {
            v = model.net.head_features(&pass, v)?;
        }
        width = tape.shape(v)[1];
        out.extend(tape.value(v).data().iter().map(|&a| a.as_f64() as f32));
    }
    Examples::new(alloc::vec![width], out, data.labels.clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferOutcome<T> {
    pub model: DeviceIdModel<T>,
    pub outcome: TrainOutcome,
    pub report: MetricsReport,
    /// Number of frozen parameter tensors compared before and after.
    pub frozen_checked: usize,
    /// Every frozen tensor is bit-identical after fine-tuning.
    pub frozen_unchanged: bool,
}

/// Replaces the output layer for `n_classes`, freezes everything outside
/// `trainable`, fine-tunes on cached head inputs and reports test metrics.
pub fn transfer_finetune<T: Real>(
    mut model: DeviceIdModel<T>,
    n_classes: usize,
    trainable: Trainable,
    train: &Examples,
    val: &Examples,
    test: &Examples,
    cfg: &TrainConfig,
) -> Result<TransferOutcome<T>> {
    cfg.validate()?;
    model.replace_head(n_classes, cfg.seed)?;
    model.params.set_frozen_all(true);
    let mut open = alloc::vec![model.net.head_out.weight, model.net.head_out.bias];
    if trainable == Trainable::MlpAndHead {
        open.extend([model.net.head_hidden.weight, model.net.head_hidden.bias]);
    }
    for id in open {
        model.params.get_mut(id).frozen = false;
    }
    let frozen: Vec<_> = model
        .params
        .iter()
        .filter(|(_, p)| p.frozen)
        .map(|(id, p)| (id, p.value.data().iter().map(|v| v.as_f64().to_bits()).collect::<Vec<_>>()))
        .collect();
    let batch = cfg.batch_size;
    let (tr, va, te) = (
        cache_head_inputs(&model, train, trainable, batch)?,
        cache_head_inputs(&model, val, trainable, batch)?,
        cache_head_inputs(&model, test, trainable, batch)?,
    );
    let mut learner = HeadLearner { model: &mut model, trainable };
    let outcome = fit(&mut learner, &tr, &va, cfg, |_| {})?;
    let report = evaluate(&learner, &te, n_classes, batch)?;
    let frozen_unchanged = frozen.iter().all(|(id, bits)| {
        let now = model.params.value(*id).data();
        now.len() == bits.len() && now.iter().zip(bits).all(|(v, b)| v.as_f64().to_bits() == *b)
    });
    Ok(TransferOutcome { model, outcome, report, frozen_checked: frozen.len(), frozen_unchanged })
}
