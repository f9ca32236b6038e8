//! A plain supervised training loop written without the SSL objective code, used
//! to check that a λ = 0 run reduces to it.

use otssl::nn::{adam_step, AdamState, ModelParams};
use otssl::ssl::{init_params, BatchSchedule, InputBank, SSLConfig};
use otssl::synth::Dataset;

const CLAMP: f64 = 1e-7;

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Per-batch supervised losses for every optimizer step.
pub fn supervised_losses(train: &Dataset, cfg: &SSLConfig) -> Vec<f64> {
    let inputs = InputBank::new(train, cfg.standardize).unwrap();
    let mut params: ModelParams = init_params(inputs.architecture(), cfg.seed).unwrap();
    let mut adam = AdamState::new(&params, cfg.adam);
    let mut schedule = BatchSchedule::new(train.len(), cfg.batch_size, cfg.seed);
    let mut losses = Vec::new();
    for _ in 0..cfg.epochs {
        for batch in schedule.next_epoch() {
            let labelled: Vec<usize> = batch
                .into_iter()
                .filter(|&i| train.samples[i].is_labelled)
                .collect();
            if labelled.is_empty() {
                let zero: Vec<Vec<f64>> = params
                    .tensors()
                    .iter()
                    .map(|t| vec![0.0; t.len()])
                    .collect();
                adam_step(&mut params, &zero, &mut adam).unwrap();
                losses.push(0.0);
                continue;
            }
            let fwd = params.forward(&inputs.gather(&labelled)).unwrap();
            let mut loss = 0.0;
            let mut dz = Vec::new();
            for (&z, &i) in fwd.logits().iter().zip(&labelled) {
                let y = train.samples[i].label.as_f64();
                let p = logistic(z);
                let pc = p.clamp(CLAMP, 1.0 - CLAMP);
                loss -= if y == 1.0 { pc.ln() } else { (1.0 - pc).ln() };
                dz.push(if pc == p { p - y } else { 0.0 });
            }
            let grads = params.backward(&fwd, &dz).unwrap();
            adam_step(&mut params, &grads, &mut adam).unwrap();
            losses.push(loss);
        }
    }
    losses
}
