use super::{EvalRecord, TrainConfig, TrainError, Trainer};
use crate::dsp::SegmentFeatures;
use crate::encoder::{EncoderConfig, EncoderModel};
use crate::scalar::Scalar;

/// Outcome of one (margin, speakers-per-batch) training run.
#[derive(Debug)]
pub struct GridCell {
    pub margin: f64,
    pub speakers_per_batch: usize,
    /// Dev scores at every evaluation point, in iteration order.
    pub result: Result<Vec<EvalRecord>, TrainError>,
}

/// Trains one model per grid cell from the same initialization seed. A
/// failing cell is recorded and the remaining cells still run. Cells are
/// ordered margin-major.
pub fn grid_search<S: Scalar>(
    margins: &[f64],
    speakers_per_batch: &[usize],
    encoder: &EncoderConfig,
    init_seed: u64,
    base: &TrainConfig,
    train: &[SegmentFeatures<S>],
    dev: &[SegmentFeatures<S>],
) -> Vec<GridCell> {
    let mut cells = Vec::with_capacity(margins.len() * speakers_per_batch.len());
    for &margin in margins {
        for &m in speakers_per_batch {
            let mut config = base.clone();
            config.batch.margin = margin;
            config.batch.speakers_per_batch = m;
            let result = EncoderModel::init(encoder.clone(), init_seed)
                .map_err(TrainError::from)
                .and_then(|model| Trainer::new(model, config, train))
                .and_then(|mut trainer| {
                    trainer.run(train, Some(dev), |_, _| Ok(()))?;
                    Ok(trainer.evals().to_vec())
                });
            cells.push(GridCell { margin, speakers_per_batch: m, result });
        }
    }
    cells
}
