use std::f64::consts::TAU;

use diarize_core::clustering::{KMeans, XMeans};
use diarize_core::dsp::{AudioBuffer, FeatureConfig, Featurizer, SegmentLabels};
use diarize_core::encoder::{EncoderConfig, EncoderModel};
use diarize_core::metrics::{der, nmi, purity, segments_to_annotation, Annotation, LabelPair, LabeledSegment};
use diarize_core::trainer::{AdamConfig, BatchSpec, TrainConfig, Trainer};
use diarize_core::{Audio, Encoder, FeatureExtractor, Matrix, Scalar, Segment};

fn voice<S: Scalar>(f0: f64, seconds: f64, phase: f64) -> AudioBuffer<S> {
    let n = (seconds * 8000.0) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / 8000.0;
            S::lit((1..=4).map(|h| 0.2 / h as f64 * (TAU * f0 * h as f64 * t + phase * h as f64).sin()).sum::<f64>())
        })
        .collect();
    AudioBuffer::new(samples, 8000)
}

fn corpus<S: Scalar>(pitches: &[f64], per: usize) -> Vec<diarize_core::dsp::SegmentFeatures<S>> {
    let featurizer = Featurizer::<S>::new(FeatureConfig::default()).unwrap();
    let mut out = Vec::new();
    for (s, &f0) in pitches.iter().enumerate() {
        let labels = SegmentLabels { recording_id: format!("r{s}"), speaker_id: format!("s{s}"), offset_seconds: 0.0 };
        let audio = voice::<S>(f0, 2.0 * per as f64, 0.3 * s as f64);
        out.extend(featurizer.featurize(&audio, &labels).unwrap());
    }
    out
}

fn small_encoder() -> EncoderConfig {
    EncoderConfig { hidden_dim: 8, num_heads: 2, num_layers: 1, ..EncoderConfig::default() }
}

fn train_config(iterations: u64) -> TrainConfig {
    TrainConfig {
        batch: BatchSpec::new(6, 3, 0.8).unwrap(),
        optimizer: AdamConfig { learning_rate: 1e-3, ..AdamConfig::default() },
        iterations,
        eval_interval: 2,
        min_segments: 2,
        eval_restarts: 2,
        seed: 4,
    }
}

#[test]
fn features_encoder_clustering_and_scoring_compose() {
    let data: Vec<Segment> = corpus(&[110.0, 180.0, 290.0], 3);
    assert_eq!(data.len(), 9);
    assert_eq!((data[0].num_frames(), data[0].dim()), (198, 60));
    assert_eq!(data[4].segment_start, 2.0);

    let model = Encoder::init(small_encoder(), 2).unwrap();
    let mut trainer = Trainer::new(model, train_config(4), &data).unwrap();
    let mut steps = 0;
    trainer.run(&data, Some(&data), |_, _| {
        steps += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(steps, 4);
    assert_eq!(trainer.evals().iter().map(|e| e.iteration).collect::<Vec<_>>(), [2, 4]);

    let frames: Vec<&Matrix<f64>> = data.iter().map(|s| &s.frames).collect();
    let emb = trainer.model().embed_batch(&frames).unwrap();
    assert_eq!(emb.shape(), (9, 8));
    let clusters = KMeans::new(3).seed(1).n_init(4).fit(&emb).unwrap();
    let truth: Vec<&str> = data.iter().map(|s| s.speaker_id.as_str()).collect();
    let pair = LabelPair::new(&clusters.assignments, &truth).unwrap();
    assert!(nmi(&pair) > 0.99 && purity(&pair) > 0.99);
    let estimated = XMeans::new(2, 5).seed(1).fit(&emb).unwrap();
    assert!(estimated.estimated_k >= 2);

    let labeled: Vec<LabeledSegment> = data
        .iter()
        .zip(&clusters.assignments)
        .map(|(s, &label)| LabeledSegment { start: 6.0 * s.recording_id[1..].parse::<f64>().unwrap() + s.segment_start, duration: 2.0, label })
        .collect();
    let hypothesis = segments_to_annotation("joined", &labeled);
    assert_eq!(hypothesis.intervals().len(), 3);
    let mut reference = Annotation::new("joined");
    for s in 0..3 {
        reference.push(6.0 * s as f64, 6.0 * s as f64 + 6.0, format!("s{s}")).unwrap();
    }
    assert_eq!(der(&reference, &hypothesis, 0.25, true).unwrap().der(), 0.0);
}

#[test]
fn single_precision_training_step() {
    let data = corpus::<f32>(&[110.0, 180.0, 290.0], 2);
    let model = EncoderModel::<f32>::init(small_encoder(), 2).unwrap();
    let mut trainer = Trainer::new(model, train_config(1), &data).unwrap();
    let record = trainer.step(&data).unwrap();
    assert!(record.loss.is_finite());
    assert_eq!(record.iteration, 1);
    let emb = trainer.model().embed_batch(&[&data[0].frames]).unwrap();
    assert!(emb.as_slice().iter().all(|v| v.is_finite()));
}

#[test]
fn root_aliases_are_double_precision() {
    let audio: Audio = voice(150.0, 2.0, 0.0);
    let feats = FeatureExtractor::new(FeatureConfig::default()).unwrap().segment_features(&audio).unwrap();
    let model = Encoder::init(small_encoder(), 0).unwrap();
    let emb: Matrix<f64> = model.embed_batch(&[&feats]).unwrap();
    assert_eq!(emb.cols(), model.embedding_dim());
}
