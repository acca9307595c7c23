use std::path::Path;

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::metrics::{evaluate_metrics, EvalPair, MetricsReport, MssConfig};
use crate::neural::DrumModel;
use crate::{AudioBuffer, Real};

use super::{LabeledAudio, PreparedItem, Resynthesizer};

/// Resynthesizes every item under `r`'s strategy and reports per-group metrics.
pub fn evaluate<T: Real>(items: &[PreparedItem<T>], r: &Resynthesizer<'_, T>, mss: &MssConfig) -> Result<MetricsReport> {
    let sr = r.model().config().sample_rate;
    let to_buffer = |v: &[T]| AudioBuffer::new(v.iter().map(|x| x.f64() as f32).collect(), sr);
    let pairs = items
        .par_iter()
        .map(|it| {
            let out = r.run(it)?;
            Ok(EvalPair {
                id: it.id.clone(),
                y: to_buffer(&it.y)?,
                y_hat: to_buffer(&out.output)?,
                instrument: it.instrument,
                source: it.source,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_metrics(&r.strategy().label(), &pairs, mss)
}

/// Transient embeddings of `items`, in order.
pub fn embeddings<T: Real>(items: &[LabeledAudio], model: &DrumModel<T>) -> Result<Vec<Vec<T>>> {
    items
        .par_iter()
        .map(|it| model.transient_embedding(&it.audio))
        .collect()
}

/// Writes `id,instrument,source,z_0..z_{D-1}` rows.
pub fn write_embeddings_csv<T: Real>(path: &Path, items: &[LabeledAudio], z: &[Vec<T>]) -> Result<()> {
    if items.len() != z.len() {
        return Err(invalid(format!("{} items but {} embeddings", items.len(), z.len())));
    }
    let dim = z.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "instrument".into(), "source".into()];
    header.extend((0..dim).map(|i| format!("z_{i}")));
    w.write_record(&header)?;
    for (it, zi) in items.iter().zip(z) {
        let mut row = vec![it.id.clone(), it.instrument.to_string(), it.source.to_string()];
        row.extend(zi.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_embeddings<T: Real>(path: &Path, items: &[LabeledAudio], model: &DrumModel<T>) -> Result<()> {
    write_embeddings_csv(path, items, &embeddings(items, model)?)
}
