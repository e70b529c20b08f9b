use std::collections::HashMap;
use std::path::Path;

use super::{compute_features, FbankExtractor, FeatureCache, FeatureMatrix, Result};
use crate::audio::read_wav;
use crate::model::Tensor;

/// Normalized features keyed by utterance id.
#[derive(Debug, Clone, Default)]
pub struct FeatureSet {
    map: HashMap<String, FeatureMatrix>,
}

impl FeatureSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Read, frame and normalize every `(id, wav path)`, consulting `cache`
    /// first when given. Files are processed on all available cores.
    pub fn compute<'a, I>(items: I, extractor: &FbankExtractor, cache: Option<&FeatureCache>) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a Path)>,
    {
        let items: Vec<(&str, &Path)> = items.into_iter().collect();
        let load = |id: &str, path: &Path| -> Result<FeatureMatrix> {
            if let Some(hit) = cache.map(|c| c.get(id)).transpose()?.flatten() {
                return Ok(hit);
            }
            let mut fm = compute_features(&read_wav(path)?, extractor)?;
            // match cache precision so cold and warm runs see identical cells
            fm.values.iter_mut().for_each(|v| *v = *v as f32 as f64);
            if let Some(c) = cache {
                c.put(id, &fm)?;
            }
            Ok(fm)
        };
        let workers = std::thread::available_parallelism()
            .map_or(1, |n| n.get())
            .clamp(1, items.len().max(1));
        let chunk = items.len().div_ceil(workers).max(1);
        let mut map = HashMap::with_capacity(items.len());
        std::thread::scope(|s| -> Result<()> {
            let handles: Vec<_> = items
                .chunks(chunk)
                .map(|part| {
                    s.spawn(move || {
                        part.iter()
                            .map(|&(id, path)| load(id, path).map(|fm| (id.to_string(), fm)))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            for h in handles {
                map.extend(h.join().expect("feature worker panicked")?);
            }
            Ok(())
        })?;
        Ok(Self { map })
    }

    pub fn insert(&mut self, id: impl Into<String>, features: FeatureMatrix) {
        self.map.insert(id.into(), features);
    }

    pub fn get(&self, id: &str) -> Option<&FeatureMatrix> {
        self.map.get(id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn extend(&mut self, other: FeatureSet) {
        self.map.extend(other.map);
    }

    /// Stack the named matrices into a `[batch, frames, bands]` tensor.
    /// Returns the first missing id on failure.
    pub fn batch(&self, ids: &[&str]) -> std::result::Result<Tensor<f32>, String> {
        let mut data = Vec::new();
        let mut shape = None;
        for &id in ids {
            let fm = self.map.get(id).ok_or_else(|| id.to_string())?;
            if *shape.get_or_insert(fm.shape()) != fm.shape() {
                return Err(id.to_string());
            }
            data.extend(fm.values.iter().map(|&v| v as f32));
        }
        let (frames, bands) = shape.unwrap_or((0, 0));
        Ok(Tensor::new(&[ids.len(), frames, bands], data))
    }
}
