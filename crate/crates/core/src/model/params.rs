use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A named, shaped slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: usize,
}

impl Segment {
    pub fn new(name: String, dims: Vec<usize>, offset: usize) -> Self {
        Segment { name, dims, offset }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Maps segments of the flat vector onto layers of one architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    architecture: String,
    segments: Vec<Segment>,
    total: usize,
}

impl Layout {
    pub fn new(architecture: String, segments: Vec<Segment>) -> Self {
        let total = segments.iter().map(Segment::len).sum();
        Layout {
            architecture,
            segments,
            total,
        }
    }

    pub fn architecture(&self) -> &str {
        &self.architecture
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn render(&self) -> String {
        let mut out = format!("arch: {}\n", self.architecture);
        for s in &self.segments {
            let dims: Vec<String> = s.dims.iter().map(usize::to_string).collect();
            out.push_str(&format!("segment: {} {} @ {}\n", s.name, dims.join("x"), s.offset));
        }
        out
    }
}

/// The flat, ordered weights of a classifier.
#[derive(Debug, Clone)]
pub struct ParameterVector {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl PartialEq for ParameterVector {
    fn eq(&self, other: &Self) -> bool {
        self.same_layout(other) && self.values == other.values
    }
}

impl ParameterVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        ParameterVector {
            values: vec![0.0; layout.total()],
            layout,
        }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.total()
            )));
        }
        Ok(ParameterVector { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &ParameterVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Hex SHA-256 of the little-endian weight bytes.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Element-wise arithmetic mean, summed in slice order as offsets from
    /// the first vector so that identical inputs average to themselves
    /// exactly.
    pub fn mean(vectors: &[ParameterVector]) -> Result<ParameterVector> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot average zero parameter vectors".into()))?;
        if vectors.iter().any(|v| !v.same_layout(first)) {
            return Err(Error::LayoutMismatch);
        }
        let mut offset = vec![0.0; first.len()];
        for v in &vectors[1..] {
            for ((s, x), x0) in offset.iter_mut().zip(&v.values).zip(&first.values) {
                *s += x - x0;
            }
        }
        let k = vectors.len() as f64;
        let values = first.values.iter().zip(&offset).map(|(x0, s)| x0 + s / k).collect();
        Ok(ParameterVector {
            values,
            layout: first.layout.clone(),
        })
    }
}

/// `params − lr·g`.
pub fn sgd_step(params: &ParameterVector, g: &ParameterVector, lr: f64) -> Result<ParameterVector> {
    if !params.same_layout(g) {
        return Err(Error::LayoutMismatch);
    }
    let values: Vec<f64> = params
        .values
        .iter()
        .zip(&g.values)
        .map(|(w, d)| w - lr * d)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameters after SGD step".into()));
    }
    Ok(ParameterVector {
        values,
        layout: params.layout.clone(),
    })
}
