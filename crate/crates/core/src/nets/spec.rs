//! Declarative architectures and the baseline / VGG16 builders.
//!
//! Convolutions are stride 1 with "same" padding. Max pooling pads like the
//! "same" mode of common frameworks, so each pool yields `ceil(side / stride)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ARCHITECTURE_SCHEMA_VERSION: u32 = 1;

/// Smallest input accepted by [`build_baseline`] and [`build_vgg16`].
pub const MIN_INPUT_SIDE: usize = 32;

pub const BASELINE_FILTERS: [usize; 6] = [96, 96, 256, 256, 384, 384];
pub const BASELINE_KERNELS: [usize; 6] = [7, 7, 5, 5, 3, 3];
pub const BASELINE_DENSE_UNITS: usize = 512;
pub const DEFAULT_DROPOUT: f32 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Relu,
    Maxpool,
    Batchnorm,
    Dropout,
    Flatten,
    Dense,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f32>,
    /// Pooling window side.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<usize>,
    /// Pooling stride.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default)]
    pub frozen: bool,
}

impl LayerSpec {
    fn bare(kind: LayerKind) -> Self {
        LayerSpec {
            kind,
            filters: None,
            kernel: None,
            units: None,
            rate: None,
            pool: None,
            stride: None,
            frozen: false,
        }
    }

    pub fn conv(filters: usize, kernel: usize) -> Self {
        LayerSpec {
            filters: Some(filters),
            kernel: Some(kernel),
            ..Self::bare(LayerKind::Conv)
        }
    }

    pub fn relu() -> Self {
        Self::bare(LayerKind::Relu)
    }

    pub fn maxpool(pool: usize, stride: usize) -> Self {
        LayerSpec {
            pool: Some(pool),
            stride: Some(stride),
            ..Self::bare(LayerKind::Maxpool)
        }
    }

    pub fn batchnorm() -> Self {
        Self::bare(LayerKind::Batchnorm)
    }

    pub fn dropout(rate: f32) -> Self {
        LayerSpec {
            rate: Some(rate),
            ..Self::bare(LayerKind::Dropout)
        }
    }

    pub fn flatten() -> Self {
        Self::bare(LayerKind::Flatten)
    }

    pub fn dense(units: usize) -> Self {
        LayerSpec {
            units: Some(units),
            ..Self::bare(LayerKind::Dense)
        }
    }

    pub fn softmax() -> Self {
        Self::bare(LayerKind::Softmax)
    }

    pub fn frozen(mut self, frozen: bool) -> Self {
        self.frozen = frozen;
        self
    }

    pub fn has_params(&self) -> bool {
        matches!(self.kind, LayerKind::Conv | LayerKind::Dense | LayerKind::Batchnorm)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Architecture(format!("{:?} layer {msg}", self.kind)));
        match self.kind {
            LayerKind::Conv => match (self.filters, self.kernel) {
                (Some(f), Some(k)) if f > 0 && k > 0 && k % 2 == 1 => Ok(()),
                (Some(_), Some(_)) => bad("needs positive filters and an odd kernel"),
                _ => bad("requires filters and kernel"),
            },
            LayerKind::Dense => match self.units {
                Some(u) if u > 0 => Ok(()),
                _ => bad("requires positive units"),
            },
            LayerKind::Dropout => match self.rate {
                Some(r) if r > 0.0 && r < 1.0 => Ok(()),
                _ => bad("requires a rate in (0, 1)"),
            },
            LayerKind::Maxpool => match (self.pool, self.stride) {
                (Some(p), Some(s)) if p > 0 && s > 0 => Ok(()),
                _ => bad("requires positive pool and stride"),
            },
            _ => Ok(()),
        }
    }
}

/// Activation shape between layers: channels × height × width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub schema_version: u32,
    pub input_side: usize,
    pub channels: usize,
    pub layers: Vec<LayerSpec>,
    pub n_classes: usize,
}

impl ArchitectureSpec {
    pub fn new(input_side: usize, layers: Vec<LayerSpec>, n_classes: usize) -> Result<Self> {
        let spec = ArchitectureSpec {
            schema_version: ARCHITECTURE_SCHEMA_VERSION,
            input_side,
            channels: 3,
            layers,
            n_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn input_shape(&self) -> Shape {
        Shape {
            c: self.channels,
            h: self.input_side,
            w: self.input_side,
        }
    }

    /// Shape entering each layer, plus the final output shape.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut s = self.input_shape();
        shapes.push(s);
        for (i, l) in self.layers.iter().enumerate() {
            s = match l.kind {
                LayerKind::Conv => {
                    if self.layers[..i].iter().any(|p| p.kind == LayerKind::Flatten) {
                        return Err(Error::Architecture(format!("layer {i}: conv after flatten")));
                    }
                    Shape {
                        c: l.filters.unwrap_or(0),
                        ..s
                    }
                }
                LayerKind::Maxpool => {
                    let st = l.stride.unwrap_or(1);
                    Shape {
                        c: s.c,
                        h: s.h.div_ceil(st),
                        w: s.w.div_ceil(st),
                    }
                }
                LayerKind::Flatten => Shape { c: s.len(), h: 1, w: 1 },
                LayerKind::Dense => {
                    if s.h != 1 || s.w != 1 {
                        return Err(Error::Architecture(format!(
                            "layer {i}: dense needs a flattened input, got {}x{}x{}",
                            s.c, s.h, s.w
                        )));
                    }
                    Shape {
                        c: l.units.unwrap_or(0),
                        h: 1,
                        w: 1,
                    }
                }
                _ => s,
            };
            if s.is_empty() {
                return Err(Error::Architecture(format!("layer {i}: empty activation")));
            }
            shapes.push(s);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::Architecture(format!("expected 3 channels, got {}", self.channels)));
        }
        if self.input_side == 0 {
            return Err(Error::Architecture("input_side must be positive".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.validate()
                .map_err(|e| Error::Architecture(format!("layer {i}: {e}")))?;
        }
        let n = self.layers.len();
        if n < 2
            || self.layers[n - 1].kind != LayerKind::Softmax
            || self.layers[n - 2].kind != LayerKind::Dense
            || self.layers[n - 2].units != Some(self.n_classes)
        {
            return Err(Error::Architecture(format!(
                "the last two layers must be dense({}) then softmax",
                self.n_classes
            )));
        }
        if self.layers[..n - 1].iter().any(|l| l.kind == LayerKind::Softmax) {
            return Err(Error::Architecture("softmax is only allowed as the last layer".into()));
        }
        // Frozen layers form one contiguous run.
        let frozen: Vec<usize> = (0..n).filter(|&i| self.layers[i].frozen).collect();
        if let (Some(&a), Some(&b)) = (frozen.first(), frozen.last()) {
            if b - a + 1 != frozen.len() {
                return Err(Error::Architecture(
                    "frozen layers must form one contiguous run".into(),
                ));
            }
        }
        self.shapes()?;
        Ok(())
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(|l| l.kind).collect()
    }

    pub fn conv_filters(&self) -> Vec<usize> {
        self.layers.iter().filter_map(|l| if l.kind == LayerKind::Conv { l.filters } else { None }).collect()
    }

    /// Parameter tensors' element counts for each layer: `(trainable, non_trainable)`.
    pub fn layer_param_counts(&self) -> Result<Vec<(usize, usize)>> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .zip(&shapes)
            .map(|(l, s)| match l.kind {
                LayerKind::Conv => {
                    let k = l.kernel.unwrap_or(0);
                    let f = l.filters.unwrap_or(0);
                    (f * s.c * k * k + f, 0)
                }
                LayerKind::Dense => {
                    let u = l.units.unwrap_or(0);
                    (u * s.c + u, 0)
                }
                LayerKind::Batchnorm => (2 * s.c, 2 * s.c),
                _ => (0, 0),
            })
            .collect())
    }

    /// Parameters that receive gradient updates.
    pub fn trainable_param_count(&self) -> Result<usize> {
        Ok(self
            .layer_param_counts()?
            .iter()
            .zip(&self.layers)
            .filter(|(_, l)| !l.frozen)
            .map(|((t, _), _)| t)
            .sum())
    }

    pub fn total_param_count(&self) -> Result<usize> {
        Ok(self.layer_param_counts()?.iter().map(|(t, n)| t + n).sum())
    }

    /// Width of the flatten layer's output.
    pub fn flatten_width(&self) -> Result<usize> {
        let shapes = self.shapes()?;
        let i = self
            .layers
            .iter()
            .position(|l| l.kind == LayerKind::Flatten)
            .ok_or_else(|| Error::Architecture("no flatten layer".into()))?;
        Ok(shapes[i + 1].c)
    }
}

/// The baseline gender CNN: six conv blocks (conv → relu → maxpool, the first
/// four also → batchnorm → dropout), then flatten, two dense(512) + relu and a
/// dense(n_classes) + softmax head. Pools are 3×3/2 after the first two convs
/// and 2×2/2 afterwards.
pub fn build_baseline(input_side: usize, n_classes: usize) -> Result<ArchitectureSpec> {
    build_baseline_with(input_side, n_classes, DEFAULT_DROPOUT)
}

pub fn build_baseline_with(input_side: usize, n_classes: usize, dropout: f32) -> Result<ArchitectureSpec> {
    if input_side < MIN_INPUT_SIDE {
        return Err(Error::Architecture(format!(
            "input_side {input_side} is too small for the pooling stack; minimum is {MIN_INPUT_SIDE}"
        )));
    }
    if !(2..=3).contains(&n_classes) {
        return Err(Error::Architecture(format!(
            "n_classes must be 2 or 3, got {n_classes}"
        )));
    }
    let mut layers = Vec::new();
    for (i, (&f, &k)) in BASELINE_FILTERS.iter().zip(&BASELINE_KERNELS).enumerate() {
        layers.push(LayerSpec::conv(f, k));
        layers.push(LayerSpec::relu());
        layers.push(if i < 2 { LayerSpec::maxpool(3, 2) } else { LayerSpec::maxpool(2, 2) });
        if i < 4 {
            layers.push(LayerSpec::batchnorm());
            layers.push(LayerSpec::dropout(dropout));
        }
    }
    layers.push(LayerSpec::flatten());
    for _ in 0..2 {
        layers.push(LayerSpec::dense(BASELINE_DENSE_UNITS));
        layers.push(LayerSpec::relu());
    }
    layers.push(LayerSpec::dense(n_classes));
    layers.push(LayerSpec::softmax());
    ArchitectureSpec::new(input_side, layers, n_classes)
}

/// VGG16 topology: thirteen 3×3 convs in five pooled blocks, two dense(4096)
/// and a dense(n_classes) + softmax head (1000-way for the ImageNet layout).
pub fn build_vgg16(input_side: usize, n_classes: usize) -> Result<ArchitectureSpec> {
    if input_side < MIN_INPUT_SIDE {
        return Err(Error::Architecture(format!(
            "input_side {input_side} is too small for VGG16; minimum is {MIN_INPUT_SIDE}"
        )));
    }
    let blocks: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];
    let mut layers = Vec::new();
    for block in blocks {
        for &f in block {
            layers.push(LayerSpec::conv(f, 3));
            layers.push(LayerSpec::relu());
        }
        layers.push(LayerSpec::maxpool(2, 2));
    }
    layers.push(LayerSpec::flatten());
    for _ in 0..2 {
        layers.push(LayerSpec::dense(4096));
        layers.push(LayerSpec::relu());
    }
    layers.push(LayerSpec::dense(n_classes));
    layers.push(LayerSpec::softmax());
    ArchitectureSpec::new(input_side, layers, n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use LayerKind::*;

    #[test]
    fn baseline_head_width_follows_classes() {
        let a = build_baseline(227, 2).unwrap();
        let b = build_baseline(227, 3).unwrap();
        assert_eq!(a.kinds(), b.kinds());
        let n = a.layers.len();
        assert_eq!(a.layers[..n - 2], b.layers[..n - 2]);
        assert_eq!(a.layers[n - 2].units, Some(2));
        assert_eq!(b.layers[n - 2].units, Some(3));
    }

    #[test]
    fn baseline_shapes_at_227_and_64() {
        assert_eq!(build_baseline(227, 2).unwrap().flatten_width().unwrap(), 384 * 4 * 4);
        assert_eq!(build_baseline(64, 2).unwrap().flatten_width().unwrap(), 384);
    }

    #[test]
    fn too_small_input_names_minimum() {
        let err = build_baseline(31, 2).unwrap_err().to_string();
        assert!(err.contains("32"), "{err}");
        build_baseline(32, 2).unwrap();
    }

    #[test]
    fn layer_field_requirements() {
        assert!(LayerSpec { filters: None, ..LayerSpec::conv(3, 3) }.validate().is_err());
        assert!(LayerSpec::dropout(1.0).validate().is_err());
        assert!(LayerSpec::dropout(0.0).validate().is_err());
        assert!(LayerSpec { units: None, ..LayerSpec::dense(3) }.validate().is_err());
    }

    #[test]
    fn head_must_be_dense_softmax() {
        let layers = vec![LayerSpec::flatten(), LayerSpec::dense(2)];
        assert!(ArchitectureSpec::new(32, layers, 2).is_err());
        let layers = vec![LayerSpec::flatten(), LayerSpec::dense(3), LayerSpec::softmax()];
        assert!(ArchitectureSpec::new(32, layers, 2).is_err());
    }

    #[test]
    fn frozen_run_must_be_contiguous() {
        let layers = vec![
            LayerSpec::flatten().frozen(true),
            LayerSpec::dense(4),
            LayerSpec::relu().frozen(true),
            LayerSpec::dense(2),
            LayerSpec::softmax(),
        ];
        assert!(ArchitectureSpec::new(32, layers, 2).is_err());
    }

    #[test]
    fn vgg16_structure() {
        let v = build_vgg16(224, 1000).unwrap();
        assert_eq!(v.conv_filters().len(), 13);
        assert_eq!(v.flatten_width().unwrap(), 512 * 7 * 7);
        assert_eq!(v.total_param_count().unwrap(), 138_357_544);
        let kinds = v.kinds();
        assert_eq!(&kinds[kinds.len() - 2..], &[Dense, Softmax]);
    }
}
