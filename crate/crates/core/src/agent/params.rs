use std::path::Path;

use thiserror::Error;

use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint truncated")]
    Truncated,
    #[error("unsupported checkpoint version {0}")]
    Version(u8),
    #[error("checkpoint stores {found}-byte scalars, expected {expected}")]
    ScalarWidth { found: u8, expected: u8 },
    #[error("checkpoint has {0} trailing bytes")]
    Trailing(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Weights of the template, object and value heads.
///
/// Matrices are row-major with one row per input feature: the template head
/// is `features × templates`, each object head is
/// `(features + templates) × vocab` (its input is the feature vector followed
/// by a one-hot of the chosen template).
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams<S> {
    pub feature_dim: usize,
    pub vocab_size: usize,
    /// Blank count per template.
    pub arities: Vec<u8>,
    pub template_w: Vec<S>,
    pub object_w: [Vec<S>; 2],
    pub value_w: Vec<S>,
}

impl<S: Scalar> PolicyParams<S> {
    pub fn zeros(feature_dim: usize, arities: Vec<u8>, vocab_size: usize) -> Self {
        let t = arities.len();
        let object_rows = feature_dim + t;
        PolicyParams {
            feature_dim,
            vocab_size,
            template_w: vec![S::zero(); feature_dim * t],
            object_w: [
                vec![S::zero(); object_rows * vocab_size],
                vec![S::zero(); object_rows * vocab_size],
            ],
            value_w: vec![S::zero(); feature_dim],
            arities,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.feature_dim, self.arities.clone(), self.vocab_size)
    }

    pub fn n_templates(&self) -> usize {
        self.arities.len()
    }

    pub fn object_rows(&self) -> usize {
        self.feature_dim + self.n_templates()
    }

    fn slices(&self) -> [&[S]; 4] {
        [
            &self.template_w,
            &self.object_w[0],
            &self.object_w[1],
            &self.value_w,
        ]
    }

    fn slices_mut(&mut self) -> [&mut [S]; 4] {
        let [o0, o1] = &mut self.object_w;
        [&mut self.template_w, o0, o1, &mut self.value_w]
    }

    pub fn iter(&self) -> impl Iterator<Item = &S> {
        self.slices().into_iter().flat_map(|s| s.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut S> {
        self.slices_mut().into_iter().flat_map(|s| s.iter_mut())
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> S {
        self.iter().fold(S::zero(), |a, v| a + *v * *v).sqrt()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: S, other: &Self) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += alpha * *b;
        }
    }

    pub fn scale(&mut self, alpha: S) {
        for a in self.iter_mut() {
            *a *= alpha;
        }
    }

    /// Versioned binary checkpoint: header of shapes, then every matrix
    /// row-major in little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.len() * S::BYTES as usize);
        out.push(CHECKPOINT_VERSION);
        out.push(S::BYTES);
        out.extend((self.feature_dim as u32).to_le_bytes());
        out.extend((self.n_templates() as u32).to_le_bytes());
        out.extend((self.vocab_size as u32).to_le_bytes());
        out.extend(&self.arities);
        for v in self.iter() {
            v.write_le(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let header = bytes.get(..14).ok_or(CheckpointError::Truncated)?;
        if header[0] != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(header[0]));
        }
        if header[1] != S::BYTES {
            return Err(CheckpointError::ScalarWidth {
                found: header[1],
                expected: S::BYTES,
            });
        }
        let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
        let (features, templates, vocab) = (u32_at(2), u32_at(6), u32_at(10));
        let arities = bytes
            .get(14..14 + templates)
            .ok_or(CheckpointError::Truncated)?
            .to_vec();
        let mut params = Self::zeros(features, arities, vocab);
        let body = &bytes[14 + templates..];
        let w = S::BYTES as usize;
        let need = params.len() * w;
        if body.len() < need {
            return Err(CheckpointError::Truncated);
        }
        if body.len() > need {
            return Err(CheckpointError::Trailing(body.len() - need));
        }
        for (v, chunk) in params.iter_mut().zip(body.chunks_exact(w)) {
            *v = S::read_le(chunk);
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
