use crate::error::{Result, SedError};

/// Binary `frames x classes` activity matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRoll {
    n_frames: usize,
    n_classes: usize,
    active: Vec<bool>,
}

impl EventRoll {
    pub fn new(n_frames: usize, n_classes: usize) -> Self {
        Self {
            n_frames,
            n_classes,
            active: vec![false; n_frames * n_classes],
        }
    }

    pub fn from_active(n_frames: usize, n_classes: usize, active: Vec<bool>) -> Result<Self> {
        if active.len() != n_frames * n_classes {
            return Err(SedError::Data(format!(
                "event roll {n_frames}x{n_classes} given {} cells",
                active.len()
            )));
        }
        Ok(Self {
            n_frames,
            n_classes,
            active,
        })
    }

    /// Marks a cell active when its probability is at least `threshold`.
    pub fn binarize(probabilities: &[f64], n_classes: usize, threshold: f64) -> Result<Self> {
        if n_classes == 0 || !probabilities.len().is_multiple_of(n_classes) {
            return Err(SedError::Data(format!(
                "{} probabilities do not split into {n_classes} classes",
                probabilities.len()
            )));
        }
        Self::from_active(
            probabilities.len() / n_classes,
            n_classes,
            probabilities.iter().map(|&p| p >= threshold).collect(),
        )
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, frame: usize, class: usize) -> bool {
        self.active[frame * self.n_classes + class]
    }

    pub fn set(&mut self, frame: usize, class: usize, value: bool) {
        self.active[frame * self.n_classes + class] = value;
    }

    pub fn frame(&self, frame: usize) -> &[bool] {
        &self.active[frame * self.n_classes..(frame + 1) * self.n_classes]
    }

    pub fn cells(&self) -> &[bool] {
        &self.active
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Targets as `0.0` / `1.0` in frame-major order.
    pub fn to_targets(&self) -> Vec<f64> {
        self.active.iter().map(|&a| a as u8 as f64).collect()
    }

    /// Stacks rolls with the same class count along time.
    pub fn concat(rolls: &[EventRoll]) -> Result<Self> {
        let n_classes = rolls.first().map_or(0, |r| r.n_classes);
        if rolls.iter().any(|r| r.n_classes != n_classes) {
            return Err(SedError::Data("cannot concatenate rolls with different class counts".into()));
        }
        let active: Vec<bool> = rolls.iter().flat_map(|r| r.active.iter().copied()).collect();
        let n_frames = rolls.iter().map(|r| r.n_frames).sum();
        Self::from_active(n_frames, n_classes, active)
    }

    /// Rows `start..end`.
    pub fn slice_frames(&self, start: usize, end: usize) -> Self {
        Self {
            n_frames: end - start,
            n_classes: self.n_classes,
            active: self.active[start * self.n_classes..end * self.n_classes].to_vec(),
        }
    }

    /// Logical OR over consecutive windows of `frames` rows; a trailing
    /// partial window forms its own segment.
    pub fn max_pool(&self, frames: usize) -> Self {
        let frames = frames.max(1);
        let n_seg = self.n_frames.div_ceil(frames);
        let mut out = Self::new(n_seg, self.n_classes);
        for f in 0..self.n_frames {
            for c in 0..self.n_classes {
                if self.get(f, c) {
                    out.set(f / frames, c, true);
                }
            }
        }
        out
    }

    /// Largest number of simultaneously active classes in any frame.
    pub fn max_polyphony(&self) -> usize {
        (0..self.n_frames)
            .map(|f| self.frame(f).iter().filter(|&&a| a).count())
            .max()
            .unwrap_or(0)
    }
}
