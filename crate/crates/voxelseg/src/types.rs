//! Small shared value types passed between modules.

/// Per-view integer instance map. Label 0 is background, 1..=K are foreground
/// objects, 255 marks an unlabeled pixel (external label maps only).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

pub const UNLABELED: u8 = 255;

impl LabelMap {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        Self { width, height, data: vec![fill; width * height] }
    }
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }
    /// Binary mask for one label.
    pub fn mask_of(&self, label: u8) -> Vec<bool> {
        self.data.iter().map(|&l| l == label).collect()
    }
    /// Pixel count per label, ignoring unlabeled pixels.
    pub fn area(&self, label: u8) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }
    pub fn max_label(&self) -> u8 {
        self.data.iter().copied().filter(|&l| l != UNLABELED).max().unwrap_or(0)
    }
}
