//! Domain types for the triangulated representation and their validity rules.

use thiserror::Error;

/// Maximum number of color table entries (5-bit count field in the header).
pub const MAX_COLORS: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("grid dimension {0} out of range 2..=255")]
    GridDimension(u32),
    #[error("image dimension {0}x{1} out of range (2..=4095 per side)")]
    ImageDimension(u32, u32),
    #[error("grid dimension {0} exceeds image extent {1}x{2}")]
    GridExceedsImage(u32, u32, u32),
    #[error("grid index ({0}, {1}) out of range for g={2}")]
    GridIndexOutOfRange(u32, u32, u32),
    #[error("validation failed: {0}")]
    Invalid(String),
}

/// A square g x g grid of candidate vertex positions mapped onto a pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    g: u32,
    width: u32,
    height: u32,
}

impl GridSpec {
    pub fn new(g: u32, width: u32, height: u32) -> Result<Self, ModelError> {
        if !(2..=255).contains(&g) {
            return Err(ModelError::GridDimension(g));
        }
        if !(2..=4095).contains(&width) || !(2..=4095).contains(&height) {
            return Err(ModelError::ImageDimension(width, height));
        }
        // g points must map to distinct pixel columns/rows, otherwise vertices
        // coincide and the triangulation degenerates
        if g > width || g > height {
            return Err(ModelError::GridExceedsImage(g, width, height));
        }
        Ok(GridSpec { g, width, height })
    }

    pub fn g(&self) -> u32 {
        self.g
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Total grid point count (g squared).
    pub fn point_count(&self) -> usize {
        (self.g as usize) * (self.g as usize)
    }

    /// Map grid point (i, j) to a pixel coordinate. Corners land exactly on
    /// the image corners.
    pub fn grid_to_pixel(&self, i: u32, j: u32) -> Result<(u32, u32), ModelError> {
        if i >= self.g || j >= self.g {
            return Err(ModelError::GridIndexOutOfRange(i, j, self.g));
        }
        let scale = |k: u32, extent: u32| -> u32 {
            // round(k * (extent-1) / (g-1)) in integer arithmetic
            let num = k as u64 * (extent as u64 - 1);
            let den = self.g as u64 - 1;
            ((2 * num + den) / (2 * den)) as u32
        };
        Ok((scale(i, self.width), scale(j, self.height)))
    }

    /// Pixel coordinate of the grid point with the given row-major index.
    pub fn index_to_pixel(&self, idx: usize) -> (u32, u32) {
        let i = (idx % self.g as usize) as u32;
        let j = (idx / self.g as usize) as u32;
        self.grid_to_pixel(i, j).expect("index in range")
    }

    /// Row-major grid indices of the four corner points.
    pub fn corner_indices(&self) -> [usize; 4] {
        let g = self.g as usize;
        [0, g - 1, g * (g - 1), g * g - 1]
    }
}

/// One quantized YCoCg color table entry together with its usage count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColorEntry {
    pub y: u8,
    pub co: u8,
    pub cg: u8,
    pub freq: u32,
}

impl ColorEntry {
    pub fn channels_valid(&self) -> bool {
        self.y < 64 && self.co < 64 && self.cg < 64
    }
}

/// Ordered palette of at most 32 entries, sorted by usage frequency descending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorTable {
    pub entries: Vec<ColorEntry>,
}

impl ColorTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_freq(&self) -> u32 {
        self.entries.iter().map(|e| e.freq).sum()
    }
}

/// Occupancy of the grid plus a color index for every occupied point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexSet {
    /// One flag per grid point, row-major.
    pub occupancy: Vec<bool>,
    /// One color index per occupied point, in row-major scan order.
    pub color_index: Vec<u8>,
}

impl VertexSet {
    pub fn vertex_count(&self) -> usize {
        self.color_index.len()
    }

    /// Row-major grid indices of all occupied points.
    pub fn occupied_indices(&self) -> Vec<usize> {
        self.occupancy
            .iter()
            .enumerate()
            .filter(|(_, &o)| o)
            .map(|(i, _)| i)
            .collect()
    }
}

/// The complete compressed representation of one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriModel {
    pub grid: GridSpec,
    pub vertices: VertexSet,
    pub colors: ColorTable,
}

impl TriModel {
    /// Check every structural invariant; returns the first violation found.
    pub fn validate(&self) -> Result<(), ModelError> {
        let n_g = self.grid.point_count();
        if self.vertices.occupancy.len() != n_g {
            return Err(ModelError::Invalid(format!(
                "occupancy length {} != grid point count {}",
                self.vertices.occupancy.len(),
                n_g
            )));
        }
        for (which, idx) in self.grid.corner_indices().into_iter().enumerate() {
            if !self.vertices.occupancy[idx] {
                return Err(ModelError::Invalid(format!(
                    "corner unoccupied (corner {which}, grid index {idx})"
                )));
            }
        }
        let v_t = self.vertices.occupancy.iter().filter(|&&o| o).count();
        if self.vertices.color_index.len() != v_t {
            return Err(ModelError::Invalid(format!(
                "color index count {} != occupied count {}",
                self.vertices.color_index.len(),
                v_t
            )));
        }
        if self.colors.is_empty() || self.colors.len() > MAX_COLORS {
            return Err(ModelError::Invalid(format!(
                "color table size {} out of range 1..={MAX_COLORS}",
                self.colors.len()
            )));
        }
        for (k, e) in self.colors.entries.iter().enumerate() {
            if !e.channels_valid() {
                return Err(ModelError::Invalid(format!(
                    "color entry {k} has a channel outside 0..=63"
                )));
            }
        }
        for w in self.colors.entries.windows(2) {
            if w[0].freq < w[1].freq {
                return Err(ModelError::Invalid(
                    "color table not sorted by frequency descending".into(),
                ));
            }
        }
        let mut hist = vec![0u32; self.colors.len()];
        for &ci in &self.vertices.color_index {
            let ci = ci as usize;
            if ci >= self.colors.len() {
                return Err(ModelError::Invalid(format!(
                    "color index {ci} out of range for table of {}",
                    self.colors.len()
                )));
            }
            hist[ci] += 1;
        }
        for (k, (&h, e)) in hist.iter().zip(&self.colors.entries).enumerate() {
            if h != e.freq {
                return Err(ModelError::Invalid(format!(
                    "frequency mismatch at entry {k}: table says {}, histogram says {h}",
                    e.freq
                )));
            }
        }
        if self.colors.total_freq() as usize != v_t {
            return Err(ModelError::Invalid(format!(
                "frequency mismatch: sum {} != vertex count {v_t}",
                self.colors.total_freq()
            )));
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.vertex_count()
    }

    /// Recompute entry frequencies from the color indices, drop unused
    /// entries, and re-sort by frequency descending (stable, so ties keep
    /// their previous order). Color indices are remapped accordingly.
    pub fn canonicalize_colors(&mut self) {
        let n = self.colors.len();
        let mut hist = vec![0u32; n];
        for &ci in &self.vertices.color_index {
            hist[ci as usize] += 1;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.retain(|&k| hist[k] > 0);
        order.sort_by_key(|&k| std::cmp::Reverse(hist[k]));
        let mut remap = vec![u8::MAX; n];
        let mut new_entries = Vec::with_capacity(order.len());
        for (new_idx, &old_idx) in order.iter().enumerate() {
            remap[old_idx] = new_idx as u8;
            let mut e = self.colors.entries[old_idx];
            e.freq = hist[old_idx];
            new_entries.push(e);
        }
        for ci in &mut self.vertices.color_index {
            *ci = remap[*ci as usize];
        }
        self.colors.entries = new_entries;
    }

    /// Smallest valid model on the given grid: the four pinned corners, all
    /// sharing a single color entry.
    pub fn minimal(grid: GridSpec, y: u8, co: u8, cg: u8) -> TriModel {
        let mut occupancy = vec![false; grid.point_count()];
        for idx in grid.corner_indices() {
            occupancy[idx] = true;
        }
        TriModel {
            grid,
            vertices: VertexSet {
                occupancy,
                color_index: vec![0; 4],
            },
            colors: ColorTable {
                entries: vec![ColorEntry { y, co, cg, freq: 4 }],
            },
        }
    }
}

/// Decoded RGB image buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    /// RGB triples, 8 bits per channel, row-major.
    pub pixels: Vec<[u8; 3]>,
}

impl Raster {
    pub fn new(width: u32, height: u32) -> Raster {
        Raster {
            width,
            height,
            pixels: vec![[0; 3]; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        self.pixels[y as usize * self.width as usize + x as usize] = rgb;
    }
}
