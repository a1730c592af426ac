//! Deterministic grayscale rasteriser for the agent's camera.

use std::io::Write;
use std::path::Path;

use super::config::EnvConfig;
use super::physics::{PhysicsState, Vec2};

pub const BACKGROUND: u8 = 0;
pub const CUP: u8 = 128;
pub const BALL: u8 = 255;

/// Square single-channel image; intensity `v / 255` lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    size: usize,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn blank(size: usize) -> Self {
        Self {
            size,
            pixels: vec![BACKGROUND; size * size],
        }
    }

    /// Wraps raw 8-bit pixels in row-major order.
    pub fn from_pixels(size: usize, pixels: Vec<u8>) -> Option<Self> {
        (size > 0 && pixels.len() == size * size).then_some(Self { size, pixels })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn raw(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.size + col]
    }

    pub fn intensities(&self) -> impl Iterator<Item = f64> + '_ {
        self.pixels.iter().map(|&p| f64::from(p) / 255.0)
    }

    pub fn count(&self, level: u8) -> usize {
        self.pixels.iter().filter(|&&p| p == level).count()
    }

    fn set(&mut self, row: usize, col: usize, level: u8) {
        self.pixels[row * self.size + col] = level;
    }

    /// Binary PGM (P5).
    pub fn write_pgm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.size, self.size)?;
        w.write_all(&self.pixels)
    }

    pub fn save_pgm(&self, path: &Path) -> std::io::Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_pgm(f)
    }
}

struct Viewport {
    size: usize,
    left: f64,
    top: f64,
    pixel: f64,
}

impl Viewport {
    fn new(cfg: &EnvConfig) -> Self {
        let size = cfg.render_size;
        Self {
            size,
            left: cfg.view_center[0] - cfg.view_half_extent,
            top: cfg.view_center[1] + cfg.view_half_extent,
            pixel: 2.0 * cfg.view_half_extent / size as f64,
        }
    }

    fn pixel_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let col = ((p.x - self.left) / self.pixel).floor();
        let row = ((self.top - p.z) / self.pixel).floor();
        let n = self.size as f64;
        (col >= 0.0 && col < n && row >= 0.0 && row < n).then_some((row as usize, col as usize))
    }

    fn center_of(&self, row: usize, col: usize) -> Vec2 {
        Vec2::new(
            self.left + (col as f64 + 0.5) * self.pixel,
            self.top - (row as f64 + 0.5) * self.pixel,
        )
    }
}

fn draw_segment(frame: &mut Frame, view: &Viewport, a: Vec2, b: Vec2, level: u8) {
    let len = (b - a).norm();
    let n = ((len / (0.25 * view.pixel)).ceil() as usize).max(1);
    for i in 0..=n {
        let p = a + (b - a) * (i as f64 / n as f64);
        if let Some((r, c)) = view.pixel_of(p) {
            frame.set(r, c, level);
        }
    }
}

/// Cup as a U-shaped outline, ball as a filled disc drawn on top. A ball whose
/// centre is in view always lights at least its own pixel.
pub fn render(cfg: &EnvConfig, state: &PhysicsState) -> Frame {
    let view = Viewport::new(cfg);
    let mut frame = Frame::blank(view.size);

    let c = state.cup_pos;
    let (r, h) = (cfg.cup_radius, cfg.cup_height);
    let base_l = c + Vec2::new(-r, 0.0);
    let base_r = c + Vec2::new(r, 0.0);
    draw_segment(&mut frame, &view, base_l, base_r, CUP);
    draw_segment(&mut frame, &view, base_l, base_l + Vec2::new(0.0, h), CUP);
    draw_segment(&mut frame, &view, base_r, base_r + Vec2::new(0.0, h), CUP);

    let ball = state.ball_pos;
    let rad = cfg.ball_radius;
    let lo = view.pixel_of(ball + Vec2::new(-rad, rad));
    let hi = view.pixel_of(ball + Vec2::new(rad, -rad));
    let (r0, c0) = lo.unwrap_or((0, 0));
    let (r1, c1) = hi.unwrap_or((view.size - 1, view.size - 1));
    for row in r0..=r1 {
        for col in c0..=c1 {
            if (view.center_of(row, col) - ball).norm() <= rad {
                frame.set(row, col, BALL);
            }
        }
    }
    if let Some((row, col)) = view.pixel_of(ball) {
        frame.set(row, col, BALL);
    }
    frame
}
