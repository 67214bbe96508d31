//! Side-by-side match visualisation.
//!
//! Puts the two grayscale inputs next to each other on one canvas and draws a
//! straight line for every retained correspondence, cell centre to cell
//! centre. The line count is returned alongside the image so callers can
//! audit that nothing was silently dropped.

use whorl_image::GrayImage;
use whorl_matcher::{cell_to_pixel, MatchSet};

/// Intensity used for correspondence lines. Chosen to sit above anything the
/// enhancement stages produce so lines stay visible on top of ridge texture.
pub const LINE_VALUE: u8 = 255;

/// A rendered juxtaposition with its line-count audit.
#[derive(Debug, Clone)]
pub struct Overlay {
    /// Canvas holding image A on the left, image B on the right.
    pub image: GrayImage,
    /// Number of correspondence lines actually drawn.
    pub lines_drawn: usize,
}

/// Render `a` and `b` side by side and connect matched cells whose confidence
/// is at least `conf_threshold`.
///
/// Cell indices in `matches` are flat row-major positions on the matcher's
/// grid; each one maps back to the centre of its cell in pixel space. The
/// right panel is offset by the width of `a`. Images of different heights are
/// padded with black below the shorter one.
pub fn render_overlay(
    a: &GrayImage,
    b: &GrayImage,
    matches: &MatchSet,
    conf_threshold: f64,
) -> Overlay {
    let width = a.width() + b.width();
    let height = a.height().max(b.height());
    let mut canvas = GrayImage::new(width, height);

    blit(&mut canvas, a, 0);
    blit(&mut canvas, b, a.width());

    let mut lines_drawn = 0;
    for m in &matches.cells {
        if m.confidence < conf_threshold {
            continue;
        }
        let (x0, y0) = cell_to_pixel(m.i, matches.grid_n, matches.cell_size);
        let (x1, y1) = cell_to_pixel(m.j, matches.grid_n, matches.cell_size);
        draw_line(
            &mut canvas,
            x0 as i64,
            y0 as i64,
            x1 as i64 + a.width() as i64,
            y1 as i64,
        );
        lines_drawn += 1;
    }

    Overlay { image: canvas, lines_drawn }
}

fn blit(canvas: &mut GrayImage, src: &GrayImage, x_off: usize) {
    for y in 0..src.height() {
        for x in 0..src.width() {
            canvas.set(x + x_off, y, src.get(x, y));
        }
    }
}

/// Integer Bresenham over all octants. Endpoints inclusive; out-of-bounds
/// steps are clipped rather than wrapped.
fn draw_line(canvas: &mut GrayImage, x0: i64, y0: i64, x1: i64, y1: i64) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let (mut x, mut y) = (x0, y0);
    loop {
        if x >= 0 && y >= 0 && (x as usize) < canvas.width() && (y as usize) < canvas.height() {
            canvas.set(x as usize, y as usize, LINE_VALUE);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}
