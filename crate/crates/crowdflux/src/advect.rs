//! Fixed-grid particle selection: one characteristic particle per cell per
//! frame, the sparse stand-in for individuals in dense crowds.
//!
//! Each frame is partitioned into a `b x b` grid. Within every cell the `s`
//! fastest pixels are picked and their positions averaged (a single-cluster
//! k-means center is exactly the centroid); the particle's velocity is the
//! flow sampled at that centroid. Selection is stateless: each frame is
//! processed from its own flow field alone.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector2;
use rayon::prelude::*;
use thiserror::Error;

use crate::flow::FlowField;

#[derive(Debug, Error)]
pub enum AdvectError {
    #[error("grid of {b}x{b} cells is too fine for a {width}x{height} frame")]
    GridTooFine { b: usize, width: usize, height: usize },
    #[error("flow is {flow_width}x{flow_height} but the grid covers {width}x{height}")]
    DimensionMismatch { flow_width: usize, flow_height: usize, width: usize, height: usize },
}

/// Square `b x b` cell partition of a frame.
///
/// Cells are `cell_width x cell_height` pixels; the last row and column
/// absorb the division remainder and may be up to one cell larger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub frame_width: usize,
    pub frame_height: usize,
    pub b: usize,
    pub cell_width: usize,
    pub cell_height: usize,
}

/// Pixel rectangle of one cell: `[x0, x0+w) x [y0, y0+h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

/// Build the `b x b` grid for a frame.
pub fn make_grid(frame_width: usize, frame_height: usize, b: usize) -> Result<GridSpec, AdvectError> {
    if b == 0 || b > frame_width || b > frame_height {
        return Err(AdvectError::GridTooFine { b, width: frame_width, height: frame_height });
    }
    Ok(GridSpec {
        frame_width,
        frame_height,
        b,
        cell_width: frame_width / b,
        cell_height: frame_height / b,
    })
}

impl GridSpec {
    /// Total cell count `n = b*b`.
    pub fn cell_count(&self) -> usize {
        self.b * self.b
    }

    /// Row-major cell index for (row, col).
    pub fn cell_index(&self, row: usize, col: usize) -> usize {
        row * self.b + col
    }

    pub fn cell_rect(&self, index: usize) -> CellRect {
        let row = index / self.b;
        let col = index % self.b;
        let x0 = col * self.cell_width;
        let y0 = row * self.cell_height;
        let w = if col + 1 == self.b { self.frame_width - x0 } else { self.cell_width };
        let h = if row + 1 == self.b { self.frame_height - y0 } else { self.cell_height };
        CellRect { x0, y0, w, h }
    }

    /// Cell containing an integer pixel.
    pub fn cell_of_pixel(&self, x: usize, y: usize) -> usize {
        let col = (x / self.cell_width).min(self.b - 1);
        let row = (y / self.cell_height).min(self.b - 1);
        self.cell_index(row, col)
    }
}

/// The representative tracked point of one grid cell at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacteristicParticle {
    pub cell_index: usize,
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
    pub frame_index: usize,
    pub speed: f64,
}

/// Select the characteristic particle of one cell.
///
/// Pixels are ranked by speed descending, ties broken by row-major pixel
/// index ascending; the top `s` positions are averaged. A cell whose pixels
/// all have zero flow yields a zero-velocity particle at the cell's center
/// pixel.
pub fn select_characteristic(
    grid: &GridSpec,
    cell: usize,
    flow: &FlowField,
    s: usize,
    frame_index: usize,
) -> CharacteristicParticle {
    let rect = grid.cell_rect(cell);
    let s = s.max(1);

    // (speed^2, row-major pixel index, x, y)
    let mut pixels: Vec<(f64, usize, usize, usize)> = Vec::with_capacity(rect.w * rect.h);
    let mut max_speed_sq = 0.0f64;
    for y in rect.y0..rect.y0 + rect.h {
        for x in rect.x0..rect.x0 + rect.w {
            let (u, v) = flow.at(x, y);
            let sp = (u as f64) * (u as f64) + (v as f64) * (v as f64);
            max_speed_sq = max_speed_sq.max(sp);
            pixels.push((sp, y * grid.frame_width + x, x, y));
        }
    }

    if max_speed_sq == 0.0 {
        let position =
            Vector2::new((rect.x0 + rect.w / 2) as f64, (rect.y0 + rect.h / 2) as f64);
        return CharacteristicParticle {
            cell_index: cell,
            position,
            velocity: Vector2::zeros(),
            frame_index,
            speed: 0.0,
        };
    }

    pixels.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let top = &pixels[..s.min(pixels.len())];
    let mut centroid = Vector2::zeros();
    for &(_, _, x, y) in top {
        centroid += Vector2::new(x as f64, y as f64);
    }
    centroid /= top.len() as f64;

    let (u, v) = flow.sample(centroid.x, centroid.y);
    let velocity = Vector2::new(u, v);
    CharacteristicParticle {
        cell_index: cell,
        position: centroid,
        velocity,
        frame_index,
        speed: velocity.norm(),
    }
}

/// Select the characteristic particle of every cell of one frame.
pub fn advect_frame(
    flow: &FlowField,
    grid: &GridSpec,
    s: usize,
    frame_index: usize,
) -> Result<Vec<CharacteristicParticle>, AdvectError> {
    if flow.width() != grid.frame_width || flow.height() != grid.frame_height {
        return Err(AdvectError::DimensionMismatch {
            flow_width: flow.width(),
            flow_height: flow.height(),
            width: grid.frame_width,
            height: grid.frame_height,
        });
    }
    Ok((0..grid.cell_count())
        .into_par_iter()
        .map(|cell| select_characteristic(grid, cell, flow, s, frame_index))
        .collect())
}

/// Append per-frame particle rows as `frame,cell,px,py,vx,vy` CSV.
pub fn write_particles_csv<W: Write>(
    out: &mut W,
    particles: &[CharacteristicParticle],
) -> std::io::Result<()> {
    for p in particles {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.frame_index, p.cell_index, p.position.x, p.position.y, p.velocity.x, p.velocity.y
        )?;
    }
    Ok(())
}

/// CSV header for [`write_particles_csv`].
pub fn particles_csv_header() -> &'static str {
    "frame,cell,px,py,vx,vy"
}

#[allow(dead_code)]
pub(crate) fn write_particles_csv_file(
    path: &Path,
    frames: &[Vec<CharacteristicParticle>],
) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", particles_csv_header())?;
    for frame in frames {
        write_particles_csv(&mut out, frame)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{simulate_scenario, AgentState, ScenarioConfig};

    #[test]
    fn grid_320x240_b20() {
        let g = make_grid(320, 240, 20).unwrap();
        assert_eq!((g.cell_width, g.cell_height), (16, 12));
        assert_eq!(g.cell_count(), 400);
        let last = g.cell_rect(399);
        assert_eq!((last.x0, last.y0, last.w, last.h), (304, 228, 16, 12));
    }

    #[test]
    fn grid_single_cell() {
        let g = make_grid(10, 10, 1).unwrap();
        assert_eq!(g.cell_rect(0), CellRect { x0: 0, y0: 0, w: 10, h: 10 });
    }

    #[test]
    fn grid_remainder_absorbed() {
        let g = make_grid(238, 158, 10).unwrap();
        assert_eq!((g.cell_width, g.cell_height), (23, 15));
        let last = g.cell_rect(99);
        // 238 - 9*23 = 31, 158 - 9*15 = 23
        assert_eq!((last.w, last.h), (31, 23));
        // every pixel belongs to exactly one cell
        let mut covered = 0usize;
        for i in 0..g.cell_count() {
            let r = g.cell_rect(i);
            covered += r.w * r.h;
        }
        assert_eq!(covered, 238 * 158);
    }

    #[test]
    fn grid_too_fine() {
        assert!(matches!(make_grid(10, 5, 8), Err(AdvectError::GridTooFine { .. })));
        assert!(matches!(make_grid(10, 10, 0), Err(AdvectError::GridTooFine { .. })));
    }

    #[test]
    fn zero_flow_cell_centers() {
        let flow = FlowField::zeros(32, 32);
        let g = make_grid(32, 32, 4).unwrap();
        let p = select_characteristic(&g, 0, &flow, 5, 0);
        assert_eq!(p.position, Vector2::new(4.0, 4.0));
        assert_eq!(p.velocity, Vector2::zeros());
        let all = advect_frame(&flow, &g, 5, 0).unwrap();
        assert_eq!(all.len(), 16);
        for p in &all {
            let r = g.cell_rect(p.cell_index);
            assert_eq!(p.position, Vector2::new((r.x0 + r.w / 2) as f64, (r.y0 + r.h / 2) as f64));
            assert_eq!(p.speed, 0.0);
        }
    }

    #[test]
    fn uniform_flow_any_tiebreak() {
        let n = 24 * 24;
        let flow = FlowField::new(24, 24, vec![2.0; n], vec![0.0; n]).unwrap();
        let g = make_grid(24, 24, 3).unwrap();
        for cell in 0..9 {
            let p = select_characteristic(&g, cell, &flow, 4, 0);
            assert_eq!(p.velocity, Vector2::new(2.0, 0.0));
            let r = g.cell_rect(cell);
            assert!(p.position.x >= r.x0 as f64 && p.position.x < (r.x0 + r.w) as f64);
            assert!(p.position.y >= r.y0 as f64 && p.position.y < (r.y0 + r.h) as f64);
        }
    }

    #[test]
    fn single_fast_pixel_wins() {
        let mut u = vec![1.0f32; 64];
        u[3 * 8 + 5] = 5.0; // pixel (5,3)
        let flow = FlowField::new(8, 8, u, vec![0.0; 64]).unwrap();
        let g = make_grid(8, 8, 1).unwrap();
        let p = select_characteristic(&g, 0, &flow, 1, 7);
        // brute-force max over cell pixels
        assert_eq!(p.position, Vector2::new(5.0, 3.0));
        assert_eq!(p.velocity, Vector2::new(5.0, 0.0));
        assert_eq!(p.frame_index, 7);
    }

    #[test]
    fn dimension_mismatch() {
        let flow = FlowField::zeros(16, 16);
        let g = make_grid(32, 32, 4).unwrap();
        assert!(matches!(advect_frame(&flow, &g, 5, 0), Err(AdvectError::DimensionMismatch { .. })));
    }

    #[test]
    fn particle_speed_bounded_by_cell_max() {
        // random-ish deterministic field
        let n = 40 * 40;
        let u: Vec<f32> = (0..n).map(|i| ((i * 2654435761usize) % 17) as f32 - 8.0).collect();
        let v: Vec<f32> = (0..n).map(|i| ((i * 40503usize) % 13) as f32 - 6.0).collect();
        let flow = FlowField::new(40, 40, u, v).unwrap();
        let g = make_grid(40, 40, 5).unwrap();
        for p in advect_frame(&flow, &g, 3, 0).unwrap() {
            let r = g.cell_rect(p.cell_index);
            // bilinear samples can mix pixels from the neighboring row/column
            let mut max_sp = 0.0f64;
            for y in r.y0.saturating_sub(1)..(r.y0 + r.h + 1).min(40) {
                for x in r.x0.saturating_sub(1)..(r.x0 + r.w + 1).min(40) {
                    let (uu, vv) = flow.at(x, y);
                    max_sp = max_sp.max(((uu as f64).powi(2) + (vv as f64).powi(2)).sqrt());
                }
            }
            assert!(p.speed <= max_sp + 1e-9);
            assert!(p.position.x >= r.x0 as f64 && p.position.x <= (r.x0 + r.w - 1) as f64);
            assert!(p.position.y >= r.y0 as f64 && p.position.y <= (r.y0 + r.h - 1) as f64);
        }
    }

    #[test]
    fn nonzero_particles_only_near_agent() {
        let mut sc = simulate_scenario(
            &ScenarioConfig { agents: 1, frames: 2, width: 80, height: 80, ..Default::default() },
            0,
        )
        .unwrap();
        sc.states[0][0] = AgentState {
            pos: Vector2::new(40.0, 40.0),
            vel: Vector2::new(1.5, 0.0),
            radius: 4.0,
            active: true,
        };
        let field = sc.rasterize_flow(0).unwrap();
        let g = make_grid(80, 80, 8).unwrap();
        let particles = advect_frame(&field, &g, 5, 0).unwrap();
        for p in particles {
            if p.speed > 0.0 {
                // the cell must intersect the splat disc
                let r = g.cell_rect(p.cell_index);
                let hit = (r.y0..r.y0 + r.h).any(|y| {
                    (r.x0..r.x0 + r.w)
                        .any(|x| field.at(x, y) != (0.0, 0.0))
                });
                assert!(hit, "cell {} has speed {} but no splat", p.cell_index, p.speed);
            }
        }
    }
}
