//! Triangle rasterization with an exact single-coverage fill rule, plus the
//! YCoCg color transform and its 6-bit quantization maps.
//!
//! Pixels are sampled at integer coordinates so triangle vertices reproduce
//! their colors exactly. Ties on shared edges are resolved by a half-plane
//! rule on the directed edge (include when the direction is lexicographically
//! positive by (y, x)); hull edges on the left and bottom image borders,
//! which that rule would exclude and which have no neighboring triangle, are
//! included explicitly. Together this assigns every pixel to exactly one
//! triangle.

use crate::model::{Raster, TriModel};
use crate::triangulate::{self, TriangulateError};
use std::io::{self, Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("invalid model: {0}")]
    InvalidModel(#[from] crate::model::ModelError),
    #[error("triangulation failed: {0}")]
    Triangulate(#[from] TriangulateError),
    #[error("ppm: {0}")]
    Ppm(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Real-valued (dequantized) YCoCg color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YCoCgF {
    pub y: f64,
    pub co: f64,
    pub cg: f64,
}

pub fn rgb_to_ycocg(r: u8, g: u8, b: u8) -> YCoCgF {
    let (r, g, b) = (r as f64, g as f64, b as f64);
    YCoCgF {
        y: r / 4.0 + g / 2.0 + b / 4.0,
        co: (r - b) / 2.0,
        cg: -r / 4.0 + g / 2.0 - b / 4.0,
    }
}

#[inline]
fn round_half_away(v: f64) -> f64 {
    // f64::round rounds half away from zero already
    v.round()
}

#[inline]
fn clamp_u8(v: f64) -> u8 {
    round_half_away(v).clamp(0.0, 255.0) as u8
}

pub fn ycocg_to_rgb(c: YCoCgF) -> [u8; 3] {
    let r = c.y + c.co - c.cg;
    let g = c.y + c.cg;
    let b = c.y - c.co - c.cg;
    [clamp_u8(r), clamp_u8(g), clamp_u8(b)]
}

/// Quantize a luma value in [0, 255] to 6 bits.
pub fn quant_y(y: f64) -> u8 {
    (round_half_away(y * 63.0 / 255.0) as i64).clamp(0, 63) as u8
}

pub fn dequant_y(q: u8) -> f64 {
    q as f64 * 255.0 / 63.0
}

/// Quantize a chroma value in [-255, 255] to 6 bits: halved, offset to
/// [0, 127], then scaled.
pub fn quant_chroma(c: f64) -> u8 {
    (round_half_away((c / 2.0 + 63.5) * 63.0 / 127.0) as i64).clamp(0, 63) as u8
}

pub fn dequant_chroma(q: u8) -> f64 {
    (q as f64 * 127.0 / 63.0 - 63.5) * 2.0
}

pub fn quantize(c: YCoCgF) -> (u8, u8, u8) {
    (quant_y(c.y), quant_chroma(c.co), quant_chroma(c.cg))
}

pub fn dequantize(y: u8, co: u8, cg: u8) -> YCoCgF {
    YCoCgF {
        y: dequant_y(y),
        co: dequant_chroma(co),
        cg: dequant_chroma(cg),
    }
}

/// Edge-zero inclusion rules. Each corresponds to testing the pixel center
/// nudged by an infinitesimal shift, so each rule admits at most one claimant
/// among triangles sharing the edge or vertex. Rule 0 (shift left-down) is
/// the primary half-open fill rule; rules 1-3 (right-up, right-down, left-up)
/// are fallbacks for border pixels the primary shift pushes off the image.
#[inline]
fn tie_rule(rule: usize, dx: i64, dy: i64) -> bool {
    match rule {
        0 => dy > 0 || (dy == 0 && dx > 0),
        1 => dy < 0 || (dy == 0 && dx < 0),
        2 => dx > 0 || (dx == 0 && dy < 0),
        _ => dx < 0 || (dx == 0 && dy > 0),
    }
}

/// Rasterize one CCW triangle, clipped to `clip` (x0, y0, x1, y1 inclusive),
/// under the primary half-open rule: a pixel on an edge belongs to the
/// triangle only if the nudged sample point falls inside, so neighboring
/// triangles never both claim it. Pixels on the image's left column or
/// bottom row may be claimed by no triangle at all; [`rasterize_partition`]
/// resolves those. The callback receives the pixel and its three barycentric
/// numerators over the doubled area, in vertex order.
pub fn fill_triangle<F: FnMut(u32, u32, i64, i64, i64, i64)>(
    pts: [(i64, i64); 3],
    width: u32,
    height: u32,
    clip: (u32, u32, u32, u32),
    mut emit: F,
) {
    let [a, b, c] = pts;
    let area2 = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    debug_assert!(area2 > 0, "triangles must be wound CCW in pixel algebra");
    let min_x = a.0.min(b.0).min(c.0).max(clip.0 as i64);
    let min_y = a.1.min(b.1).min(c.1).max(clip.1 as i64);
    let max_x = a.0.max(b.0).max(c.0).min(clip.2 as i64).min(width as i64 - 1);
    let max_y = a.1.max(b.1).max(c.1).min(clip.3 as i64).min(height as i64 - 1);
    // inclusion decision per edge when the edge function is zero
    let edge_zero_ok =
        |p: (i64, i64), q: (i64, i64)| -> bool { tie_rule(0, q.0 - p.0, q.1 - p.1) };
    let ok_bc = edge_zero_ok(b, c);
    let ok_ca = edge_zero_ok(c, a);
    let ok_ab = edge_zero_ok(a, b);
    for y in min_y..=max_y {
        for x in min_x..=max_x {
            let p = (x, y);
            // edge functions: e0 opposite a (edge b->c), etc.
            let e0 = (c.0 - b.0) * (p.1 - b.1) - (c.1 - b.1) * (p.0 - b.0);
            let e1 = (a.0 - c.0) * (p.1 - c.1) - (a.1 - c.1) * (p.0 - c.0);
            let e2 = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            let inside = (e0 > 0 || (e0 == 0 && ok_bc))
                && (e1 > 0 || (e1 == 0 && ok_ca))
                && (e2 > 0 || (e2 == 0 && ok_ab));
            if inside {
                emit(x as u32, y as u32, e0, e1, e2, area2);
            }
        }
    }
}

/// Rasterize CCW triangles that tile the image rectangle so that every clip
/// pixel inside their union is emitted exactly once, with the owning
/// triangle's index. The primary half-open pass covers everything except
/// pixels on the image's left column and bottom row, whose nudged sample
/// point leaves the image; those are assigned by re-testing the triangles
/// under the three fallback nudge directions in a fixed order, each of which
/// admits at most one claimant, so ownership is unique and deterministic.
pub fn rasterize_partition<F: FnMut(usize, u32, u32, i64, i64, i64, i64)>(
    tris: &[[(i64, i64); 3]],
    width: u32,
    height: u32,
    clip: (u32, u32, u32, u32),
    mut emit: F,
) {
    let x1 = clip.2.min(width - 1);
    let y1 = clip.3.min(height - 1);
    if clip.0 > x1 || clip.1 > y1 {
        return;
    }
    let cw = (x1 - clip.0 + 1) as usize;
    let ch = (y1 - clip.1 + 1) as usize;
    let mut written = vec![false; cw * ch];
    for (i, pts) in tris.iter().enumerate() {
        fill_triangle(*pts, width, height, clip, |x, y, w0, w1, w2, a2| {
            written[(y - clip.1) as usize * cw + (x - clip.0) as usize] = true;
            emit(i, x, y, w0, w1, w2, a2);
        });
    }
    // only left-column / bottom-row image pixels can be left unclaimed
    let mut resolve = |x: u32, y: u32, written: &mut [bool]| {
        let slot = (y - clip.1) as usize * cw + (x - clip.0) as usize;
        if written[slot] {
            return;
        }
        let p = (x as i64, y as i64);
        for rule in 1..4 {
            for (i, &[a, b, c]) in tris.iter().enumerate() {
                let e0 = (c.0 - b.0) * (p.1 - b.1) - (c.1 - b.1) * (p.0 - b.0);
                let e1 = (a.0 - c.0) * (p.1 - c.1) - (a.1 - c.1) * (p.0 - c.0);
                let e2 = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
                let ok = |e: i64, q: (i64, i64), r: (i64, i64)| {
                    e > 0 || (e == 0 && tie_rule(rule, r.0 - q.0, r.1 - q.1))
                };
                if ok(e0, b, c) && ok(e1, c, a) && ok(e2, a, b) {
                    let area2 = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
                    written[slot] = true;
                    emit(i, x, y, e0, e1, e2, area2);
                    return;
                }
            }
        }
    };
    if clip.0 == 0 {
        for y in clip.1..=y1 {
            resolve(0, y, &mut written);
        }
    }
    if y1 == height - 1 {
        for x in clip.0..=x1 {
            resolve(x, height - 1, &mut written);
        }
    }
}

/// Interpolate three YCoCg vertex colors with the given barycentric
/// numerators and convert to RGB. Fixed evaluation order for determinism.
#[inline]
pub fn interpolate_rgb(
    colors: [YCoCgF; 3],
    w0: i64,
    w1: i64,
    w2: i64,
    area2: i64,
) -> [u8; 3] {
    let inv = 1.0 / area2 as f64;
    let y = (w0 as f64 * colors[0].y + w1 as f64 * colors[1].y + w2 as f64 * colors[2].y) * inv;
    let co = (w0 as f64 * colors[0].co + w1 as f64 * colors[1].co + w2 as f64 * colors[2].co) * inv;
    let cg = (w0 as f64 * colors[0].cg + w1 as f64 * colors[1].cg + w2 as f64 * colors[2].cg) * inv;
    ycocg_to_rgb(YCoCgF { y, co, cg })
}

/// Render free-color triangles into a raster. `tris` holds CCW point triples
/// with a YCoCg color per vertex.
pub fn render_triangles(
    tris: &[([(i64, i64); 3], [YCoCgF; 3])],
    width: u32,
    height: u32,
) -> Raster {
    let mut out = Raster::new(width, height);
    let clip = (0, 0, width - 1, height - 1);
    let pts: Vec<[(i64, i64); 3]> = tris.iter().map(|(p, _)| *p).collect();
    rasterize_partition(&pts, width, height, clip, |i, x, y, w0, w1, w2, area2| {
        out.set(x, y, interpolate_rgb(tris[i].1, w0, w1, w2, area2));
    });
    out
}

/// Orient a point triple CCW in pixel algebra; returns None for degenerate
/// (collinear) triples, which canonical triangulations never contain.
pub fn ccw(pts: [(i64, i64); 3]) -> Option<[usize; 3]> {
    let [a, b, c] = pts;
    let area2 = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    match area2.cmp(&0) {
        std::cmp::Ordering::Greater => Some([0, 1, 2]),
        std::cmp::Ordering::Less => Some([0, 2, 1]),
        std::cmp::Ordering::Equal => None,
    }
}

/// Render a model at its native size.
pub fn render(model: &TriModel) -> Result<Raster, RasterError> {
    render_scaled(model, 1)
}

/// Render a model at `scale` times its native size by scaling the vertex
/// coordinates before rasterization; the representation is
/// resolution-independent. Corners are remapped onto the scaled image
/// corners so the triangulation still covers every pixel.
pub fn render_scaled(model: &TriModel, scale: u32) -> Result<Raster, RasterError> {
    model.validate()?;
    let tri = triangulate::delaunay(&model.grid, &model.vertices)?;
    let occupied = model.vertices.occupied_indices();
    let width = model.grid.width() * scale;
    let height = model.grid.height() * scale;
    let remap = |v: u32, from: u32, to: u32| -> i64 {
        let num = v as i64 * (to as i64 - 1);
        let den = from as i64 - 1;
        (2 * num + den) / (2 * den)
    };
    let pts: Vec<(i64, i64)> = occupied
        .iter()
        .map(|&idx| {
            let (x, y) = model.grid.index_to_pixel(idx);
            (
                remap(x, model.grid.width(), width),
                remap(y, model.grid.height(), height),
            )
        })
        .collect();
    let colors: Vec<YCoCgF> = model
        .vertices
        .color_index
        .iter()
        .map(|&ci| {
            let e = model.colors.entries[ci as usize];
            dequantize(e.y, e.co, e.cg)
        })
        .collect();
    let tris: Vec<([(i64, i64); 3], [YCoCgF; 3])> = tri
        .triangles
        .iter()
        .map(|t| {
            let raw = [
                pts[t[0] as usize],
                pts[t[1] as usize],
                pts[t[2] as usize],
            ];
            let perm = ccw(raw).expect("canonical triangulations have no degenerate triangles");
            (
                [raw[perm[0]], raw[perm[1]], raw[perm[2]]],
                [
                    colors[t[perm[0]] as usize],
                    colors[t[perm[1]] as usize],
                    colors[t[perm[2]] as usize],
                ],
            )
        })
        .collect();
    Ok(render_triangles(&tris, width, height))
}

/// Write a binary PPM (P6).
pub fn write_ppm<W: Write>(raster: &Raster, mut w: W) -> Result<(), RasterError> {
    write!(w, "P6\n{} {}\n255\n", raster.width, raster.height)?;
    let mut buf = Vec::with_capacity(raster.pixels.len() * 3);
    for px in &raster.pixels {
        buf.extend_from_slice(px);
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Read a binary PPM (P6), maxval 255.
pub fn read_ppm<R: Read>(mut r: R) -> Result<Raster, RasterError> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut pos = 0usize;
    let mut token = || -> Result<String, RasterError> {
        // skip whitespace and comments
        loop {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(RasterError::Ppm("unexpected end of header".into()));
        }
        Ok(String::from_utf8_lossy(&data[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err(RasterError::Ppm("not a P6 file".into()));
    }
    let width: u32 = token()?.parse().map_err(|_| RasterError::Ppm("bad width".into()))?;
    let height: u32 = token()?.parse().map_err(|_| RasterError::Ppm("bad height".into()))?;
    let maxval: u32 = token()?.parse().map_err(|_| RasterError::Ppm("bad maxval".into()))?;
    if maxval != 255 {
        return Err(RasterError::Ppm(format!("unsupported maxval {maxval}")));
    }
    pos += 1; // single whitespace after maxval
    let need = width as usize * height as usize * 3;
    if data.len() < pos + need {
        return Err(RasterError::Ppm("truncated pixel data".into()));
    }
    let pixels = data[pos..pos + need]
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok(Raster { width, height, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ColorEntry, GridSpec, TriModel, VertexSet};

    #[test]
    fn ycocg_gray_axis() {
        let c = rgb_to_ycocg(255, 255, 255);
        assert_eq!((c.y, c.co, c.cg), (255.0, 0.0, 0.0));
        let c = rgb_to_ycocg(0, 0, 0);
        assert_eq!((c.y, c.co, c.cg), (0.0, 0.0, 0.0));
    }

    #[test]
    fn ycocg_red() {
        let c = rgb_to_ycocg(255, 0, 0);
        assert_eq!((c.y, c.co, c.cg), (63.75, 127.5, -63.75));
        assert_eq!(ycocg_to_rgb(c), [255, 0, 0]);
    }

    #[test]
    fn ycocg_roundtrip_all_channels() {
        for r in (0..=255).step_by(17) {
            for g in (0..=255).step_by(23) {
                for b in (0..=255).step_by(29) {
                    let c = rgb_to_ycocg(r as u8, g as u8, b as u8);
                    assert_eq!(ycocg_to_rgb(c), [r as u8, g as u8, b as u8]);
                }
            }
        }
    }

    #[test]
    fn ycocg_out_of_gamut_clamps() {
        assert_eq!(ycocg_to_rgb(YCoCgF { y: 300.0, co: 0.0, cg: 0.0 }), [255, 255, 255]);
    }

    #[test]
    fn quantization_covers_range() {
        assert_eq!(quant_y(0.0), 0);
        assert_eq!(quant_y(255.0), 63);
        assert_eq!(quant_chroma(0.0), 32);
        assert_eq!(quant_chroma(-255.0), 0);
        assert_eq!(quant_chroma(255.0), 63);
    }

    fn constant_model(grid: GridSpec, y: u8, co: u8, cg: u8) -> TriModel {
        TriModel::minimal(grid, y, co, cg)
    }

    #[test]
    fn constant_color_model_renders_constant() {
        let grid = GridSpec::new(5, 32, 32).unwrap();
        let m = constant_model(grid, 40, 32, 32);
        let r = render(&m).unwrap();
        let expected = ycocg_to_rgb(dequantize(40, 32, 32));
        assert!(r.pixels.iter().all(|&p| p == expected));
    }

    #[test]
    fn exhaustive_coverage_single_assignment() {
        // every pixel must be claimed exactly once, including edges/vertices
        let grid = GridSpec::new(7, 61, 47).unwrap();
        let mut occupancy = vec![false; grid.point_count()];
        for idx in grid.corner_indices() {
            occupancy[idx] = true;
        }
        for idx in [3usize, 10, 17, 24, 30, 36, 44] {
            occupancy[idx] = true;
        }
        let n = occupancy.iter().filter(|&&o| o).count();
        let vs = VertexSet { occupancy, color_index: vec![0; n] };
        let tri = crate::triangulate::delaunay(&grid, &vs).unwrap();
        let occupied = vs.occupied_indices();
        let pts: Vec<(i64, i64)> = occupied
            .iter()
            .map(|&idx| {
                let (x, y) = grid.index_to_pixel(idx);
                (x as i64, y as i64)
            })
            .collect();
        let ccw_tris: Vec<[(i64, i64); 3]> = tri
            .triangles
            .iter()
            .map(|t| {
                let raw = [pts[t[0] as usize], pts[t[1] as usize], pts[t[2] as usize]];
                let perm = ccw(raw).unwrap();
                [raw[perm[0]], raw[perm[1]], raw[perm[2]]]
            })
            .collect();
        let mut count = vec![0u32; 61 * 47];
        rasterize_partition(&ccw_tris, 61, 47, (0, 0, 60, 46), |_, x, y, _, _, _, _| {
            count[y as usize * 61 + x as usize] += 1;
        });
        for (i, &c) in count.iter().enumerate() {
            assert_eq!(c, 1, "pixel {} covered {c} times", i);
        }
    }

    #[test]
    fn interpolation_stays_within_vertex_color_bounds() {
        let grid = GridSpec::new(2, 16, 16).unwrap();
        let mut m = TriModel::minimal(grid, 0, 32, 32);
        m.colors.entries = vec![
            ColorEntry { y: 10, co: 20, cg: 30, freq: 2 },
            ColorEntry { y: 60, co: 40, cg: 35, freq: 2 },
        ];
        m.vertices.color_index = vec![0, 1, 1, 0];
        let r = render(&m).unwrap();
        let lo = dequantize(10, 20, 30);
        let hi = dequantize(60, 40, 35);
        for px in &r.pixels {
            let c = rgb_to_ycocg(px[0], px[1], px[2]);
            assert!(c.y >= lo.y - 1.0 && c.y <= hi.y + 1.0);
        }
    }

    #[test]
    fn diagonal_split_matches_hand_interpolation() {
        // 4-corner model, two colors split along the canonical diagonal
        let grid = GridSpec::new(2, 9, 9).unwrap();
        let mut m = TriModel::minimal(grid, 0, 32, 32);
        m.colors.entries = vec![
            ColorEntry { y: 0, co: 32, cg: 32, freq: 2 },
            ColorEntry { y: 63, co: 32, cg: 32, freq: 2 },
        ];
        // corners in row-major order: (0,0), (8,0), (0,8), (8,8)
        m.vertices.color_index = vec![0, 1, 1, 0];
        let r = render(&m).unwrap();
        // on the diagonal x == y the barycentric blend reduces to 2-point
        // interpolation between the (0,0) and (8,8) colors, both entry 0
        let c0 = ycocg_to_rgb(dequantize(0, 32, 32));
        for d in 0..9u32 {
            assert_eq!(r.get(d, d), c0, "diagonal pixel {d}");
        }
        // along the top edge: linear blend of entries 0 and 1 in y
        for x in 0..9u32 {
            let w1 = x as f64 / 8.0;
            let y = (1.0 - w1) * dequant_y(0) + w1 * dequant_y(63);
            // both entries share chroma code 32, so chroma is constant
            let expect = ycocg_to_rgb(YCoCgF {
                y,
                co: dequant_chroma(32),
                cg: dequant_chroma(32),
            });
            let got = r.get(x, 0);
            for ch in 0..3 {
                assert!((got[ch] as i32 - expect[ch] as i32).abs() <= 1);
            }
        }
    }

    #[test]
    fn render_is_deterministic() {
        let grid = GridSpec::new(5, 40, 40).unwrap();
        let m = TriModel::minimal(grid, 17, 30, 40);
        assert_eq!(render(&m).unwrap(), render(&m).unwrap());
    }

    #[test]
    fn render_scaled_doubles_size() {
        let grid = GridSpec::new(3, 21, 21).unwrap();
        let m = TriModel::minimal(grid, 17, 30, 40);
        let r = render_scaled(&m, 2).unwrap();
        assert_eq!((r.width, r.height), (42, 42));
    }

    #[test]
    fn ppm_roundtrip() {
        let grid = GridSpec::new(3, 20, 15).unwrap();
        let m = TriModel::minimal(grid, 50, 20, 44);
        let r = render(&m).unwrap();
        let mut buf = Vec::new();
        write_ppm(&r, &mut buf).unwrap();
        let back = read_ppm(&buf[..]).unwrap();
        assert_eq!(r, back);
    }
}
