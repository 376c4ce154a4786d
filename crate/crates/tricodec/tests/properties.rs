//! Property tests across the public codec surface.

use proptest::collection::vec;
use proptest::prelude::*;

use tricodec::entropy::{FreqTable, MessageDecoder, MessageEncoder};
use tricodec::raster;
use tricodec::{bitstream, ColorEntry, ColorTable, GridSpec, Raster, TriModel, VertexSet};

/// Strategy for a valid model on a small grid.
fn arb_model() -> impl Strategy<Value = TriModel> {
    (2u32..=12, 12u32..=64, 12u32..=64, proptest::collection::vec(any::<bool>(), 144), 1usize..=6)
        .prop_flat_map(|(g, w, h, occ_bits, n_colors)| {
            let grid = GridSpec::new(g, w, h).unwrap();
            let n_g = grid.point_count();
            let mut occupancy: Vec<bool> = occ_bits[..n_g].to_vec();
            for c in grid.corner_indices() {
                occupancy[c] = true;
            }
            let v_t = occupancy.iter().filter(|&&o| o).count();
            (
                Just(grid),
                Just(occupancy),
                vec(0..n_colors, v_t),
                vec((0u8..64, 0u8..64, 0u8..64), n_colors),
            )
        })
        .prop_map(|(grid, occupancy, raw_index, raw_entries)| {
            let n_colors = raw_entries.len();
            let entries: Vec<ColorEntry> = raw_entries
                .iter()
                .enumerate()
                .map(|(c, &(y, co, cg))| ColorEntry {
                    y,
                    co,
                    cg,
                    freq: raw_index.iter().filter(|&&i| i == c).count() as u32,
                })
                .collect();
            let mut model = TriModel {
                grid,
                vertices: VertexSet {
                    occupancy,
                    color_index: raw_index.iter().map(|&c| c as u8).collect(),
                },
                colors: ColorTable { entries },
            };
            model.canonicalize_colors();
            let _ = n_colors;
            model
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn codec_round_trips(model in arb_model()) {
        prop_assert!(model.validate().is_ok());
        let bytes = bitstream::encode(&model).unwrap();
        let back = bitstream::decode(&bytes).unwrap();
        prop_assert_eq!(model, back);
    }

    #[test]
    fn rendering_is_total_and_scale_consistent(model in arb_model()) {
        let r = raster::render(&model).unwrap();
        prop_assert_eq!(r.width, model.grid.width());
        prop_assert_eq!(r.height, model.grid.height());
        // a doubled render exists and has doubled dimensions
        let r2 = raster::render_scaled(&model, 2).unwrap();
        prop_assert_eq!(r2.width, 2 * model.grid.width());
    }

    #[test]
    fn rans_round_trips_mixed_models(
        symbols in vec((0u16..5, 1u32..6), 0..200),
        seed in any::<u64>(),
    ) {
        // alphabet sizes vary per position; weights derived deterministically
        let tables: Vec<FreqTable> = symbols
            .iter()
            .enumerate()
            .map(|(i, &(_, spread))| {
                let n = 5usize;
                let weights: Vec<num_bigint::BigUint> = (0..n)
                    .map(|s| {
                        let w = 1 + ((seed >> (i % 50)) as usize + s * spread as usize) % 97;
                        num_bigint::BigUint::from(w)
                    })
                    .collect();
                FreqTable::from_weights(&weights).unwrap()
            })
            .collect();
        let mut enc = MessageEncoder::new();
        for (&(sym, _), table) in symbols.iter().zip(&tables) {
            enc.put(sym, table.clone()).unwrap();
        }
        let bytes = enc.finish();
        let mut dec = MessageDecoder::new(&bytes).unwrap();
        for (&(sym, _), table) in symbols.iter().zip(&tables) {
            prop_assert_eq!(dec.decode(table).unwrap(), sym);
        }
        dec.finish().unwrap();
    }

    #[test]
    fn ppm_round_trips(w in 1u32..12, h in 1u32..12, fill in any::<[u8; 3]>()) {
        let mut r = Raster::new(w, h);
        for y in 0..h {
            for x in 0..w {
                r.set(x, y, [fill[0].wrapping_add(x as u8), fill[1], fill[2].wrapping_add(y as u8)]);
            }
        }
        let mut buf = Vec::new();
        raster::write_ppm(&r, &mut buf).unwrap();
        let back = raster::read_ppm(buf.as_slice()).unwrap();
        prop_assert_eq!(r, back);
    }
}
