use proptest::prelude::*;

use ucode::romgrid::{
    apply_segment_inversion, flip_convention, grid_to_words, normalize_columns, synthesize_grid, BitGrid, GridConfig,
    Parity,
};

fn arb_config() -> impl Strategy<Value = (GridConfig, usize)> {
    (1usize..=4, prop::sample::select(vec![1usize, 2, 4, 8, 16]), any::<bool>(), 0usize..3)
        .prop_flat_map(|(per_row, n, flip, parity)| {
            let cols = 64 * per_row;
            (
                Just(per_row),
                Just(flip),
                Just(parity),
                Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
                prop::collection::btree_set(1..cols, 0..4),
            )
        })
        .prop_map(|(per_row, flip, parity, order, segments)| {
            let cfg = GridConfig {
                parity: [None, Some(Parity::Even), Some(Parity::Odd)][parity],
                segments: segments.into_iter().collect(),
                order,
                flip,
            };
            (cfg, per_row)
        })
}

proptest! {
    #[test]
    fn words_survive_the_pipeline((cfg, per_row) in arb_config(), rows in 1usize..6, seed in any::<u64>()) {
        let words: Vec<u64> = (0..(rows * per_row) as u64).map(|i| seed.rotate_left(i as u32) ^ i).collect();
        let grid = synthesize_grid(&words, 64 * per_row, &cfg).unwrap();
        prop_assert_eq!(grid_to_words(&grid, &cfg).unwrap(), words);
    }

    #[test]
    fn inversions_are_involutions(bits in prop::collection::vec(any::<bool>(), 1..200), cut in 1usize..8) {
        let cols = bits.len();
        let text: String = bits.iter().map(|&b| if b { '1' } else { '0' }).collect::<String>() + "\n";
        let g = BitGrid::parse_text(&text).unwrap();
        prop_assert_eq!(g.to_text(), text);
        prop_assert_eq!(&normalize_columns(&normalize_columns(&g, Parity::Odd), Parity::Odd), &g);
        prop_assert_eq!(&flip_convention(&flip_convention(&g)), &g);
        if cut < cols {
            let once = apply_segment_inversion(&g, &[cut]).unwrap();
            prop_assert_eq!(&apply_segment_inversion(&once, &[cut]).unwrap(), &g);
        }
    }
}

#[test]
fn flipping_changes_every_word() {
    let mut cfg = GridConfig::new(4);
    let words = vec![0u64, u64::MAX];
    let grid = synthesize_grid(&words, 64, &cfg).unwrap();
    cfg.flip = true;
    assert_eq!(grid_to_words(&grid, &cfg).unwrap(), vec![u64::MAX, 0]);
}
