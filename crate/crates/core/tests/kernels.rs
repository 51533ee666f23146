use ppa_core::array::{
    AReg, AnalogPlane, ArrayGeometry, BitPlane, DReg, NoiseModel, OpKind, PeArray,
};
use ppa_core::kernels::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quiet(w: usize, h: usize) -> PeArray {
    PeArray::new(ArrayGeometry::new(w, h).unwrap())
        .with_noise(NoiseModel::noiseless())
        .unwrap()
}

const TAP: TapRegs = TapRegs {
    weights: DReg::D0,
    out: DReg::D2,
    tmp: DReg::D3,
    mask: DReg::D4,
};

const CONV: ConvRegs = ConvRegs {
    input: AReg::R0,
    output: AReg::R3,
    row: AReg::R1,
    work: AReg::R2,
    tap: TAP,
};

const POOL_REGS: PoolRegs = PoolRegs {
    tmp: AReg::R1,
    diff: AReg::R2,
    mask: DReg::D5,
};

const STACK: StackRegs = StackRegs {
    below: DReg::D10,
    moving: DReg::D11,
    bottom: DReg::D12,
};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_filters(n: usize, k: usize, seed: u64) -> Vec<ConvFilter> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| ConvFilter::from_fn(k, |_, _| r.random_bool(0.5)))
        .collect()
}

fn random_binary(w: usize, h: usize, p: f64, seed: u64) -> AnalogPlane {
    let mut r = rng(seed);
    AnalogPlane::from_fn(w, h, |_, _| f64::from(u8::from(r.random_bool(p))))
}

fn random_bits(w: usize, h: usize, p: f64, seed: u64) -> BitPlane {
    let mut r = rng(seed);
    BitPlane::from_fn(w, h, |_, _| r.random_bool(p))
}

fn popcount(p: &BitPlane) -> u64 {
    let mut n = 0;
    for y in 0..p.height() {
        for x in 0..p.width() {
            n += u64::from(p.get(x, y));
        }
    }
    n
}

// ----- grids and duplication -----

#[test]
fn grid_validation() {
    let g = ArrayGeometry::default();
    let grid = BlockGrid::square(g, 32).unwrap();
    assert_eq!((grid.blocks_x, grid.blocks_y, grid.block_count()), (8, 8, 64));
    assert!(BlockGrid::square(g, 30).is_err());
    assert_eq!(grid.block_of(33, 65), 2 * 8 + 1);
}

#[test]
fn duplicate_fills_every_block() {
    let mut a = quiet(96, 64);
    let grid = BlockGrid::square(a.geometry(), 32).unwrap();
    let mut r = rng(1);
    let tile: Vec<f64> = (0..32 * 32).map(|_| r.random_range(-3.0..3.0)).collect();
    let img = AnalogPlane::from_fn(96, 64, |x, y| {
        if x < 32 && y < 32 {
            tile[y * 32 + x]
        } else {
            0.0
        }
    });
    a.load_analog(AReg::R0, &img).unwrap();
    duplicate_input(&mut a, AReg::R0, AReg::R1, &grid).unwrap();
    let out = a.analog(AReg::R0);
    for y in 0..64 {
        for x in 0..96 {
            assert_eq!(out.get(x, y), tile[(y % 32) * 32 + x % 32]);
        }
    }
}

#[test]
fn duplicate_single_block_is_identity() {
    let mut a = quiet(32, 32);
    let grid = BlockGrid::square(a.geometry(), 32).unwrap();
    let img = random_binary(32, 32, 0.3, 2);
    a.load_analog(AReg::R0, &img).unwrap();
    duplicate_input(&mut a, AReg::R0, AReg::R1, &grid).unwrap();
    assert_eq!(a.analog(AReg::R0), img);
}

#[test]
fn duplicate_two_layer_shift_count() {
    let mut a = quiet(256, 256);
    let grid = BlockGrid::square(a.geometry(), 32).unwrap();
    duplicate_input(&mut a, AReg::R0, AReg::R1, &grid).unwrap();
    let shifts: u64 = a
        .trace()
        .kind_counts()
        .iter()
        .filter(|(k, _)| *k == OpKind::AnalogShift)
        .map(|(_, c)| c)
        .sum();
    assert_eq!(shifts, 2 * (32 + 64 + 128));
}

// ----- conv weights -----

#[test]
fn embed_all_ones_filter() {
    let grid = BlockGrid::square(ArrayGeometry::new(16, 16).unwrap(), 8).unwrap();
    let f = ConvFilter::from_fn(4, |_, _| true);
    let p = embed_conv_weights(&[f], &grid, 4).unwrap();
    for y in 0..16 {
        for x in 0..16 {
            assert_eq!(p.get(x, y), x < 8 && y < 8);
        }
    }
}

#[test]
fn embed_single_bit_filter() {
    let grid = BlockGrid::square(ArrayGeometry::new(16, 16).unwrap(), 16).unwrap();
    let f = ConvFilter::from_fn(4, |r, c| (r, c) == (1, 2));
    let p = embed_conv_weights(&[f], &grid, 4).unwrap();
    for y in 0..16 {
        for x in 0..16 {
            assert_eq!(p.get(x, y), x % 4 == 2 && y % 4 == 1);
        }
    }
}

#[test]
fn embed_random_filters_read_back() {
    let grid = BlockGrid::square(ArrayGeometry::default(), 32).unwrap();
    let filters = random_filters(64, 4, 3);
    let p = embed_conv_weights(&filters, &grid, 4).unwrap();
    let mut r = rng(4);
    for _ in 0..2000 {
        let (x, y) = (r.random_range(0..256), r.random_range(0..256));
        let b = (y / 32) * 8 + x / 32;
        assert_eq!(p.get(x, y), filters[b].bit(y % 4, x % 4));
    }
}

#[test]
fn embed_rejects_bad_shapes() {
    let grid = BlockGrid::square(ArrayGeometry::default(), 32).unwrap();
    assert!(matches!(
        embed_conv_weights(&random_filters(65, 4, 1), &grid, 4),
        Err(KernelError::TooManyFilters { count: 65, .. })
    ));
    assert!(matches!(
        embed_conv_weights(&random_filters(1, 5, 1), &grid, 5),
        Err(KernelError::FilterSize { k: 5, .. })
    ));
}

#[test]
fn broadcast_uniform_plane_is_identity() {
    let mut a = quiet(16, 16);
    a.load_bits(DReg::D0, &BitPlane::ones(16, 16)).unwrap();
    broadcast_tap(&mut a, &TAP, 4, (2, 1));
    assert!(a.bits(DReg::D2).is_all_ones());
}

#[test]
fn broadcast_matches_tile_lookup() {
    let (w, h) = (24, 20);
    let mut a = quiet(w, h);
    let wp = random_bits(w, h, 0.5, 5);
    a.load_bits(DReg::D0, &wp).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            broadcast_tap(&mut a, &TAP, 4, (i, j));
            for y in 0..h {
                for x in 0..w {
                    let want = wp.get(x - x % 4 + j, y - y % 4 + i);
                    assert_eq!(a.bits(DReg::D2).get(x, y), want, "tap {i},{j} at {x},{y}");
                }
            }
        }
    }
    // tile origin, tap (0,0): own bit
    broadcast_tap(&mut a, &TAP, 4, (0, 0));
    assert_eq!(a.bits(DReg::D2).get(8, 4), wp.get(8, 4));
}

// ----- convolution -----

/// Dense per-block correlation with zero padding outside the block.
fn dense_conv(img: &AnalogPlane, filters: &[ConvFilter], grid: &BlockGrid, k: usize) -> AnalogPlane {
    AnalogPlane::from_fn(img.width(), img.height(), |x, y| {
        let f = &filters[grid.block_of(x, y)];
        let (bx0, by0) = (x - x % grid.block_w, y - y % grid.block_h);
        let mut s = 0.0;
        for i in 0..k {
            for j in 0..k {
                let (sx, sy) = (x + j, y + i);
                if sx < bx0 + grid.block_w && sy < by0 + grid.block_h {
                    s += f.weight(i, j) * img.get(sx, sy);
                }
            }
        }
        s
    })
}

fn run_conv(a: &mut PeArray, img: &AnalogPlane, filters: &[ConvFilter], grid: &BlockGrid) {
    a.load_analog(AReg::R0, img).unwrap();
    let wp = embed_conv_weights(filters, grid, 4).unwrap();
    a.load_bits(DReg::D0, &wp).unwrap();
    conv_layer(a, &CONV, grid, 4).unwrap();
}

#[test]
fn conv_impulse_response() {
    let mut a = quiet(32, 32).with_block_isolation(true);
    let grid = BlockGrid::square(a.geometry(), 16).unwrap();
    let filters = vec![ConvFilter::from_fn(4, |_, _| true); 4];
    let mut img = AnalogPlane::zeros(32, 32);
    let (px, py) = (18, 5);
    img.set(px, py, 1.0);
    run_conv(&mut a, &img, &filters, &grid);
    let out = a.analog(AReg::R3);
    for y in 0..32 {
        for x in 0..32 {
            let inside = (px - 3..=px).contains(&x)
                && (py - 3..=py).contains(&y)
                && grid.block_of(x, y) == grid.block_of(px, py);
            assert_eq!(out.get(x, y), if inside { 1.0 } else { 0.0 }, "{x},{y}");
        }
    }
}

#[test]
fn conv_zero_image() {
    let mut a = quiet(32, 32).with_block_isolation(true);
    let grid = BlockGrid::square(a.geometry(), 16).unwrap();
    run_conv(&mut a, &AnalogPlane::zeros(32, 32), &random_filters(4, 4, 6), &grid);
    assert!(a.analog_slice(AReg::R3).iter().all(|&v| v == 0.0));
}

#[test]
fn conv_matches_dense_oracle_with_isolation() {
    for seed in 0..4 {
        let mut a = quiet(64, 48).with_block_isolation(true);
        let grid = BlockGrid::new(a.geometry(), 16, 16).unwrap();
        let filters = random_filters(grid.block_count(), 4, seed);
        let img = random_binary(64, 48, 0.4, seed + 100);
        run_conv(&mut a, &img, &filters, &grid);
        assert_eq!(a.analog(AReg::R3), dense_conv(&img, &filters, &grid, 4));
        assert_eq!(a.active_isolation(), None);
    }
}

#[test]
fn conv_without_isolation_reads_across_blocks() {
    let mut a = quiet(32, 16);
    let grid = BlockGrid::square(a.geometry(), 16).unwrap();
    let filters = vec![ConvFilter::from_fn(4, |_, _| true); 2];
    let mut img = AnalogPlane::zeros(32, 16);
    img.set(16, 4, 1.0);
    run_conv(&mut a, &img, &filters, &grid);
    // PE (15, 4) sits in block 0 but sees the pixel of block 1.
    assert_eq!(a.analog(AReg::R3).get(15, 4), 1.0);
}

#[test]
fn conv_twice_doubles_trace() {
    let mut a = quiet(64, 64);
    let grid = BlockGrid::square(a.geometry(), 32).unwrap();
    run_conv(&mut a, &random_binary(64, 64, 0.5, 1), &random_filters(4, 4, 1), &grid);
    a.clear_trace();
    conv_layer(&mut a, &CONV, &grid, 4).unwrap();
    let once = a.trace().clone();
    conv_layer(&mut a, &CONV, &grid, 4).unwrap();
    assert_eq!(a.trace().instruction_count(), 2 * once.instruction_count());
    let doubled: Vec<_> = once.kind_counts().iter().map(|(k, c)| (*k, 2 * c)).collect();
    assert_eq!(a.trace().kind_counts(), doubled);
}

// ----- relu and pooling -----

#[test]
fn relu_examples() {
    let mut a = quiet(3, 1);
    a.load_analog(AReg::R0, &AnalogPlane::from_vec(3, 1, vec![-5.0, 3.0, 0.0]).unwrap())
        .unwrap();
    relu(&mut a, AReg::R0);
    assert_eq!(a.analog_slice(AReg::R0), &[0.0, 3.0, 0.0]);
}

fn pool_oracle(p: &AnalogPlane) -> AnalogPlane {
    AnalogPlane::from_fn(p.width(), p.height(), |x, y| {
        let (x0, y0) = (x - x % 4, y - y % 4);
        let mut m = f64::NEG_INFINITY;
        for yy in y0..y0 + 4 {
            for xx in x0..x0 + 4 {
                m = m.max(p.get(xx, yy));
            }
        }
        m
    })
}

#[test]
fn maxpool_constant_plane() {
    let mut a = quiet(16, 16);
    let grid = BlockGrid::square(a.geometry(), 8).unwrap();
    a.load_analog(AReg::R0, &AnalogPlane::constant(16, 16, 2.5)).unwrap();
    maxpool4(&mut a, AReg::R0, &POOL_REGS, &grid).unwrap();
    assert!(a.analog_slice(AReg::R0).iter().all(|&v| v == 2.5));
}

#[test]
fn maxpool_monotone_plane() {
    let mut a = quiet(16, 16);
    let grid = BlockGrid::square(a.geometry(), 16).unwrap();
    a.load_analog(AReg::R0, &AnalogPlane::from_fn(16, 16, |x, y| (x + y) as f64))
        .unwrap();
    maxpool4(&mut a, AReg::R0, &POOL_REGS, &grid).unwrap();
    let out = a.analog(AReg::R0);
    for y in 0..16 {
        for x in 0..16 {
            assert_eq!(out.get(x, y), (x - x % 4 + y - y % 4 + 6) as f64);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn maxpool_matches_brute_force(seed in any::<u64>()) {
        let mut a = quiet(24, 16);
        let grid = BlockGrid::new(a.geometry(), 8, 8).unwrap();
        let mut r = rng(seed);
        let p = AnalogPlane::from_fn(24, 16, |_, _| r.random_range(-20.0..20.0));
        a.load_analog(AReg::R0, &p).unwrap();
        maxpool4(&mut a, AReg::R0, &POOL_REGS, &grid).unwrap();
        prop_assert_eq!(a.analog(AReg::R0), pool_oracle(&p));
    }

    #[test]
    fn relu_is_idempotent(seed in any::<u64>()) {
        let mut a = quiet(16, 8);
        let mut r = rng(seed);
        let p = AnalogPlane::from_fn(16, 8, |_, _| r.random_range(-5.0..5.0));
        a.load_analog(AReg::R0, &p).unwrap();
        relu(&mut a, AReg::R0);
        let once = a.analog(AReg::R0);
        for (i, v) in once.as_slice().iter().enumerate() {
            prop_assert_eq!(*v, p.as_slice()[i].max(0.0));
        }
        relu(&mut a, AReg::R0);
        prop_assert_eq!(a.analog(AReg::R0), once);
    }

    #[test]
    fn stack_count_is_popcount(seed in any::<u64>(), density in 0.0f64..=1.0) {
        let mut a = quiet(70, 33);
        let p = random_bits(70, 33, density, seed);
        a.load_bits(DReg::D6, &p).unwrap();
        prop_assert_eq!(stack_count(&mut a, DReg::D6, &STACK).unwrap(), popcount(&p));
    }

    #[test]
    fn stack_count_is_additive_on_disjoint_planes(seed in any::<u64>()) {
        let mut a = quiet(40, 24);
        let p = random_bits(40, 24, 0.5, seed);
        let m = random_bits(40, 24, 0.5, seed ^ 1);
        let pa = BitPlane::from_fn(40, 24, |x, y| p.get(x, y) && m.get(x, y));
        let pb = BitPlane::from_fn(40, 24, |x, y| p.get(x, y) && !m.get(x, y));
        let mut count = |q: &BitPlane| {
            a.load_bits(DReg::D6, q).unwrap();
            stack_count(&mut a, DReg::D6, &STACK).unwrap()
        };
        let (ca, cb, cp) = (count(&pa), count(&pb), count(&p));
        prop_assert_eq!(ca + cb, cp);
    }
}

// ----- conversion and shrinking -----

#[test]
fn digitize_endpoints() {
    let mut a = quiet(2, 1);
    a.load_analog(AReg::R0, &AnalogPlane::from_vec(2, 1, vec![0.0, 16.0]).unwrap())
        .unwrap();
    let bits = [DReg::D0, DReg::D1, DReg::D2];
    digitize(&mut a, AReg::R0, &bits, 16.0).unwrap();
    for b in bits {
        assert!(!a.bits(b).get(0, 0));
        assert!(a.bits(b).get(1, 0));
    }
    recombine(&mut a, &bits, AReg::R1, 16.0).unwrap();
    assert_eq!(a.analog_slice(AReg::R1), &[0.0, 16.0]);
}

fn shrink_regs() -> ShrinkRegs {
    ShrinkRegs {
        bits: vec![DReg::D2, DReg::D3, DReg::D4],
        result: DReg::D5,
        tmp: DReg::D6,
        mask: DReg::D7,
    }
}

/// 64×64 array: 16 pooled maps in 16×16 blocks shrink to 4×4 maps on a
/// 16×16 grid.
fn shrink_case(tile_value: impl Fn(usize, usize, usize) -> f64) -> (PeArray, AnalogPlane) {
    let mut a = quiet(64, 64);
    let g_in = BlockGrid::square(a.geometry(), 16).unwrap();
    let g_out = BlockGrid::square(a.geometry(), 4).unwrap();
    let pooled = AnalogPlane::from_fn(64, 64, |x, y| {
        tile_value(g_in.block_of(x, y), (y % 16) / 4, (x % 16) / 4)
    });
    a.load_analog(AReg::R0, &pooled).unwrap();
    shrink_and_duplicate(&mut a, AReg::R0, AReg::R4, &shrink_regs(), &g_in, 4, &g_out, 16.0)
        .unwrap();
    (a, pooled)
}

#[test]
fn shrink_constant_map() {
    let (a, _) = shrink_case(|_, _, _| 16.0);
    assert!(a.analog_slice(AReg::R4).iter().all(|&v| v == 16.0));
}

#[test]
fn shrink_matches_tile_table() {
    let mut r = rng(9);
    let table: Vec<f64> = (0..16 * 16).map(|_| r.random_range(0..=16) as f64).collect();
    let (a, _) = shrink_case(|m, ty, tx| table[m * 16 + ty * 4 + tx]);
    let out = a.analog(AReg::R4);
    let q = 16.0 / 7.0;
    for y in 0..64 {
        for x in 0..64 {
            let (map, ty, tx) = (y / 4, y % 4, x % 4);
            let v = table[map * 16 + ty * 4 + tx];
            let want = ppa_core::quant::round_trip(v, 3, 16.0);
            assert_eq!(out.get(x, y), want, "{x},{y}");
            assert!((out.get(x, y) - v).abs() <= q / 2.0 + 1e-12);
        }
    }
}

#[test]
fn shrink_three_layer_geometry() {
    let mut a = quiet(256, 256);
    let g_in = BlockGrid::square(a.geometry(), 64).unwrap();
    let g_out = BlockGrid::square(a.geometry(), 16).unwrap();
    let pooled = AnalogPlane::from_fn(256, 256, |x, y| g_in.block_of(x, y) as f64 % 17.0);
    a.load_analog(AReg::R0, &pooled).unwrap();
    shrink_and_duplicate(&mut a, AReg::R0, AReg::R4, &shrink_regs(), &g_in, 4, &g_out, 16.0)
        .unwrap();
    assert_eq!(g_out.block_count(), 256);
    let out = a.analog(AReg::R4);
    for y in (0..256).step_by(7) {
        for x in (0..256).step_by(5) {
            let map = y / 16;
            assert_eq!(out.get(x, y), ppa_core::quant::round_trip(map as f64 % 17.0, 3, 16.0));
        }
    }
}

#[test]
fn accumulate_column_sums() {
    let mut a = quiet(64, 64);
    let grid = BlockGrid::square(a.geometry(), 16).unwrap();
    let mut r = rng(11);
    let p = AnalogPlane::from_fn(64, 64, |_, _| r.random_range(-4..=4) as f64);
    a.load_analog(AReg::R3, &p).unwrap();
    accumulate_feature_maps(&mut a, AReg::R3, AReg::R1, DReg::D5, &grid).unwrap();
    let out = a.analog(AReg::R3);
    for y in 0..64 {
        for x in 0..64 {
            let s: f64 = (0..4).map(|br| p.get(x, br * 16 + y % 16)).sum();
            assert_eq!(out.get(x, y), s.max(0.0));
        }
    }
}

#[test]
fn accumulate_single_block_and_constant() {
    let mut a = quiet(32, 64);
    let grid = BlockGrid::square(a.geometry(), 16).unwrap();
    let p = AnalogPlane::from_fn(32, 64, |x, y| if x < 16 && (32..48).contains(&y) { 3.0 } else { 0.0 });
    a.load_analog(AReg::R3, &p).unwrap();
    accumulate_feature_maps(&mut a, AReg::R3, AReg::R1, DReg::D5, &grid).unwrap();
    let out = a.analog(AReg::R3);
    assert!((0..64).all(|y| out.get(3, y) == 3.0 && out.get(20, y) == 0.0));

    let mut a = quiet(256, 256);
    let grid = BlockGrid::square(a.geometry(), 16).unwrap();
    a.load_analog(AReg::R3, &AnalogPlane::constant(256, 256, 0.5)).unwrap();
    accumulate_feature_maps(&mut a, AReg::R3, AReg::R1, DReg::D5, &grid).unwrap();
    assert!(a.analog_slice(AReg::R3).iter().all(|&v| v == 8.0));
}

#[test]
fn arrange_places_every_map_in_every_region() {
    let mut a = quiet(64, 64);
    let grid = BlockGrid::square(a.geometry(), 4).unwrap();
    // map c fills block column c, value c·100 + local index
    let src = AnalogPlane::from_fn(64, 64, |x, y| ((x / 4) * 100 + (y % 4) * 4 + x % 4) as f64);
    a.load_analog(AReg::R3, &src).unwrap();
    let side = arrange_for_fc(&mut a, AReg::R3, AReg::R4, AReg::R1, DReg::D5, &grid).unwrap();
    assert_eq!(side, 4);
    let out = a.analog(AReg::R4);
    for y in 0..64 {
        for x in 0..64 {
            let (lx, ly) = (x % 16, y % 16);
            let map = (ly / 4) * 4 + lx / 4;
            assert_eq!(out.get(x, y), (map * 100 + (ly % 4) * 4 + lx % 4) as f64);
        }
    }
}

// ----- fully connected -----

fn random_ternary(inputs: usize, seed: u64) -> TernaryFcWeights {
    let mut r = rng(seed);
    TernaryFcWeights::from_fn(inputs, |_, _| r.random_range(-1..=1)).unwrap()
}

#[test]
fn ternary_weights_validate() {
    assert!(TernaryFcWeights::new(1, vec![2; NEURONS]).is_none());
    assert!(TernaryFcWeights::new(2, vec![0; NEURONS]).is_none());
}

#[test]
fn embed_fc_zero_and_single_entries() {
    let grid = BlockGrid::square(ArrayGeometry::default(), 32).unwrap();
    let layout = embed_fc_weights(&TernaryFcWeights::zeros(4096), FcMode::PooledCheckerboard, &grid)
        .unwrap();
    assert!(layout.weights.as_slice().iter().all(|&v| v == 0.0));

    let mut w = vec![0i8; NEURONS * 4096];
    w[3 * 4096] = -1;
    let weights = TernaryFcWeights::new(4096, w).unwrap();
    let layout = embed_fc_weights(&weights, FcMode::PooledCheckerboard, &grid).unwrap();
    assert_eq!(layout.weights.get(3, 0), -1.0);
    assert_eq!(layout.weights.as_slice().iter().filter(|v| **v != 0.0).count(), 1);
    assert!(embed_fc_weights(&TernaryFcWeights::zeros(10), FcMode::PooledCheckerboard, &grid)
        .is_err());
}

#[test]
fn embed_fc_checkerboard_read_back() {
    let grid = BlockGrid::square(ArrayGeometry::default(), 32).unwrap();
    let weights = random_ternary(4096, 12);
    let layout = embed_fc_weights(&weights, FcMode::PooledCheckerboard, &grid).unwrap();
    for (n, mask) in layout.masks.iter().enumerate() {
        for y in 0..256 {
            for x in 0..256 {
                if mask.contains(x, y) {
                    let a = ((y / 32) * 8 + x / 32) * 64 + ((y % 32) / 4) * 8 + (x % 32) / 4;
                    assert_eq!(layout.weights.get(x, y), f64::from(weights.get(n, a)));
                }
            }
        }
    }
    // masks pairwise disjoint and covering every nonzero weight
    for y in 0..256 {
        for x in 0..256 {
            let owners = layout.masks.iter().filter(|m| m.contains(x, y)).count();
            assert!(owners <= 1);
            if layout.weights.get(x, y) != 0.0 {
                assert_eq!(owners, 1);
            }
        }
    }
}

#[test]
fn embed_fc_duplicated_maps_read_back() {
    let grid = BlockGrid::square(ArrayGeometry::default(), 16).unwrap();
    let weights = random_ternary(4096, 13);
    let layout = embed_fc_weights(&weights, FcMode::DuplicatedMaps, &grid).unwrap();
    for y in 0..256 {
        for x in 0..256 {
            let r = (y / 64) * 4 + x / 64;
            let want = if r < NEURONS {
                let (lx, ly) = (x % 64, y % 64);
                let g = lx / 16 + 4 * (ly / 16);
                f64::from(weights.get(r, g * 256 + (ly % 16) * 16 + lx % 16))
            } else {
                0.0
            };
            assert_eq!(layout.weights.get(x, y), want);
            assert_eq!(
                layout.masks.iter().position(|m| m.contains(x, y)),
                (r < NEURONS).then_some(r)
            );
        }
    }
}

#[test]
fn fc_multiply_examples() {
    let mut a = quiet(3, 1);
    a.load_analog(AReg::R4, &AnalogPlane::from_vec(3, 1, vec![2.0, 2.0, 5.0]).unwrap())
        .unwrap();
    a.load_analog(AReg::R6, &AnalogPlane::from_vec(3, 1, vec![-1.0, 0.0, 1.0]).unwrap())
        .unwrap();
    fc_multiply(&mut a, AReg::R4, AReg::R6, AReg::R5);
    assert_eq!(a.analog_slice(AReg::R5), &[-2.0, 0.0, 5.0]);
}

fn masked_sums(product: &AnalogPlane, layout: &FcLayout) -> [f64; NEURONS] {
    let mut out = [0.0; NEURONS];
    for (n, m) in layout.masks.iter().enumerate() {
        for y in 0..product.height() {
            for x in 0..product.width() {
                if m.contains(x, y) {
                    out[n] += product.get(x, y);
                }
            }
        }
    }
    out
}

#[test]
fn analog_sums_match_masked_sums() {
    let mut a = quiet(64, 64);
    let grid = BlockGrid::square(a.geometry(), 32).unwrap();
    let weights = random_ternary(4 * 64, 14);
    let layout = embed_fc_weights(&weights, FcMode::PooledCheckerboard, &grid).unwrap();
    let mut r = rng(15);
    let act = AnalogPlane::from_fn(64, 64, |_, _| r.random_range(0..=16) as f64);
    a.load_analog(AReg::R4, &act).unwrap();
    a.load_analog(AReg::R6, &layout.weights).unwrap();
    fc_multiply(&mut a, AReg::R4, AReg::R6, AReg::R5);
    let sums = analog_neuron_sums(&mut a, AReg::R5, &layout, DReg::D5, 4);
    let want = masked_sums(&a.analog(AReg::R5), &layout);
    assert_eq!(sums, want);

    a.load_analog(AReg::R5, &AnalogPlane::zeros(64, 64)).unwrap();
    assert_eq!(analog_neuron_sums(&mut a, AReg::R5, &layout, DReg::D5, 1), [0.0; NEURONS]);
}

fn digital_regs() -> DigitalRegs {
    DigitalRegs {
        magnitude: AReg::R1,
        bits: vec![DReg::D2, DReg::D3, DReg::D4, DReg::D5],
        positive: DReg::D6,
        negative: DReg::D7,
        group: DReg::D8,
        work: DReg::D9,
        stack: STACK,
    }
}

#[test]
fn digital_sums_single_contribution() {
    let mut a = quiet(64, 64);
    let grid = BlockGrid::square(a.geometry(), 4).unwrap();
    let mut w = vec![0i8; NEURONS * 256];
    w[2 * 256 + 17] = 1;
    let weights = TernaryFcWeights::new(256, w).unwrap();
    let layout = embed_fc_weights(&weights, FcMode::DuplicatedMaps, &grid).unwrap();
    let q = 16.0 / 15.0;
    a.load_analog(AReg::R4, &AnalogPlane::constant(64, 64, 5.0 * q)).unwrap();
    a.load_analog(AReg::R6, &layout.weights).unwrap();
    fc_multiply(&mut a, AReg::R4, AReg::R6, AReg::R5);
    let sums = digital_neuron_sums(&mut a, AReg::R5, AReg::R6, &layout, &digital_regs(), 16.0).unwrap();
    let mut want = [0.0; NEURONS];
    want[2] = 5.0 * q;
    assert_eq!(sums, want);
}

#[test]
fn digital_sums_match_quantized_masked_sums() {
    for (seed, mode, block) in [
        (16, FcMode::DuplicatedMaps, 4),
        (17, FcMode::PooledCheckerboard, 16),
    ] {
        let mut a = quiet(64, 64);
        let grid = BlockGrid::square(a.geometry(), block).unwrap();
        let inputs = match mode {
            FcMode::DuplicatedMaps => 256,
            FcMode::PooledCheckerboard => 16 * 16,
        };
        let weights = random_ternary(inputs, seed);
        let layout = embed_fc_weights(&weights, mode, &grid).unwrap();
        let mut r = rng(seed + 1);
        let act = AnalogPlane::from_fn(64, 64, |_, _| r.random_range(0.0..20.0));
        a.load_analog(AReg::R4, &act).unwrap();
        a.load_analog(AReg::R6, &layout.weights).unwrap();
        fc_multiply(&mut a, AReg::R4, AReg::R6, AReg::R5);
        let sums =
            digital_neuron_sums(&mut a, AReg::R5, AReg::R6, &layout, &digital_regs(), 16.0).unwrap();
        let quantized = AnalogPlane::from_fn(64, 64, |x, y| {
            layout.weights.get(x, y) * ppa_core::quant::round_trip(act.get(x, y), 4, 16.0)
        });
        let want = masked_sums(&quantized, &layout);
        for n in 0..NEURONS {
            assert!((sums[n] - want[n]).abs() < 1e-9, "{mode:?} neuron {n}: {} vs {}", sums[n], want[n]);
        }
    }
}

// ----- stack count -----

#[test]
fn stack_count_boundaries() {
    let mut a = quiet(256, 256);
    a.load_bits(DReg::D6, &BitPlane::zeros(256, 256)).unwrap();
    assert_eq!(stack_count(&mut a, DReg::D6, &STACK).unwrap(), 0);
    a.load_bits(DReg::D6, &BitPlane::ones(256, 256)).unwrap();
    a.clear_trace();
    assert_eq!(stack_count(&mut a, DReg::D6, &STACK).unwrap(), 65536);
    let bit_shifts: u64 = a
        .trace()
        .kind_counts()
        .iter()
        .filter(|(k, _)| *k == OpKind::BitShift)
        .map(|(_, c)| c)
        .sum();
    // two single-row shifts per fall iteration plus one for the top detection
    assert_eq!(bit_shifts, 2 * STACK_ITERATIONS_FULL as u64 + 1);
}

#[test]
fn stack_count_worst_case_column() {
    // a full column with a single hole at the bottom needs every iteration
    let mut a = quiet(4, 256);
    let p = BitPlane::from_fn(4, 256, |x, y| x == 1 && y < 255);
    a.load_bits(DReg::D6, &p).unwrap();
    assert_eq!(stack_count(&mut a, DReg::D6, &STACK).unwrap(), 255);
}
