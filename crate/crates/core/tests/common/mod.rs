#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nrfmpc::design::{ConstraintSpec, StageCost};
use nrfmpc::linsys::{AreaPartition, StateSpace};
use nrfmpc::nrf::{build_nrf_layer, NrfBlock, NrfLayer};
use nrfmpc::sets::BoxSet;

pub struct Fixture {
    pub plant: StateSpace,
    pub layer: NrfLayer,
    pub spec: ConstraintSpec,
    pub costs: Vec<StageCost>,
}

/// `x⁺ = 0.5x + u + d` with a memoryless first layer `u_f = w`, `w⁺ = 0`.
pub fn scalar(u_s2: f64, d: f64) -> Fixture {
    let plant = StateSpace::network(DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
    let p = AreaPartition::new(1, 1, &[(1, 1)]).unwrap();
    let layer = build_nrf_layer(&p, vec![NrfBlock::new(vec![0.0], DMatrix::zeros(1, 2)).unwrap()]).unwrap();
    let spec = ConstraintSpec {
        x: vec![BoxSet::symmetric(&[1.0])],
        u: vec![BoxSet::symmetric(&[1.0])],
        coupled: vec![],
        v: BoxSet::symmetric(&[0.0, 0.0]),
        d: BoxSet::symmetric(&[d]),
        beta_f: BoxSet::symmetric(&[0.0]),
        beta_s1: BoxSet::symmetric(&[0.0]),
        beta_s2: BoxSet::symmetric(&[0.0]),
        u_s1: vec![BoxSet::symmetric(&[0.2])],
        u_s2: vec![BoxSet::symmetric(&[u_s2])],
    };
    let costs = vec![StageCost { q_out: DMatrix::zeros(2, 2), r1: DMatrix::identity(1, 1), r2: DMatrix::identity(1, 1) }];
    Fixture { plant, layer, spec, costs }
}

/// Two scalar areas, area 1 listening to area 0, second- and third-order
/// controller blocks.
pub fn two_area(noise: f64) -> Fixture {
    let plant = StateSpace::network(
        DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.1, 0.4]),
        DMatrix::identity(2, 2),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
    )
    .unwrap();
    let p = AreaPartition::with_neighbors(2, 2, &[(1, 1), (1, 1)], vec![vec![0], vec![0, 1]]).unwrap();
    let blocks = vec![
        NrfBlock::new(vec![-0.2, 0.05], DMatrix::from_row_slice(2, 4, &[0.0, 0.0, -0.1, 0.0, 0.0, 0.0, 0.05, 0.0])).unwrap(),
        NrfBlock::new(vec![-0.1, 0.02, -0.01], DMatrix::from_row_slice(3, 4, &[0.05, 0.0, 0.02, -0.1, 0.01, 0.0, 0.0, 0.03, 0.0, 0.0, 0.01, 0.0])).unwrap(),
    ];
    let layer = build_nrf_layer(&p, blocks).unwrap();
    let spec = ConstraintSpec {
        x: vec![BoxSet::symmetric(&[1.0]), BoxSet::symmetric(&[1.0])],
        u: vec![BoxSet::symmetric(&[1.0]), BoxSet::symmetric(&[1.0])],
        coupled: vec![],
        v: BoxSet::symmetric(&[noise; 7]),
        d: BoxSet::symmetric(&[0.01]),
        beta_f: BoxSet::symmetric(&[noise; 2]),
        beta_s1: BoxSet::symmetric(&[noise; 2]),
        beta_s2: BoxSet::symmetric(&[noise; 2]),
        u_s1: vec![BoxSet::symmetric(&[0.3]), BoxSet::symmetric(&[0.3])],
        u_s2: vec![BoxSet::symmetric(&[0.5]), BoxSet::symmetric(&[0.5])],
    };
    let costs = vec![StageCost::identity(1, 1); 2];
    Fixture { plant, layer, spec, costs }
}

/// Three scalar areas on a line; area 0 hears only itself while the plant
/// couples it to area 1.
pub fn three_area() -> Fixture {
    let plant = StateSpace::network(
        DMatrix::from_row_slice(3, 3, &[0.5, 0.1, 0.0, 0.1, 0.4, 0.1, 0.0, 0.2, 0.3]),
        DMatrix::identity(3, 3),
        DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]),
    )
    .unwrap();
    let p = AreaPartition::with_neighbors(3, 3, &[(1, 1); 3], vec![vec![0], vec![0, 1], vec![1, 2]]).unwrap();
    let g = |vals: &[(usize, f64)]| {
        let mut m = DMatrix::zeros(1, 6);
        for &(c, v) in vals {
            m[(0, c)] = v;
        }
        m
    };
    let blocks = vec![
        NrfBlock::new(vec![-0.3], g(&[(3, -0.2)])).unwrap(),
        NrfBlock::new(vec![-0.2], g(&[(0, 0.1), (4, -0.1)])).unwrap(),
        NrfBlock::new(vec![0.1], g(&[(1, 0.2), (5, -0.1), (4, 0.05)])).unwrap(),
    ];
    let layer = build_nrf_layer(&p, blocks).unwrap();
    let spec = ConstraintSpec {
        x: vec![BoxSet::symmetric(&[1.0]); 3],
        u: vec![BoxSet::symmetric(&[1.0]); 3],
        coupled: vec![],
        v: BoxSet::symmetric(&[0.01; 6]),
        d: BoxSet::symmetric(&[0.02]),
        beta_f: BoxSet::symmetric(&[0.01; 3]),
        beta_s1: BoxSet::symmetric(&[0.01; 3]),
        beta_s2: BoxSet::symmetric(&[0.01; 3]),
        u_s1: vec![BoxSet::symmetric(&[0.2]); 3],
        u_s2: vec![BoxSet::symmetric(&[0.4]); 3],
    };
    let costs = vec![StageCost::identity(1, 1); 3];
    Fixture { plant, layer, spec, costs }
}

pub fn uniform(rng: &mut impl rand::Rng, set: &BoxSet) -> DVector<f64> {
    DVector::from_fn(set.dim(), |k, _| set.center[k] + set.half[k] * rng.gen_range(-1.0..=1.0))
}
