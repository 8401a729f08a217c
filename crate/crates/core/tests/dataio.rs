mod common;

use std::collections::HashSet;

use common::rng;
use mdet_core::dataio::dataset::random_parent;
use mdet_core::dataio::potentials::{LjParams, PairTable};
use mdet_core::dataio::{
    generate_synthetic, parse_extended_xyz, split, write_extended_xyz, Dataset, SyntheticPotential,
    SyntheticSpec,
};
use mdet_core::system::MolecularSystem;
use mdet_core::Error;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn single_hydrogen() {
    let s = parse_extended_xyz("1\n\nH 0.0 0.0 0.0\n").unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s[0].atomic_numbers, vec![1]);
    assert_eq!((s[0].charge, s[0].spin), (0, 0));
}

#[test]
fn labels_and_comment_keys() {
    let text = "2\nProperties=species:S:1:pos:R:3:forces:R:3 charge=-1 spin=2 energy=-3.5\n\
                C 0 0 0 0.1 0.2 0.3\nO 1.2 0 0 -0.1 -0.2 -0.3\n";
    let s = &parse_extended_xyz(text).unwrap()[0];
    assert_eq!(s.atomic_numbers, vec![6, 8]);
    assert_eq!((s.charge, s.spin, s.energy), (-1, 2, Some(-3.5)));
    assert_eq!(s.forces.as_ref().unwrap()[1], [-0.1, -0.2, -0.3]);
}

fn parse_line(text: &str) -> usize {
    match parse_extended_xyz(text) {
        Err(Error::Parse { line, .. }) => line,
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn errors_carry_line_numbers() {
    assert_eq!(parse_line("3\n\nH 0 0 0\nH 0 0 1\n"), 5);
    let err = parse_extended_xyz("3\n\nH 0 0 0\nH 0 0 1\n")
        .unwrap_err()
        .to_string();
    assert!(err.contains("count mismatch"), "{err}");
    assert_eq!(parse_line("2\n\nH 0 0 0\nXx 0 0 1\n"), 4);
    assert_eq!(parse_line("1\n\nH 0 zero 0\n"), 3);
    assert_eq!(parse_line("two\n\nH 0 0 0\n"), 1);
}

#[test]
fn write_parse_round_trip() {
    let spec = SyntheticSpec {
        n_structures: 5,
        conformers_per_structure: 2,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&SyntheticPotential::morse_default(), &spec, &mut rng(1)).unwrap();
    let back = parse_extended_xyz(&write_extended_xyz(&ds.systems)).unwrap();
    assert_eq!(back.len(), ds.systems.len());
    for (a, b) in back.iter().zip(&ds.systems) {
        assert_eq!(a.atomic_numbers, b.atomic_numbers);
        for (p, q) in a.positions.iter().zip(&b.positions) {
            for c in 0..3 {
                assert!((p[c] - q[c]).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn zero_spread_repeats_the_parent() {
    let spec = SyntheticSpec {
        n_structures: 3,
        conformers_per_structure: 4,
        spread: 0.0,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&SyntheticPotential::morse_default(), &spec, &mut rng(2)).unwrap();
    for chunk in ds.systems.chunks(4) {
        assert!(chunk.iter().all(|s| s == &chunk[0]));
    }
}

fn fd_forces(pot: &SyntheticPotential, sys: &MolecularSystem, h: f64) -> Vec<[f64; 3]> {
    let mut p = sys.positions.clone();
    let mut out = vec![[0.0; 3]; p.len()];
    for a in 0..p.len() {
        for c in 0..3 {
            let x0 = p[a][c];
            p[a][c] = x0 + h;
            let up = pot.energy(&sys.atomic_numbers, &p);
            p[a][c] = x0 - h;
            let dn = pot.energy(&sys.atomic_numbers, &p);
            p[a][c] = x0;
            out[a][c] = -(up - dn) / (2.0 * h);
        }
    }
    out
}

fn check_labels(pot: &SyntheticPotential, systems: &[MolecularSystem]) {
    for s in systems {
        let f = s.forces.as_ref().unwrap();
        for c in 0..3 {
            assert!(f.iter().map(|v| v[c]).sum::<f64>().abs() <= 1e-10);
        }
        let fd = fd_forces(pot, s, 1e-5);
        for (a, b) in f.iter().zip(&fd) {
            for c in 0..3 {
                assert!(
                    (a[c] - b[c]).abs() <= 1e-8 * a[c].abs().max(1.0),
                    "{} vs {}",
                    a[c],
                    b[c]
                );
            }
        }
    }
}

#[test]
fn pair_labels_are_conservative_and_balanced() {
    let spec = SyntheticSpec {
        n_structures: 10,
        conformers_per_structure: 2,
        ..SyntheticSpec::default()
    };
    let lj = SyntheticPotential::LennardJones(PairTable::uniform(LjParams {
        epsilon: 0.01,
        sigma: 1.3,
    }));
    for pot in [SyntheticPotential::morse_default(), lj] {
        let ds = generate_synthetic(&pot, &spec, &mut rng(3)).unwrap();
        check_labels(&pot, &ds.systems);
    }
}

#[test]
fn network_labels_are_conservative_and_balanced() {
    let mut r = rng(3);
    let parent = random_parent(6, &[6], 1.5, &mut r);
    let pot = SyntheticPotential::harmonic_network(&parent.positions, 4.0, 3.0);
    let systems: Vec<MolecularSystem> = (0..10)
        .map(|_| {
            let mut s = parent.clone();
            s.positions
                .iter_mut()
                .flatten()
                .for_each(|x| *x += r.random_range(-0.05..0.05));
            pot.label(&s)
        })
        .collect();
    check_labels(&pot, &systems);
}

#[test]
fn group_split() {
    let spec = SyntheticSpec::default();
    assert_eq!(spec.n_structures, 100);
    let ds = generate_synthetic(&SyntheticPotential::morse_default(), &spec, &mut rng(4)).unwrap();
    let (a, b, c) = split(&ds, [0.9, 0.05, 0.05], 7).unwrap();
    let groups = |d: &Dataset| d.groups.iter().copied().collect::<HashSet<_>>();
    let (ga, gb, gc) = (groups(&a), groups(&b), groups(&c));
    assert_eq!((ga.len(), gb.len(), gc.len()), (90, 5, 5));
    assert!(ga.is_disjoint(&gb) && ga.is_disjoint(&gc) && gb.is_disjoint(&gc));
    assert_eq!(a.len() + b.len() + c.len(), ds.len());
    let again = split(&ds, [0.9, 0.05, 0.05], 7).unwrap();
    assert_eq!(again.1.groups, b.groups);

    let tiny = SyntheticSpec {
        n_structures: 2,
        ..SyntheticSpec::default()
    };
    let small =
        generate_synthetic(&SyntheticPotential::morse_default(), &tiny, &mut rng(5)).unwrap();
    assert!(split(&small, [0.8, 0.1, 0.1], 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn positions_round_trip(pos in prop::collection::vec(prop::array::uniform3(-50.0f64..50.0), 1..8)) {
        let n = pos.len();
        let sys = MolecularSystem::new(vec![6; n], pos).unwrap();
        let back = parse_extended_xyz(&write_extended_xyz(std::slice::from_ref(&sys))).unwrap();
        for (p, q) in back[0].positions.iter().zip(&sys.positions) {
            for c in 0..3 {
                prop_assert!((p[c] - q[c]).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn synthetic_jacobian_is_symmetric() {
    use mdet_core::diagnostics::{antisymmetric_ratio, position_jacobian, JacobianMode};
    let ds = generate_synthetic(
        &SyntheticPotential::morse_default(),
        &SyntheticSpec::default(),
        &mut rng(6),
    )
    .unwrap();
    let pot = SyntheticPotential::morse_default();
    for s in ds.systems.iter().step_by(40) {
        let j = position_jacobian(&pot, s, JacobianMode::Autodiff).unwrap();
        assert!(antisymmetric_ratio(&j, 3 * s.n_atoms()).unwrap() <= 1e-8);
    }
}

#[test]
fn trajectory_frames_keep_velocities_and_times() {
    use mdet_core::dataio::parse_frames;
    use mdet_core::md::{run_md, MdConfig};
    let sys = random_parent(4, &[6, 8], 1.5, &mut rng(7));
    let cfg = MdConfig {
        steps: 20,
        stride: 5,
        ..MdConfig::default()
    };
    let traj = run_md(&sys, None, &SyntheticPotential::morse_default(), &cfg).unwrap();
    let frames = parse_frames(&traj.to_xyz()).unwrap();
    assert_eq!(frames.len(), traj.frames.len());
    for (f, g) in frames.iter().zip(&traj.frames) {
        assert_eq!(f.time, Some(g.time));
        let v = f.velocities.as_ref().unwrap();
        for (a, b) in v.iter().zip(&g.velocities) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 1e-10 * b[c].abs().max(1e-3));
            }
        }
    }
    assert!(parse_frames("1\n\nH 0 0 0\n").unwrap()[0]
        .velocities
        .is_none());
}
