//! Rotation/reflection augmentation.

use rand::Rng;

use crate::geometry::Orthogonal;
use crate::system::MolecularSystem;

/// `Q x` for every position and `Q f` for the reference forces.
pub fn transform_system(sys: &MolecularSystem, q: &Orthogonal) -> MolecularSystem {
    let mut out = sys.clone();
    out.positions = sys.positions.iter().map(|&p| q.apply(p)).collect();
    out.forces = sys
        .forces
        .as_ref()
        .map(|f| f.iter().map(|&v| q.apply(v)).collect());
    out
}

/// Two copies of every input system, each under its own uniformly drawn
/// `Q ∈ O(3)`. Copies of input `k` sit at `2k` and `2k + 1`.
pub fn augment<R: Rng + ?Sized>(
    batch: &[MolecularSystem],
    rng: &mut R,
) -> Vec<(MolecularSystem, Orthogonal)> {
    let mut out = Vec::with_capacity(2 * batch.len());
    for sys in batch {
        for _ in 0..2 {
            let q = Orthogonal::uniform(rng);
            out.push((transform_system(sys, &q), q));
        }
    }
    out
}
