//! Rank-one determinant factor and Sherman-Morrison update in a mass-weighted space.

use std::sync::Arc;

use eigsense::wspace::{rank1_det_factor, rank1_inverse_update};
use eigsense::{Operator, WeightedSpace};
use nalgebra::{dmatrix, dvector};

fn main() -> eigsense::Result<()> {
    let space = Arc::new(WeightedSpace::new(dmatrix![2.0, 0.5; 0.5, 1.0])?);
    let a = Operator::new(&space, dmatrix![3.0, 1.0; 0.0, 2.0])?;
    let (u, v) = (dvector![1.0, -1.0], dvector![0.5, 2.0]);

    let updated = a.add(&space.tensor(&u, &v)?);
    let factor = rank1_det_factor(&a, &u, &v)?;
    println!(
        "det(A + u (x) v) / det(A) = {:.12}",
        updated.rep().determinant() / a.rep().determinant()
    );
    println!("1 + <A^-1 u, v>_M         = {factor:.12}");

    let smw = rank1_inverse_update(&a.inverse()?, &u, &v)?;
    let direct = updated.inverse()?;
    println!("max |SMW - dense inverse| = {:.2e}", (smw.rep() - direct.rep()).amax());
    Ok(())
}
