//! `f = 1`, `h = -1`, `g = a - shift - k b`.
//!
//! With `k = 0` the fast orbits are the parabolas `b + (a - shift)^2 / 2 = const`
//! and chi vanishes identically when `shift = 0`.

use crate::model::{Bound, Domain, FnModel, StructureFlags};

pub fn toy(shift: f64, k: f64, half_width: f64) -> FnModel {
    FnModel::new(
        format!("toy(shift={shift},k={k})"),
        |_, _, _| 1.0,
        move |a, b, _| a - shift - k * b,
        |_, _, _| -1.0,
        Domain::new(Bound::Finite(shift - half_width), Bound::Finite(shift + half_width), shift),
    )
    .with_df_da(|_, _, _| 0.0)
    .with_dh_da(|_, _, _| 0.0)
    .with_dg_db(move |_, _, _| -k)
    .with_flags(StructureFlags { h_independent_of_a: true, ..Default::default() })
}

/// f=1, h=-1, g=a on (-2, 2).
pub fn symmetric_toy() -> FnModel {
    toy(0.0, 0.0, 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_model, validate_flags, SampleGrid};

    #[test]
    fn toy_validates_with_flags() {
        let m = symmetric_toy();
        let r = validate_model(&m, &SampleGrid::new(-1.9, 1.9, 2.0)).unwrap();
        assert!(r.passed());
        assert!(validate_flags(&m, &SampleGrid::new(-1.9, 1.9, 2.0)).iter().all(|c| c.passed));
    }
}
