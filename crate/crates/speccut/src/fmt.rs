/// 17 significant digits, enough to reproduce any f64 exactly on re-parse.
pub fn fmt_g17(v: f64) -> String {
    format!("{:.16e}", v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_awkward_values() {
        for v in [0.1, 1.0 / 3.0, 2.5e-300, 9.87654321e17, -0.0] {
            let back: f64 = fmt_g17(v).parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}
