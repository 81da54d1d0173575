//! Named allocations, trust-weight and cost parsing.

use std::path::Path;

use wpir::optimizer::{maxl_optimal, mi_optimal_allocation, mi_reduced_oracle};
use wpir::{
    expand_reduced, uniform_coded, uniform_tsc, Allocation, Error, RandomKey, Result, SystemParams,
};

/// `"7/6"`, `"1.25"` or `"2"`.
pub fn parse_number(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    let value = match s.split_once('/') {
        Some((a, b)) => {
            let num: f64 = a
                .trim()
                .parse()
                .map_err(|_| format!("bad numerator in {s:?}"))?;
            let den: f64 = b
                .trim()
                .parse()
                .map_err(|_| format!("bad denominator in {s:?}"))?;
            if den == 0.0 {
                return Err(format!("zero denominator in {s:?}"));
            }
            num / den
        }
        None => s.parse().map_err(|_| format!("not a number: {s:?}"))?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("not finite: {s:?}"))
    }
}

/// Semicolon-separated positive weights, sorted ascending. The flag is set
/// when sorting changed the order.
pub fn parse_gamma(s: &str) -> std::result::Result<(Vec<f64>, bool), String> {
    let gamma: Vec<f64> = s
        .split(';')
        .filter(|t| !t.trim().is_empty())
        .map(parse_number)
        .collect::<std::result::Result<_, _>>()?;
    if gamma.is_empty() {
        return Err("empty gamma".into());
    }
    if let Some(g) = gamma.iter().find(|g| **g <= 0.0) {
        return Err(format!("trust weight {g} is not positive"));
    }
    let mut sorted = gamma.clone();
    sorted.sort_by(f64::total_cmp);
    let reordered = sorted != gamma;
    Ok((sorted, reordered))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Preset {
    UniformTsc,
    Direct,
    MaxlOpt(f64),
    MiOpt(f64),
}

fn preset_argument(arg: &str, name: &str) -> Option<std::result::Result<f64, String>> {
    let rest = arg.strip_prefix(name)?;
    let inner = rest
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .or_else(|| rest.strip_prefix(':'))?;
    Some(parse_number(inner))
}

impl Preset {
    pub fn parse(arg: &str) -> Option<std::result::Result<Self, String>> {
        match arg {
            "uniform-tsc" => return Some(Ok(Preset::UniformTsc)),
            "direct" => return Some(Ok(Preset::Direct)),
            _ => {}
        }
        if let Some(d) = preset_argument(arg, "maxl-opt") {
            return Some(d.map(Preset::MaxlOpt));
        }
        preset_argument(arg, "mi-opt").map(|d| d.map(Preset::MiOpt))
    }

    pub fn build(&self, params: &SystemParams) -> Result<Allocation> {
        match *self {
            Preset::UniformTsc => match uniform_coded(params) {
                Ok(a) => Ok(a),
                Err(Error::TooLarge { .. }) => expand_reduced(&uniform_tsc(params), params),
                Err(e) => Err(e),
            },
            Preset::Direct => Allocation::point_mass(params.clone(), RandomKey::direct(1)),
            Preset::MaxlOpt(d) => Ok(maxl_optimal(params, d)?.0),
            Preset::MiOpt(d) if params.n() >= 3 => mi_optimal_allocation(params, d),
            Preset::MiOpt(d) => expand_reduced(&mi_reduced_oracle(params, d)?.0, params),
        }
    }
}

/// A preset name or the path of a JSON allocation.
pub fn load_allocation(arg: &str, params: &SystemParams) -> Result<Allocation> {
    if let Some(preset) = Preset::parse(arg) {
        return preset.map_err(Error::InvalidParams)?.build(params);
    }
    let text = std::fs::read_to_string(Path::new(arg))
        .map_err(|e| std::io::Error::new(e.kind(), format!("cannot read allocation {arg}: {e}")))?;
    let a = Allocation::from_json(&serde_json::from_str(&text)?)?;
    if a.params().n() != params.n() || a.params().k() != params.k() {
        return Err(Error::InvalidParams(format!(
            "allocation file is for N = {}, K = {}, expected N = {}, K = {}",
            a.params().n(),
            a.params().k(),
            params.n(),
            params.k()
        )));
    }
    a.with_params(params.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_and_fractions() {
        assert_eq!(parse_number("7/6").unwrap(), 7.0 / 6.0);
        assert_eq!(parse_number(" 1.5 ").unwrap(), 1.5);
        assert!(parse_number("1/0").is_err());
        assert!(parse_number("x").is_err());
    }

    #[test]
    fn gamma_is_sorted_with_flag() {
        assert_eq!(
            parse_gamma("0.1;0.3;0.6").unwrap(),
            (vec![0.1, 0.3, 0.6], false)
        );
        assert_eq!(
            parse_gamma("0.6;0.1;0.3").unwrap(),
            (vec![0.1, 0.3, 0.6], true)
        );
        assert!(parse_gamma("1;-1").is_err());
        assert!(parse_gamma("").is_err());
    }

    #[test]
    fn preset_names() {
        assert_eq!(
            Preset::parse("maxl-opt(7/6)"),
            Some(Ok(Preset::MaxlOpt(7.0 / 6.0)))
        );
        assert_eq!(
            Preset::parse("maxl-opt:1.1"),
            Some(Ok(Preset::MaxlOpt(1.1)))
        );
        assert_eq!(Preset::parse("mi-opt(1)"), Some(Ok(Preset::MiOpt(1.0))));
        assert_eq!(Preset::parse("direct"), Some(Ok(Preset::Direct)));
        assert!(Preset::parse("maxl-opt(x)").unwrap().is_err());
        assert_eq!(Preset::parse("alloc.json"), None);
    }

    #[test]
    fn presets_build_valid_allocations() {
        let p = SystemParams::homogeneous(3, 2).unwrap();
        for arg in ["uniform-tsc", "direct", "maxl-opt(7/6)", "mi-opt(1.2)"] {
            load_allocation(arg, &p).unwrap().validate().unwrap();
        }
        let p2 = SystemParams::homogeneous(2, 2).unwrap();
        load_allocation("mi-opt(1.2)", &p2)
            .unwrap()
            .validate()
            .unwrap();
    }
}
