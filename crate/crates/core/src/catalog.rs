//! Built-in worked examples on geometric Brownian motion with μ = 0.1,
//! σ = 0.2, r = 0.24, where ψ(x) = x² and φ(x) = x⁻⁶.

use crate::error::{Error, Result};
use crate::optimize::find_root;
use crate::problem::{
    build, to_toml, DiffusionSection, McSection, Mode, ModeSection, NumOrExpr, PayoffSection, PieceEntry, Problem,
    ProblemFile,
};

pub const MU: f64 = 0.1;
pub const SIGMA: f64 = 0.2;
pub const R: f64 = 0.24;
pub const IDS: std::ops::RangeInclusive<u32> = 1..=11;

/// Line a·x − b through (10, 7) tangent to x²/12: 3a² − 10a + 7 = 0, root ≠ 1.
pub fn example1_line() -> (f64, f64) {
    let a = find_root(|a| 3.0 * a * a - 10.0 * a + 7.0, 1.5, 5.0, 1e-15).expect("bracketed");
    (a, 10.0 * a - 7.0)
}

/// b₃ from continuity at 12 of the upper piece with the line x − 3.
pub fn example3_b() -> f64 {
    ((1.0 / 12.0) * 12f64.powf(2.0 - 1.0 / 1728.0) - 9.0) * 12f64.powi(5)
}

fn gbm() -> DiffusionSection {
    DiffusionSection {
        family: Some("gbm".into()),
        mu: Some(MU),
        sigma: Some(SIGMA),
        discount: Some(NumOrExpr::Num(R)),
        ..Default::default()
    }
}

fn pieces(list: &[(&str, String)]) -> PayoffSection {
    PayoffSection {
        pieces: list
            .iter()
            .map(|(i, e)| PieceEntry {
                interval: i.to_string(),
                expr: e.clone(),
            })
            .collect(),
        lower_value: None,
        upper_value: None,
    }
}

pub struct Example {
    pub id: u32,
    pub title: &'static str,
    pub file: ProblemFile,
}

impl Example {
    pub fn problem(&self) -> Result<Problem> {
        build(self.file.clone(), None)
    }

    pub fn toml(&self) -> String {
        to_toml(&self.file)
    }
}

pub fn example(id: u32) -> Result<Example> {
    let mut d = gbm();
    let mut mode = Mode::Stopping;
    let (title, payoff) = match id {
        1 => {
            let (a, b) = example1_line();
            (
                "two isolated maximizers",
                pieces(&[("(0, 10]", "x - 3".into()), ("(10, inf)", format!("{a:?}*x - {b:?}"))]),
            )
        }
        2 => (
            "plateau and a point",
            pieces(&[
                ("(0, 6]", "x - 3".into()),
                ("(6, 10]", "x^2/12".into()),
                ("(10, 14]", "5/3*x - 25/3".into()),
                ("(14, inf)", "3*x - 27".into()),
            ]),
        ),
        3 => {
            let b = example3_b();
            (
                "supremum approached at infinity",
                pieces(&[
                    ("(0, 12)", "x - 3".into()),
                    ("[12, inf)", format!("(1/12)*x^(2 - 1/x^3) - {b:?}*x^(-5)")),
                ]),
            )
        }
        4 => {
            d.domain = Some([0.01, 100.0]);
            d.points = Some(8192);
            ("oscillating payoff", pieces(&[("(0, inf)", "x^2*sin(x)".into())]))
        }
        5 => ("minimum of the fundamental solutions", pieces(&[("(0, inf)", "min(x^2, x^(-6))".into())])),
        6 => {
            d.state = Some("[1, inf)".into());
            d.lower = Some("reflecting".into());
            let mut p = pieces(&[("(1, 5)", "0".into()), ("[5, inf)", "1".into())]);
            p.lower_value = Some(1.0);
            ("reflecting boundary used as a stopping point", p)
        }
        7 => (
            "maximizers at both boundaries",
            pieces(&[("(0, 1)", "x^(x - 6)".into()), ("[1, inf)", "x^(-1)".into())]),
        ),
        8 => {
            d.domain = Some([0.5, 64.0]);
            ("step payoff without smooth fit", pieces(&[("(0, inf)", "floor(x)^2".into())]))
        }
        9 => {
            mode = Mode::ControlDown;
            (
                "control with a plateau of maximizers",
                pieces(&[
                    ("(0, 16]", "16*(sqrt(x) - 2)".into()),
                    ("(16, 25)", "2*x".into()),
                    ("[25, inf)", "20*(sqrt(x) - 2.5)".into()),
                ]),
            )
        }
        10 => {
            mode = Mode::ControlDown;
            (
                "control whose monotone regions are not all inaction",
                pieces(&[("(0, 6.25)", "sqrt(x) - 1".into()), ("[6.25, inf)", "1.4*sqrt(x) - 2".into())]),
            )
        }
        11 => {
            mode = Mode::Connection;
            (
                "local connection between control and stopping",
                pieces(&[("(0, 1]", "x^2".into()), ("(1, inf)", "x^(-8)".into())]),
            )
        }
        _ => return Err(Error::Validation(format!("no built-in example {id}; choose 1 to 11"))),
    };
    Ok(Example {
        id,
        title,
        file: ProblemFile {
            diffusion: d,
            payoff,
            running_payoff: None,
            mode: ModeSection {
                kind: mode,
                override_assumption: false,
            },
            mc: McSection::default(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payoff::Reward;
    use crate::problem::parse_spec;

    #[test]
    fn constants_from_conditions() {
        let (a, b) = example1_line();
        assert!((a - 7.0 / 3.0).abs() < 1e-14 && (b - 49.0 / 3.0).abs() < 1e-13);
        let b3 = example3_b();
        assert!((b3 / 742_205.0 - 1.0).abs() < 1e-3, "{b3}");
    }

    #[test]
    fn every_example_builds_and_round_trips() {
        for id in IDS {
            let ex = example(id).unwrap();
            let p = ex.problem().unwrap();
            let q = parse_spec(&ex.toml()).unwrap();
            assert_eq!(p.payoff, q.payoff, "example {id}");
            assert_eq!(p.mode, q.mode);
        }
        assert!(example(12).is_err());
    }

    #[test]
    fn example3_is_continuous_at_12() {
        let g = example(3).unwrap().problem().unwrap().payoff;
        assert!((g.value(12.0) - 9.0).abs() < 1e-9);
        assert!((g.value(12.0 - 1e-9) - 9.0).abs() < 1e-6);
    }
}
