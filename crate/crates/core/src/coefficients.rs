//! Scheme coefficient matrices and their exact certification.
//!
//! A scheme is described by a strictly lower-triangular matrix of rational
//! coefficients `gamma[m][i]` (`1 <= m <= M`, `0 <= i < m`), one row per
//! stage. Certification is entirely exact: the stability check derives the
//! auxiliary tables by a backward recursion and requires a positive diagonal,
//! and the consistency check runs the Taylor-coefficient recursion and
//! compares against the exact order targets.

use num_traits::{Signed, Zero};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::rational::{format_rational, parse_rational, rational_from_i64, to_f64, Rational};

/// Lower-triangular stage coefficients with exact rational entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GammaMatrix {
    name: String,
    rows: Vec<Vec<Rational>>,
}

/// Outcome of the stability check: the auxiliary tables and the per-stage
/// positivity verdicts. `stable` holds iff every diagonal entry is strictly
/// positive.
#[derive(Debug, Clone)]
pub struct StabilityCertificate {
    /// `tilde_gamma[m-1][i]` for `1 <= m <= M`, `0 <= i < m`.
    pub tilde_gamma: Vec<Vec<Rational>>,
    /// `tilde_s[j-1][m-1]` for `1 <= m <= j <= M`.
    pub tilde_s: Vec<Vec<Rational>>,
    /// Strict positivity of each diagonal entry `tilde_s[m][m]`.
    pub diagonal_positive: Vec<bool>,
    pub stable: bool,
    /// Set when the recursion hit a zero diagonal and had to stop.
    pub degenerate_at: Option<usize>,
}

/// Consistency coefficients per stage and the order they certify.
#[derive(Debug, Clone)]
pub struct OrderReport {
    /// `beta[c][m]` holds the c-th coefficient sequence at stage m, `m = 0..=M`.
    pub beta1: Vec<Rational>,
    pub beta2: Vec<Rational>,
    pub beta3: Vec<Rational>,
    pub beta4: Vec<Rational>,
    /// Largest order in `{1, 2, 3}` whose conditions hold exactly; 0 if none.
    pub achieved_order: u32,
}

/// Bundled verdict from [`certify`].
#[derive(Debug, Clone)]
pub struct Certification {
    pub certificate: StabilityCertificate,
    pub report: OrderReport,
    pub requested_order: u32,
    pub verdict: bool,
}

pub const BUILTIN_NAMES: [&str; 4] = [
    "backward_euler",
    "second_order_a",
    "second_order_b",
    "third_order",
];

impl GammaMatrix {
    /// Build a matrix from triangular rows, checking shape and row sums.
    pub fn new(name: impl Into<String>, rows: Vec<Vec<Rational>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Shape("no stages".into()));
        }
        for (m, row) in rows.iter().enumerate() {
            if row.len() != m + 1 {
                return Err(Error::Shape(format!(
                    "row {} has {} entries, expected {}",
                    m + 1,
                    row.len(),
                    m + 1
                )));
            }
            if row.iter().sum::<Rational>().is_zero() {
                return Err(Error::ZeroRowSum { row: m + 1 });
            }
        }
        Ok(Self {
            name: name.into(),
            rows,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn stages(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<Rational>] {
        &self.rows
    }

    pub fn entry(&self, m: usize, i: usize) -> &Rational {
        &self.rows[m - 1][i]
    }

    /// Row sum `S_m`.
    pub fn row_sum(&self, m: usize) -> Rational {
        self.rows[m - 1].iter().sum()
    }

    /// Float copy of the rows for the time stepper.
    pub fn to_float(&self) -> FloatScheme {
        FloatScheme {
            name: self.name.clone(),
            rows: self
                .rows
                .iter()
                .map(|row| row.iter().map(to_f64).collect())
                .collect(),
        }
    }

    /// One of the ready-made schemes shipped with the library.
    pub fn builtin(name: &str) -> Result<Self> {
        let q = rational_from_i64;
        let rows = match name {
            "backward_euler" => vec![vec![q(1, 1)]],
            "second_order_a" => vec![
                vec![q(5, 1)],
                vec![q(-2, 1), q(6, 1)],
                vec![q(-2, 1), q(3, 14), q(44, 7)],
            ],
            "second_order_b" => vec![
                vec![q(9, 2)],
                vec![q(-11, 6), q(44, 7)],
                vec![q(-287_591, 148_306), q(0, 1), q(944_163, 148_306)],
            ],
            "third_order" => third_order_rows()?,
            other => return Err(Error::UnknownScheme(other.to_string())),
        };
        Self::new(name, rows)
    }
}

// Exact entries of the six-stage third-order scheme. The four long fractions
// in the final row are the published exact values; gamma[6][2] is positive
// (the sign that actually satisfies the stability and consistency checks,
// matching the quoted decimal approximation 2.46).
fn third_order_rows() -> Result<Vec<Vec<Rational>>> {
    let q = rational_from_i64;
    let g62 = parse_rational(
        "96877768305591883216465260738322381995331343806720345/\
         39417514787340924198452679823989476266149744556295712",
    )?;
    let g63 = parse_rational(
        "-910677500903250179715877776918800480038125970511673389/\
         78835029574681848396905359647978952532299489112591424",
    )?;
    let g64 = parse_rational(
        "2985416726242784122189204876225493950575679989899779/\
         446910598495928845787445349478338733176300958688160",
    )?;
    let g65 = parse_rational(
        "523180952458721016795516949849623944572931703979520653/\
         43797238652601026887169644248877195851277493951439680",
    )?;
    Ok(vec![
        vec![q(67, 6)],
        vec![q(-15, 2), q(136, 7)],
        vec![q(-21, 20), q(-19, 4), q(587, 42)],
        vec![q(9, 5), q(1, 21), q(-47, 6), q(69, 5)],
        vec![q(31, 5), q(-43, 6), q(-4, 3), q(13, 8), q(242, 21)],
        vec![q(-17, 6), q(75, 16), g62, g63, g64, g65],
    ])
}

/// Float view of a scheme, the form consumed by the stepper.
#[derive(Debug, Clone)]
pub struct FloatScheme {
    pub name: String,
    pub rows: Vec<Vec<f64>>,
}

impl FloatScheme {
    pub fn stages(&self) -> usize {
        self.rows.len()
    }

    pub fn row_sum(&self, m: usize) -> f64 {
        self.rows[m - 1].iter().sum()
    }
}

/// Derive the auxiliary tables by the backward recursion `m = M, M-1, ..., 1`
/// and report the per-stage positivity verdicts.
///
/// A zero diagonal makes later divisions undefined; in that case the
/// certificate is returned with `stable = false` and `degenerate_at` set
/// instead of failing.
pub fn compute_auxiliaries(gamma: &GammaMatrix) -> StabilityCertificate {
    let stages = gamma.stages();
    let mut tilde_gamma: Vec<Vec<Rational>> = vec![Vec::new(); stages];
    // tilde_s[j-1][m-1] = sum_{i < m} tilde_gamma[j-1][i], for m <= j
    let mut tilde_s: Vec<Vec<Rational>> = vec![Vec::new(); stages];

    for m in (1..=stages).rev() {
        let mut row = Vec::with_capacity(m);
        for i in 0..m {
            let mut value = gamma.entry(m, i).clone();
            for j in (m + 1)..=stages {
                let s_jj = &tilde_s[j - 1][j - 1];
                if s_jj.is_zero() {
                    // unreachable: detected when row j was finished
                    continue;
                }
                let s_jm: Rational = tilde_gamma[j - 1][..m].iter().sum();
                value -= &tilde_gamma[j - 1][i] * s_jm / s_jj;
            }
            row.push(value);
        }
        // prefix sums give tilde_s[m-1][0..m]
        let mut prefix = Vec::with_capacity(m);
        let mut acc = Rational::zero();
        for entry in &row {
            acc += entry;
            prefix.push(acc.clone());
        }
        tilde_gamma[m - 1] = row;
        tilde_s[m - 1] = prefix;
        if tilde_s[m - 1][m - 1].is_zero() {
            // Division by this diagonal would be required for every earlier
            // stage; mark and stop rather than crash.
            let diagonal_positive = (1..=stages)
                .map(|j| {
                    tilde_s
                        .get(j - 1)
                        .and_then(|r| r.get(j - 1))
                        .map(|d| d.is_positive())
                        .unwrap_or(false)
                })
                .collect();
            return StabilityCertificate {
                tilde_gamma,
                tilde_s,
                diagonal_positive,
                stable: false,
                degenerate_at: Some(m),
            };
        }
    }

    let diagonal_positive: Vec<bool> = (1..=stages)
        .map(|m| tilde_s[m - 1][m - 1].is_positive())
        .collect();
    let stable = diagonal_positive.iter().all(|&p| p);
    StabilityCertificate {
        tilde_gamma,
        tilde_s,
        diagonal_positive,
        stable,
        degenerate_at: None,
    }
}

impl StabilityCertificate {
    /// Diagonal entries `tilde_s[m][m]` in stage order (missing if the
    /// recursion stopped early).
    pub fn diagonal(&self) -> Vec<Option<&Rational>> {
        (0..self.tilde_s.len())
            .map(|m| self.tilde_s[m].get(m))
            .collect()
    }

    /// True when some diagonal entry is exactly zero: the scheme sits on the
    /// boundary of the stability region and is not certified.
    pub fn boundary_case(&self) -> bool {
        self.degenerate_at.is_some()
    }
}

/// Run the consistency recursion and determine the achieved order.
pub fn compute_betas(gamma: &GammaMatrix) -> Result<OrderReport> {
    let stages = gamma.stages();
    let zero = Rational::zero();
    let mut b1 = vec![zero.clone()];
    let mut b2 = vec![zero.clone()];
    let mut b3 = vec![zero.clone()];
    let mut b4 = vec![zero];

    for m in 1..=stages {
        let s_m = gamma.row_sum(m);
        if s_m.is_zero() {
            return Err(Error::DegenerateStage { stage: m });
        }
        let row = &gamma.rows()[m - 1];
        let dot = |seq: &[Rational]| -> Rational {
            (1..m).map(|i| &row[i] * &seq[i]).sum()
        };
        let one = Rational::from_integer(1.into());
        let v1 = (&one + dot(&b1)) / &s_m;
        let v2 = (&v1 + dot(&b2)) / &s_m;
        let v3 = (&v2 + dot(&b3)) / &s_m;
        let v4 = (&v1 * &v1 / rational_from_i64(2, 1) + dot(&b4)) / &s_m;
        b1.push(v1);
        b2.push(v2);
        b3.push(v3);
        b4.push(v4);
    }

    let m = stages;
    let one = rational_from_i64(1, 1);
    let half = rational_from_i64(1, 2);
    let sixth = rational_from_i64(1, 6);
    let achieved_order = if b1[m] != one {
        0
    } else if b2[m] != half {
        1
    } else if b3[m] != sixth || b4[m] != sixth {
        2
    } else {
        3
    };

    Ok(OrderReport {
        beta1: b1,
        beta2: b2,
        beta3: b3,
        beta4: b4,
        achieved_order,
    })
}

/// Certify stability and consistency together: the verdict is true iff the
/// scheme is stable and reaches at least the requested order.
pub fn certify(gamma: &GammaMatrix, order: u32) -> Result<Certification> {
    if !(1..=3).contains(&order) {
        return Err(Error::Config(format!(
            "certifiable orders are 1..=3, got {order}"
        )));
    }
    let certificate = compute_auxiliaries(gamma);
    let report = compute_betas(gamma)?;
    let verdict = certificate.stable && report.achieved_order >= order;
    Ok(Certification {
        certificate,
        report,
        requested_order: order,
        verdict,
    })
}

/// Parse a scheme from JSON: either `{"name": ..., "gamma": [["p/q", ...]]}`
/// or a bare array-of-arrays of rational strings.
pub fn parse_gamma(text: &str) -> Result<GammaMatrix> {
    let value: Value = serde_json::from_str(text)?;
    let (name, gamma_value) = match &value {
        Value::Object(map) => {
            let name = map
                .get("name")
                .and_then(Value::as_str)
                .unwrap_or("unnamed")
                .to_string();
            let gamma = map
                .get("gamma")
                .ok_or_else(|| Error::Shape("missing 'gamma' field".into()))?;
            (name, gamma)
        }
        Value::Array(_) => ("unnamed".to_string(), &value),
        _ => return Err(Error::Shape("expected object or array".into())),
    };
    let rows_value = gamma_value
        .as_array()
        .ok_or_else(|| Error::Shape("'gamma' must be an array of arrays".into()))?;
    let mut rows = Vec::with_capacity(rows_value.len());
    for row_value in rows_value {
        let entries = row_value
            .as_array()
            .ok_or_else(|| Error::Shape("each row must be an array".into()))?;
        let mut row = Vec::with_capacity(entries.len());
        for entry in entries {
            let s = entry
                .as_str()
                .ok_or_else(|| Error::Shape("rational entries must be strings".into()))?;
            row.push(parse_rational(s)?);
        }
        rows.push(row);
    }
    GammaMatrix::new(name, rows)
}

/// Serialize a scheme to JSON with `"p/q"` string entries.
pub fn serialize_gamma(gamma: &GammaMatrix) -> String {
    let rows: Vec<Vec<String>> = gamma
        .rows()
        .iter()
        .map(|row| row.iter().map(format_rational).collect())
        .collect();
    json!({ "name": gamma.name(), "gamma": rows }).to_string()
}

/// Load a scheme from either `builtin:NAME` or a JSON file path.
pub fn load_scheme(spec: &str) -> Result<GammaMatrix> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        return GammaMatrix::builtin(name);
    }
    if BUILTIN_NAMES.contains(&spec) {
        return GammaMatrix::builtin(spec);
    }
    let text = std::fs::read_to_string(spec)?;
    parse_gamma(&text)
}

/// JSON rendering of a certification outcome (used by the CLI).
pub fn certification_to_json(gamma: &GammaMatrix, cert: &Certification) -> Value {
    let diag: Vec<Value> = cert
        .certificate
        .diagonal()
        .iter()
        .map(|d| match d {
            Some(r) => Value::String(format_rational(r)),
            None => Value::Null,
        })
        .collect();
    let tg: Vec<Vec<String>> = cert
        .certificate
        .tilde_gamma
        .iter()
        .map(|row| row.iter().map(format_rational).collect())
        .collect();
    let ts: Vec<Vec<String>> = cert
        .certificate
        .tilde_s
        .iter()
        .map(|row| row.iter().map(format_rational).collect())
        .collect();
    let betas = |seq: &[Rational]| -> Vec<String> { seq.iter().map(format_rational).collect() };
    json!({
        "scheme": gamma.name(),
        "stages": gamma.stages(),
        "stable": cert.certificate.stable,
        "boundary_case": cert.certificate.boundary_case(),
        "diagonal_positive": cert.certificate.diagonal_positive,
        "tilde_s_diagonal": diag,
        "tilde_gamma": tg,
        "tilde_s": ts,
        "beta1": betas(&cert.report.beta1),
        "beta2": betas(&cert.report.beta2),
        "beta3": betas(&cert.report.beta3),
        "beta4": betas(&cert.report.beta4),
        "achieved_order": cert.report.achieved_order,
        "requested_order": cert.requested_order,
        "verdict": cert.verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rational_from_i64 as q;

    fn gamma(rows: Vec<Vec<Rational>>) -> GammaMatrix {
        GammaMatrix::new("test", rows).unwrap()
    }

    #[test]
    fn single_stage_backward_euler_is_stable() {
        let g = gamma(vec![vec![q(1, 1)]]);
        let cert = compute_auxiliaries(&g);
        assert_eq!(cert.tilde_gamma[0][0], q(1, 1));
        assert_eq!(cert.tilde_s[0][0], q(1, 1));
        assert!(cert.stable);
    }

    #[test]
    fn two_stage_hand_evaluation() {
        // gamma = (5), (-2, 6): S~22 = 4, S~11 = 5 - (-2)^2/4 = 4
        let g = gamma(vec![vec![q(5, 1)], vec![q(-2, 1), q(6, 1)]]);
        let cert = compute_auxiliaries(&g);
        assert_eq!(cert.tilde_s[1][1], q(4, 1));
        assert_eq!(cert.tilde_s[0][0], q(4, 1));
        assert!(cert.stable);
    }

    #[test]
    fn second_order_a_stability_diagonal() {
        let g = GammaMatrix::builtin("second_order_a").unwrap();
        let cert = compute_auxiliaries(&g);
        assert!(cert.stable);
        assert_eq!(cert.tilde_s[0][0], q(5051, 2903));
        assert_eq!(cert.tilde_s[1][1], q(2903, 882));
        assert_eq!(cert.tilde_s[2][2], q(9, 2));
    }

    #[test]
    fn six_stage_builtin_is_stable() {
        let g = GammaMatrix::builtin("third_order").unwrap();
        let cert = compute_auxiliaries(&g);
        assert!(cert.stable);
        assert!(cert.diagonal_positive.iter().all(|&p| p));
    }

    #[test]
    fn backward_euler_betas() {
        let g = GammaMatrix::builtin("backward_euler").unwrap();
        let report = compute_betas(&g).unwrap();
        assert_eq!(report.beta1[1], q(1, 1));
        assert_eq!(report.beta2[1], q(1, 1));
        assert_eq!(report.beta3[1], q(1, 1));
        assert_eq!(report.beta4[1], q(1, 2));
        assert_eq!(report.achieved_order, 1);
    }

    #[test]
    fn second_order_a_betas() {
        let g = GammaMatrix::builtin("second_order_a").unwrap();
        let report = compute_betas(&g).unwrap();
        assert_eq!(report.beta1[3], q(1, 1));
        assert_eq!(report.beta2[3], q(1, 2));
        // hand-derived via the recursion
        assert_eq!(report.beta3[3], q(71, 360));
        assert_eq!(report.beta4[3], q(69, 400));
        assert_eq!(report.achieved_order, 2);
    }

    #[test]
    fn third_order_betas_exact() {
        let g = GammaMatrix::builtin("third_order").unwrap();
        let report = compute_betas(&g).unwrap();
        assert_eq!(report.beta1[6], q(1, 1));
        assert_eq!(report.beta2[6], q(1, 2));
        assert_eq!(report.beta3[6], q(1, 6));
        assert_eq!(report.beta4[6], q(1, 6));
        assert_eq!(report.achieved_order, 3);
    }

    #[test]
    fn certify_examples() {
        let b = GammaMatrix::builtin("second_order_b").unwrap();
        assert!(certify(&b, 2).unwrap().verdict);
        let a = GammaMatrix::builtin("second_order_a").unwrap();
        assert!(!certify(&a, 3).unwrap().verdict);
        let be = GammaMatrix::builtin("backward_euler").unwrap();
        assert!(certify(&be, 1).unwrap().verdict);
        assert!(!certify(&be, 2).unwrap().verdict);
    }

    #[test]
    fn parse_serialize_round_trip() {
        let text = r#"[["5"],["-2","6"],["-2","3/14","44/7"]]"#;
        let g = parse_gamma(text).unwrap();
        let a = GammaMatrix::builtin("second_order_a").unwrap();
        assert_eq!(g.rows(), a.rows());
        let ser = serialize_gamma(&g);
        let again = parse_gamma(&ser).unwrap();
        assert_eq!(again.rows(), g.rows());
    }

    #[test]
    fn parse_normalizes_entries() {
        let g = parse_gamma(r#"[["10/2"]]"#).unwrap();
        assert_eq!(g.entry(1, 0), &q(5, 1));
    }

    #[test]
    fn parse_rejects_bad_shape() {
        assert!(matches!(
            parse_gamma(r#"[["1","2"]]"#),
            Err(Error::Shape(_))
        ));
        assert!(matches!(parse_gamma(r#"[]"#), Err(Error::Shape(_))));
        assert!(parse_gamma(r#"[["1/x"]]"#).is_err());
    }

    #[test]
    fn zero_row_sum_rejected_on_construction() {
        let err = GammaMatrix::new("bad", vec![vec![q(1, 1)], vec![q(-3, 1), q(3, 1)]]);
        assert!(matches!(err, Err(Error::ZeroRowSum { row: 2 })));
    }

    #[test]
    fn zero_diagonal_flags_not_stable() {
        // gamma_{1,0} chosen so that S~11 = 0: gamma11 - g20^2/(g20+g21) = 0.
        let g = gamma(vec![vec![q(1, 1)], vec![q(-2, 1), q(6, 1)]]);
        let cert = compute_auxiliaries(&g);
        assert!(!cert.stable);
        assert_eq!(cert.degenerate_at, Some(1));
    }
}
