//! Canonical report serialization: JSON with sorted keys and fixed
//! 6-significant-digit float formatting, plus the per-PIE CSV table.
//! Byte-stable across reruns by construction.

use pier_core::evaluation::{MetricsReport, PerPieRow};

/// Fixed scientific formatting, one leading digit plus five decimals.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        return "null".into();
    }
    format!("{x:.5e}")
}

/// Minimal JSON value with deterministic serialization.
pub enum Json {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Arr(Vec<Json>),
    Obj(Vec<(String, Json)>),
}

impl Json {
    pub fn write(&self, out: &mut String) {
        match self {
            Json::Null => out.push_str("null"),
            Json::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Json::Int(i) => out.push_str(&i.to_string()),
            Json::Float(f) => {
                if f.is_nan() {
                    out.push_str("null");
                } else {
                    out.push('"');
                    out.push_str(&fmt_float(*f));
                    out.push('"');
                }
            }
            Json::Str(s) => {
                out.push('"');
                for c in s.chars() {
                    match c {
                        '"' => out.push_str("\\\""),
                        '\\' => out.push_str("\\\\"),
                        '\n' => out.push_str("\\n"),
                        c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
                        c => out.push(c),
                    }
                }
                out.push('"');
            }
            Json::Arr(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    item.write(out);
                }
                out.push(']');
            }
            Json::Obj(fields) => {
                let mut sorted: Vec<&(String, Json)> = fields.iter().collect();
                sorted.sort_by(|a, b| a.0.cmp(&b.0));
                out.push('{');
                for (i, (k, v)) in sorted.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    Json::Str(k.clone()).write(out);
                    out.push(':');
                    v.write(out);
                }
                out.push('}');
            }
        }
    }

    pub fn to_string_canonical(&self) -> String {
        let mut s = String::new();
        self.write(&mut s);
        s.push('\n');
        s
    }
}

fn opt_float(v: Option<f64>) -> Json {
    match v {
        Some(x) => Json::Float(x),
        None => Json::Null,
    }
}

fn corr_pair(v: Option<(f64, f64)>) -> Json {
    match v {
        Some((r, p)) => Json::Obj(vec![
            ("r".into(), Json::Float(r)),
            ("p".into(), Json::Float(p)),
        ]),
        None => Json::Null,
    }
}

/// The canonical JSON rendering of a metrics report.
pub fn report_to_json(report: &MetricsReport) -> Json {
    let per_pie = report
        .per_pie
        .iter()
        .map(|row| {
            Json::Obj(vec![
                ("pie_id".into(), Json::Int(row.pie_id as i64)),
                ("group_id".into(), Json::Int(row.group_id as i64)),
                (
                    "train_sentences".into(),
                    Json::Int(row.train_sentences as i64),
                ),
                ("skew_ratio".into(), Json::Float(row.skew_ratio)),
                (
                    "inter_type_cos_sim".into(),
                    opt_float(row.inter_type_cos_sim),
                ),
                ("senseclf_acc".into(), opt_float(row.senseclf_acc)),
                ("spandet_seq_acc".into(), opt_float(row.spandet_seq_acc)),
                (
                    "flag_high_similarity".into(),
                    Json::Bool(row.flag_high_similarity),
                ),
                ("flag_skewed".into(), Json::Bool(row.flag_skewed)),
            ])
        })
        .collect();
    let skew = match &report.skew {
        Some(s) => Json::Obj(vec![
            ("skewed_mean_sim".into(), Json::Float(s.skewed_mean_sim)),
            ("balanced_mean_sim".into(), Json::Float(s.balanced_mean_sim)),
            ("n_skewed".into(), Json::Int(s.n_skewed as i64)),
            ("n_balanced".into(), Json::Int(s.n_balanced as i64)),
        ]),
        None => Json::Null,
    };
    Json::Obj(vec![
        ("h_score".into(), Json::Float(report.h_score)),
        (
            "inter_group_cos_dist".into(),
            Json::Float(report.inter_group_cos_dist),
        ),
        (
            "inter_type_cos_sim".into(),
            Json::Float(report.inter_type_cos_sim),
        ),
        ("senseclf_f1".into(), Json::Float(report.senseclf_f1)),
        ("senseclf_acc".into(), Json::Float(report.senseclf_acc)),
        ("spandet_seq_acc".into(), Json::Float(report.spandet_seq_acc)),
        (
            "spandet_token_recall".into(),
            Json::Float(report.spandet_token_recall),
        ),
        (
            "reconstruction_acc".into(),
            Json::Float(report.reconstruction_acc),
        ),
        (
            "clustered_pies".into(),
            Json::Int(report.clustered_pies as i64),
        ),
        (
            "dual_sense_pies".into(),
            Json::Int(report.dual_sense_pies as i64),
        ),
        ("per_pie".into(), Json::Arr(per_pie)),
        ("skew_analysis".into(), skew),
        (
            "correlations".into(),
            Json::Obj(vec![
                (
                    "train_count_vs_inter_type_sim".into(),
                    corr_pair(report.correlations.train_count_vs_inter_type_sim),
                ),
                (
                    "train_count_vs_senseclf_acc".into(),
                    corr_pair(report.correlations.train_count_vs_senseclf_acc),
                ),
                (
                    "train_count_vs_spandet_seq_acc".into(),
                    corr_pair(report.correlations.train_count_vs_spandet_seq_acc),
                ),
            ]),
        ),
        (
            "config_fingerprint".into(),
            Json::Str(format!("{:016x}", report.config_fingerprint)),
        ),
        ("seed".into(), Json::Int(report.seed as i64)),
    ])
}

/// The per-PIE table as CSV with a header row; absent values are empty.
pub fn per_pie_csv(rows: &[PerPieRow]) -> String {
    let mut out = String::from(
        "pie_id,group_id,train_sentences,skew_ratio,inter_type_cos_sim,senseclf_acc,spandet_seq_acc,flag_high_similarity,flag_skewed\n",
    );
    for r in rows {
        let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.pie_id,
            r.group_id,
            r.train_sentences,
            fmt_float(r.skew_ratio),
            opt(r.inter_type_cos_sim),
            opt(r.senseclf_acc),
            opt(r.spandet_seq_acc),
            r.flag_high_similarity,
            r.flag_skewed
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_sorted_and_floats_fixed() {
        let j = Json::Obj(vec![
            ("zeta".into(), Json::Int(1)),
            ("alpha".into(), Json::Float(0.7736999999)),
        ]);
        let s = j.to_string_canonical();
        assert_eq!(s, "{\"alpha\":\"7.73700e-1\",\"zeta\":1}\n");
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_float(0.774), "7.74000e-1");
        assert_eq!(fmt_float(-1.0), "-1.00000e0");
        assert_eq!(fmt_float(123456.789), "1.23457e5");
    }

    #[test]
    fn string_escaping() {
        let j = Json::Str("a\"b\\c\nd".into());
        let mut s = String::new();
        j.write(&mut s);
        assert_eq!(s, "\"a\\\"b\\\\c\\nd\"");
    }
}
