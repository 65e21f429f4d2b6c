//! Log-space helpers and the JSON encoding used for log-probability vectors.

/// Stable `ln(sum(exp(xs)))`. Returns negative infinity for an empty slice or
/// when every entry is negative infinity.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Serde adapter for `Vec<f64>` log-vectors. JSON has no infinity literal, so
/// negative infinity (zero probability) is written as `null`. On input `null`
/// and the strings `"-inf"` / `"-Infinity"` all decode to negative infinity.
pub mod logvec {
    use serde::de::{self, Deserializer, SeqAccess, Visitor};
    use serde::ser::{SerializeSeq, Serializer};
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for &x in v {
            if x.is_finite() {
                seq.serialize_element(&x)?;
            } else {
                seq.serialize_element(&Option::<f64>::None)?;
            }
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        d.deserialize_seq(LogVecVisitor)
    }

    #[derive(serde::Deserialize)]
    #[serde(untagged)]
    pub(crate) enum LogValue {
        Num(f64),
        Text(String),
        Null(()),
    }

    impl LogValue {
        pub(crate) fn into_f64<E: de::Error>(self) -> Result<f64, E> {
            match self {
                LogValue::Num(x) => Ok(x),
                LogValue::Null(()) => Ok(f64::NEG_INFINITY),
                LogValue::Text(t) => match t.as_str() {
                    "-inf" | "-Infinity" | "-infinity" => Ok(f64::NEG_INFINITY),
                    other => Err(E::custom(format!("unexpected log value {other:?}"))),
                },
            }
        }
    }

    struct LogVecVisitor;

    impl<'de> Visitor<'de> for LogVecVisitor {
        type Value = Vec<f64>;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("an array of log-values (numbers or null)")
        }

        fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Vec<f64>, A::Error> {
            let mut out = Vec::with_capacity(seq.size_hint().unwrap_or(0));
            while let Some(v) = seq.next_element::<LogValue>()? {
                out.push(v.into_f64()?);
            }
            Ok(out)
        }
    }
}

/// Nested variant of [`logvec`] for `Vec<Vec<f64>>`.
pub mod logmat {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Row(#[serde(with = "super::logvec")] Vec<f64>);

    pub fn serialize<S: Serializer>(m: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter().map(|r| Row(r.clone())))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let rows = Vec::<Row>::deserialize(d)?;
        Ok(rows.into_iter().map(|r| r.0).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_basic() {
        let xs = [0.25f64.ln(); 4];
        assert!(log_sum_exp(&xs).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[0.0, f64::NEG_INFINITY]), 0.0);
    }

    #[test]
    fn lse_large_magnitudes() {
        let v = log_sum_exp(&[-1000.0, -1000.0]);
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn logvec_json() {
        #[derive(serde::Serialize, serde::Deserialize, PartialEq, Debug)]
        struct W(#[serde(with = "logvec")] Vec<f64>);
        let w = W(vec![-0.5, f64::NEG_INFINITY, -1e-300]);
        let s = serde_json::to_string(&w).unwrap();
        assert_eq!(s, "[-0.5,null,-1e-300]");
        let back: W = serde_json::from_str(&s).unwrap();
        assert_eq!(back, w);
        let alt: W = serde_json::from_str(r#"[-0.5,"-Infinity",-1e-300]"#).unwrap();
        assert_eq!(alt, w);
    }
}
