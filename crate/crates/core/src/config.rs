//! Serde helpers for JSON configs whose numeric values are written as decimal
//! strings (`"0.2"`, `"10000"`). Plain JSON numbers are accepted on input.

use std::fmt::Display;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serializer};

#[derive(Deserialize)]
#[serde(untagged)]
enum Raw {
    Text(String),
    Number(serde_json::Number),
}

fn parse<T: FromStr, E: serde::de::Error>(raw: Raw) -> Result<T, E>
where
    T::Err: Display,
{
    let text = match raw {
        Raw::Text(s) => s,
        Raw::Number(n) => n.to_string(),
    };
    text.trim()
        .parse()
        .map_err(|e| E::custom(format!("invalid decimal {text:?}: {e}")))
}

/// A scalar as a decimal string.
pub mod dec {
    use super::*;

    pub fn serialize<T: Display, S: Serializer>(value: &T, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&value.to_string())
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        parse(Raw::deserialize(d)?)
    }
}

/// A list of scalars, each as a decimal string.
pub mod dec_vec {
    use super::*;
    use serde::ser::SerializeSeq;

    pub fn serialize<T: Display, S: Serializer>(values: &[T], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(values.len()))?;
        for v in values {
            seq.serialize_element(&v.to_string())?;
        }
        seq.end()
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<Vec<T>, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        Vec::<Raw>::deserialize(d)?.into_iter().map(parse).collect()
    }
}

/// Shortest round-trip decimal text for `v`, switching to exponent form for
/// very large or very small magnitudes.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Serialize;

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    struct Sample {
        #[serde(with = "dec")]
        zeta: f64,
        #[serde(with = "dec")]
        epochs: usize,
        #[serde(with = "dec_vec")]
        lambdas: Vec<f64>,
    }

    #[test]
    fn numbers_are_strings() {
        let s = Sample {
            zeta: 0.2,
            epochs: 10,
            lambdas: vec![-5.0, 0.5],
        };
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"zeta":"0.2","epochs":"10","lambdas":["-5","0.5"]}"#);
        assert_eq!(serde_json::from_str::<Sample>(&json).unwrap(), s);
        let lenient: Sample =
            serde_json::from_str(r#"{"zeta":0.2,"epochs":10,"lambdas":[-5,"0.5"]}"#).unwrap();
        assert_eq!(lenient, s);
        assert!(serde_json::from_str::<Sample>(r#"{"zeta":"x","epochs":"1","lambdas":[]}"#).is_err());
    }

    #[test]
    fn formatting_round_trips() {
        for v in [0.1, 1.0 / 3.0, 1e-300, -2.5e20, 0.0, 123456.789] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(1.0), "1");
        assert_eq!(fmt_f64(1e-7), "1e-7");
    }
}
