//! Serde adapters: `DVector` as a plain array of numbers, non-finite norms.

use nalgebra::DVector;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub mod dvec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Vec::<f64>::deserialize(d).map(DVector::from_vec)
    }
}

pub mod opt_dvec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<DVector<f64>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref().map(|v| v.as_slice()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DVector<f64>>, D::Error> {
        Ok(Option::<Vec<f64>>::deserialize(d)?.map(DVector::from_vec))
    }
}

pub mod vec_dvec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.as_slice()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<f64>>, D::Error> {
        Ok(Vec::<Vec<f64>>::deserialize(d)?.into_iter().map(DVector::from_vec).collect())
    }
}

/// JSON writes non-finite numbers as `null`; read them back as `+∞`.
pub fn null_as_infinity<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Holder {
        #[serde(with = "dvec")]
        a: DVector<f64>,
        #[serde(with = "opt_dvec")]
        b: Option<DVector<f64>>,
        #[serde(with = "vec_dvec")]
        c: Vec<DVector<f64>>,
    }

    #[test]
    fn vectors_round_trip_as_arrays() {
        let h = Holder {
            a: DVector::from_vec(vec![1.0, 2.5]),
            b: None,
            c: vec![DVector::from_vec(vec![3.0])],
        };
        let text = serde_json::to_string(&h).unwrap();
        assert_eq!(text, r#"{"a":[1.0,2.5],"b":null,"c":[[3.0]]}"#);
        assert_eq!(serde_json::from_str::<Holder>(&text).unwrap(), h);
    }
}
