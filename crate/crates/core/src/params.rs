//! Named parameters for registry-built strategies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Scalar(f64),
    Vector(Vec<f64>),
}

pub type Params = BTreeMap<String, ParamValue>;

/// Typed access to a parameter map, rejecting unknown keys.
pub struct ParamReader<'a> {
    owner: &'a str,
    params: &'a Params,
}

impl<'a> ParamReader<'a> {
    pub fn new(owner: &'a str, params: &'a Params, allowed: &[&str]) -> Result<Self> {
        if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(LabError::InvalidParameter {
                owner: owner.to_string(),
                key: k.clone(),
                reason: format!("unknown key (accepted: {})", allowed.join(", ")),
            });
        }
        Ok(Self { owner, params })
    }

    fn err(&self, key: &str, reason: &str) -> LabError {
        LabError::InvalidParameter {
            owner: self.owner.to_string(),
            key: key.to_string(),
            reason: reason.to_string(),
        }
    }

    pub fn scalar(&self, key: &str, default: f64) -> Result<f64> {
        match self.params.get(key) {
            None => Ok(default),
            Some(ParamValue::Scalar(v)) if v.is_finite() => Ok(*v),
            Some(_) => Err(self.err(key, "expected a finite number")),
        }
    }

    pub fn vector(&self, key: &str, dim: usize, default: [f64; 2]) -> Result<[f64; 2]> {
        match self.params.get(key) {
            None => Ok(default),
            Some(ParamValue::Vector(v)) if v.len() == dim && v.iter().all(|x| x.is_finite()) => {
                let mut out = [0.0; 2];
                out[..dim].copy_from_slice(v);
                Ok(out)
            }
            Some(ParamValue::Scalar(v)) if dim == 1 && v.is_finite() => Ok([*v, 0.0]),
            Some(_) => Err(self.err(key, &format!("expected {dim} finite numbers"))),
        }
    }
}
