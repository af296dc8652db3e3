//! JSON checkpoint container: format tag, version, architecture and every
//! tensor with its declared shape.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::KERNEL;
use super::network::{LayerParams, NetParams, NetSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "rigidflow-matchnet";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StoredLayer {
    weight: StoredTensor,
    bias: StoredTensor,
    gamma: StoredTensor,
    beta: StoredTensor,
    running_mean: StoredTensor,
    running_var: StoredTensor,
}

#[derive(Serialize, Deserialize)]
struct StoredNet {
    format: String,
    version: u32,
    spec: NetSpec,
    layers: Vec<StoredLayer>,
}

fn store<T: Scalar>(shape: Vec<usize>, data: &[T]) -> StoredTensor {
    StoredTensor {
        shape,
        data: data.iter().map(|v| v.as_f64()).collect(),
    }
}

fn restore<T: Scalar>(t: StoredTensor, shape: &[usize], name: &str, layer: usize) -> Result<Vec<T>> {
    let expect: usize = shape.iter().product();
    if t.shape != shape || t.data.len() != expect {
        return Err(Error::Checkpoint(format!(
            "layer {layer} {name}: declared shape {:?} with {} values, expected {:?}",
            t.shape,
            t.data.len(),
            shape
        )));
    }
    if t.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Checkpoint(format!("layer {layer} {name}: non-finite value")));
    }
    Ok(t.data.into_iter().map(T::lit).collect())
}

pub fn checkpoint_to_string<T: Scalar>(params: &NetParams<T>) -> Result<String> {
    let layers = params
        .layers
        .iter()
        .map(|l| {
            let c = l.out_channels;
            StoredLayer {
                weight: store(vec![c, l.in_channels, KERNEL, KERNEL], &l.weight),
                bias: store(vec![c], &l.bias),
                gamma: store(vec![c], &l.gamma),
                beta: store(vec![c], &l.beta),
                running_mean: store(vec![c], &l.running_mean),
                running_var: store(vec![c], &l.running_var),
            }
        })
        .collect();
    let net = StoredNet {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        spec: params.spec.clone(),
        layers,
    };
    serde_json::to_string(&net).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn checkpoint_from_str<T: Scalar>(text: &str) -> Result<NetParams<T>> {
    let net: StoredNet = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if net.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format tag {:?}", net.format)));
    }
    if net.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            net.version
        )));
    }
    let mut params = NetParams::<T>::zeros(net.spec)?;
    if net.layers.len() != params.layers.len() {
        return Err(Error::Checkpoint(format!(
            "{} stored layers for a {}-layer spec",
            net.layers.len(),
            params.layers.len()
        )));
    }
    for (i, (stored, p)) in net.layers.into_iter().zip(params.layers.iter_mut()).enumerate() {
        let c = p.out_channels;
        *p = LayerParams {
            in_channels: p.in_channels,
            out_channels: c,
            weight: restore(stored.weight, &[c, p.in_channels, KERNEL, KERNEL], "weight", i)?,
            bias: restore(stored.bias, &[c], "bias", i)?,
            gamma: restore(stored.gamma, &[c], "gamma", i)?,
            beta: restore(stored.beta, &[c], "beta", i)?,
            running_mean: restore(stored.running_mean, &[c], "running_mean", i)?,
            running_var: restore(stored.running_var, &[c], "running_var", i)?,
        };
    }
    Ok(params)
}

pub fn save_checkpoint<T: Scalar>(params: &NetParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_to_string(params)?).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<NetParams<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    checkpoint_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_preserves_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = NetParams::<f64>::init(NetSpec::with_filters(vec![4, 3]), &mut rng).unwrap();
        let back: NetParams<f64> = checkpoint_from_str(&checkpoint_to_string(&net).unwrap()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = NetParams::<f32>::init(NetSpec::with_filters(vec![4, 3]), &mut rng).unwrap();
        let text = checkpoint_to_string(&net).unwrap();
        let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
        json["spec"]["layer_filter_counts"] = serde_json::json!([4, 5]);
        assert!(matches!(
            checkpoint_from_str::<f32>(&json.to_string()),
            Err(Error::Checkpoint(_))
        ));
        json["spec"]["layer_filter_counts"] = serde_json::json!([4, 3]);
        json["version"] = serde_json::json!(99);
        assert!(checkpoint_from_str::<f32>(&json.to_string()).is_err());
    }
}
