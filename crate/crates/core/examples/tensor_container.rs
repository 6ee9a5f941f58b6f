//! Round-trips a tensor through the binary container format and a model
//! through the manifest directory format.
//!
//! ```text
//! cargo run --example tensor_container
//! ```

use msp_quant::model_io::{load_model, read_manifest, save_network};
use msp_quant::network::mlp;
use msp_quant::tensor::{load_tensor_container, save_tensor_container, Tensor};

fn main() -> msp_quant::Result<()> {
    let dir = std::env::temp_dir().join("msp_container_demo");
    std::fs::create_dir_all(&dir).map_err(|e| msp_quant::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let t = Tensor::new(vec![2, 3], vec![0.5, -1.25, 3.0, 1e-9, f64::MIN_POSITIVE, -0.0])?;
    let path = dir.join("t.mspt");
    save_tensor_container(&path, &t)?;
    let back = load_tensor_container(&path)?;
    println!("tensor {:?} round trip exact: {}", back.dims(), back == t);
    println!("container bytes: {}", t.to_bytes().len());

    let net = mlp(&[2, 8, 2], 1)?;
    let model_dir = dir.join("net");
    save_network(&model_dir, &net)?;
    let manifest = read_manifest(&model_dir)?;
    println!("manifest: format {} v{}, {} layers", manifest.format, manifest.version, manifest.layers.len());
    println!("model round trip exact: {}", load_model(&model_dir)?.net() == &net);
    Ok(())
}
