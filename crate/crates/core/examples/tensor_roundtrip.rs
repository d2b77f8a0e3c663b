//! Writes a points tensor in the PTNS container, reads it back and prints the
//! header fields.

use posekit::tensorio::{read_tensor, write_tensor, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("posekit-tensor-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("points.ptns");

    let values: Vec<f32> = (0..12).map(|i| i as f32 * 0.5).collect();
    let t = Tensor::from_f32(vec![6, 2], values)?;
    write_tensor(&path, &t)?;

    let back = read_tensor(&path)?;
    println!("{}: dtype {:?}, shape {:?}, {} bytes", path.display(), back.dtype(), back.shape(), t.encoded_len());
    assert_eq!(back, t);
    println!("first row: {:?}", &back.to_f64_vec()[..2]);
    Ok(())
}
