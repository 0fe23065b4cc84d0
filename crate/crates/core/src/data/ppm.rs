use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One channel of a `(p, m, n)` patch as a grey-scale binary PPM (P6),
/// min-max scaled to 0..=255. A constant channel renders black.
pub fn encode_ppm(patch: &Tensor, channel: usize) -> Result<Vec<u8>> {
    let &[p, m, n] = patch.shape() else {
        return Err(Error::shape(format!(
            "expected a (p, m, n) patch, got {:?}",
            patch.shape()
        )));
    };
    if channel >= p {
        return Err(Error::validation(format!(
            "channel {channel} out of range for {p} channels"
        )));
    }
    let plane = &patch.data()[channel * m * n..(channel + 1) * m * n];
    let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P6\n{n} {m}\n255\n").into_bytes();
    out.reserve(3 * m * n);
    for &v in plane {
        let g = if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        };
        out.extend_from_slice(&[g, g, g]);
    }
    Ok(out)
}

pub fn write_ppm(patch: &Tensor, channel: usize, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_ppm(patch, channel)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_scaling() {
        let t = Tensor::from_vec(
            &[2, 2, 3],
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0],
        )
        .unwrap();
        let img = encode_ppm(&t, 0).unwrap();
        let header = b"P6\n3 2\n255\n";
        assert_eq!(&img[..header.len()], header);
        let px: Vec<u8> = img[header.len()..].chunks(3).map(|c| c[0]).collect();
        assert_eq!(px, vec![0, 51, 102, 153, 204, 255]);
        let flat = encode_ppm(&t, 1).unwrap();
        assert!(flat[header.len()..].iter().all(|&b| b == 0));
        assert!(encode_ppm(&t, 2).is_err());
    }
}
