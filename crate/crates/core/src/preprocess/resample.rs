use super::PreprocessError;
use crate::keypoint::{GestureSequence, KeypointFrame, Point3};

pub const DEFAULT_FRAMES: usize = 30;

/// Position `i` of `len_out` evenly spaced samples over `[0, len_in - 1]`,
/// split into an integer index and a fraction.
fn sample_position(i: usize, len_in: usize, len_out: usize) -> (usize, f64) {
    let u = (i * (len_in - 1)) as f64 / (len_out - 1) as f64;
    let j = (u.floor() as usize).min(len_in - 1);
    (j, u - j as f64)
}

pub(crate) fn interpolate_points(frames: &[Vec<Point3>], len_out: usize) -> Vec<Vec<Point3>> {
    let len_in = frames.len();
    (0..len_out)
        .map(|i| {
            let (j, frac) = sample_position(i, len_in, len_out);
            if frac == 0.0 {
                frames[j].clone()
            } else {
                frames[j]
                    .iter()
                    .zip(&frames[j + 1])
                    .map(|(a, b)| {
                        [
                            a[0] + frac * (b[0] - a[0]),
                            a[1] + frac * (b[1] - a[1]),
                            a[2] + frac * (b[2] - a[2]),
                        ]
                    })
                    .collect()
            }
        })
        .collect()
}

/// Linear resampling to exactly `frames` frames; endpoints are kept exactly.
/// Output frames are re-indexed `0..frames` unless the length already
/// matches, in which case the input is returned unchanged.
pub fn resample_sequence(seq: &GestureSequence, frames: usize) -> Result<GestureSequence, PreprocessError> {
    if frames < 2 {
        return Err(PreprocessError::Config(format!(
            "resample target must be >= 2, got {frames}"
        )));
    }
    if seq.len() < 2 {
        return Err(PreprocessError::TooShort { len: seq.len() });
    }
    if seq.len() == frames {
        return Ok(seq.clone());
    }
    let points: Vec<Vec<Point3>> = seq.frames().iter().map(|f| f.landmarks().to_vec()).collect();
    let layout = seq.layout().clone();
    let out = interpolate_points(&points, frames)
        .into_iter()
        .enumerate()
        .map(|(i, lm)| KeypointFrame::new(i as i64, lm, layout.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(seq.with_frames(out)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keypoint::LayoutSpec;

    fn line_seq(len: usize, f: impl Fn(usize) -> f64) -> GestureSequence {
        let l = LayoutSpec::compact63();
        let frames = (0..len)
            .map(|t| {
                let v = f(t);
                KeypointFrame::new(t as i64 + 100, vec![[v, 2.0 * v, -v]; 63], l.clone()).unwrap()
            })
            .collect();
        GestureSequence::new(frames, "line").unwrap()
    }

    #[test]
    fn identity_at_target_length() {
        let s = line_seq(30, |t| (t as f64).sqrt());
        assert_eq!(resample_sequence(&s, 30).unwrap(), s);
    }

    #[test]
    fn ramp_downsample_is_exact() {
        let s = line_seq(60, |t| t as f64);
        let r = resample_sequence(&s, 30).unwrap();
        assert_eq!(r.len(), 30);
        for (i, f) in r.frames().iter().enumerate() {
            let expected = (i * 59) as f64 / 29.0;
            assert_eq!(f.landmarks()[0][0], expected);
            assert_eq!(f.t(), i as i64);
        }
        assert_eq!(r.frames()[29].landmarks()[0][0], 59.0);
    }

    #[test]
    fn upsampled_line_stays_on_line() {
        let s = line_seq(15, |t| 0.25 + 0.5 * t as f64);
        let r = resample_sequence(&s, 30).unwrap();
        for (i, f) in r.frames().iter().enumerate() {
            let u = (i * 14) as f64 / 29.0;
            let v = 0.25 + 0.5 * u;
            assert!((f.landmarks()[7][0] - v).abs() <= 1e-15, "{i}");
            assert!((f.landmarks()[7][1] - 2.0 * v).abs() <= 1e-15, "{i}");
        }
    }

    #[test]
    fn single_frame_is_too_short() {
        let s = line_seq(1, |_| 0.0);
        assert!(matches!(
            resample_sequence(&s, 30),
            Err(PreprocessError::TooShort { len: 1 })
        ));
    }
}
