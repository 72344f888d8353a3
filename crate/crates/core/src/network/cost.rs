//! Closed-form parameter and FLOP counts.
//!
//! FLOPs: every linear/convolution contributes `2 * MACs` per output position
//! (bias adds are folded into the MAC count); layer norm, GELU, GRN and the
//! residual add cost one FLOP per element. AdaLN modulation is computed once
//! per sequence, so a conditioned model's count is affine rather than linear
//! in the number of frames.

use super::{ConditioningEncoderSpec, ModelSpec};

/// Latent frames covering `seconds` of audio: `round(seconds * rate)`.
pub fn frames_for(seconds: f64, frame_rate_hz: f64) -> usize {
    (seconds * frame_rate_hz).round().max(0.0) as usize
}

fn linear_params(inp: usize, out: usize) -> usize {
    inp * out + out
}

fn block_params(hidden: usize, expansion: usize, kernel: usize, condition_dim: Option<usize>) -> usize {
    let wide = expansion * hidden;
    let norm = match condition_dim {
        None => 2 * hidden,
        Some(h) => linear_params(h, 2 * hidden),
    };
    (hidden * kernel + hidden) + norm + linear_params(hidden, wide) + 2 * wide + linear_params(wide, hidden)
}

/// Trainable scalars of the predictor plus, if given, the conditioning encoder.
pub fn count_params(spec: &ModelSpec, encoder: Option<&ConditioningEncoderSpec>) -> usize {
    let cond = spec.conditioned.then_some(spec.condition_dim);
    let trunk = spec.num_blocks * block_params(spec.hidden_dim, spec.expansion, spec.dw_kernel, cond);
    let predictor = linear_params(spec.latent_channels_in, spec.hidden_dim)
        + trunk
        + linear_params(spec.hidden_dim, spec.output_channels());
    predictor + encoder.map_or(0, encoder_params)
}

fn encoder_params(e: &ConditioningEncoderSpec) -> usize {
    linear_params(e.input_channels, e.hidden_dim)
        + e.num_blocks * block_params(e.hidden_dim, e.expansion, e.dw_kernel, None)
        + 2 * linear_params(e.hidden_dim, e.output_dim)
}

/// Inference FLOPs of the predictor on `seconds` of audio.
pub fn count_flops(spec: &ModelSpec, seconds: f64, frame_rate_hz: f64) -> f64 {
    let t = frames_for(seconds, frame_rate_hz) as f64;
    let h = spec.hidden_dim as f64;
    let wide = (spec.expansion * spec.hidden_dim) as f64;
    let k = spec.dw_kernel as f64;
    let per_block_frame = 2.0 * h * k // depthwise conv
        + h // layer norm
        + 2.0 * 2.0 * h * wide // two pointwise layers
        + wide // GELU
        + wide // GRN
        + h; // residual add
    let projections = 2.0 * (spec.latent_channels_in as f64) * h + 2.0 * h * spec.output_channels() as f64;
    let per_frame = spec.num_blocks as f64 * per_block_frame + projections;
    let per_sequence = if spec.conditioned {
        spec.num_blocks as f64 * 2.0 * spec.condition_dim as f64 * 2.0 * h
    } else {
        0.0
    };
    per_frame * t + per_sequence
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{ConditionEncoder, LatentPredictor};
    use crate::nn::Params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn analytic_counts_match_constructed_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for spec in [ModelSpec::custom(2, 24, 5), ModelSpec::custom(3, 16, 4).stereo(7)] {
            let m = LatentPredictor::<f32>::new(&spec, &mut rng).unwrap();
            assert_eq!(m.num_params(), count_params(&spec, None));
        }
        let enc = ConditioningEncoderSpec {
            hidden_dim: 20,
            ..ConditioningEncoderSpec::new(4, 7)
        };
        let e = ConditionEncoder::<f32>::new(&enc, &mut rng).unwrap();
        let spec = ModelSpec::custom(1, 16, 4);
        assert_eq!(e.num_params(), count_params(&spec, Some(&enc)) - count_params(&spec, None));
    }

    #[test]
    fn frame_rounding() {
        assert_eq!(frames_for(1.0, 43.0), 43);
        assert_eq!(frames_for(1.4, 44100.0 / 1024.0), 60);
        assert_eq!(frames_for(0.01, 43.0), 0);
    }

    #[test]
    fn unconditioned_flops_are_linear() {
        let spec = ModelSpec::small(64);
        assert_eq!(count_flops(&spec, 2.0, 43.0), 2.0 * count_flops(&spec, 1.0, 43.0));
        let st = ModelSpec::medium(64).stereo(64);
        let f1 = count_flops(&st, 1.0, 43.0);
        let f2 = count_flops(&st, 2.0, 43.0);
        let f3 = count_flops(&st, 3.0, 43.0);
        assert_eq!(f3 - f2, f2 - f1);
    }
}
