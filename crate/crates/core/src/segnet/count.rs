//! Closed-form parameter and mult-add counts for one input item.
//!
//! Conventions: a convolution costs `output elements * Cin * prod(k)`; a
//! transposed convolution costs the same as the correlation it is the
//! adjoint of (`input elements * Cout * prod(k)`); interpolation and grid
//! sampling cost `output elements * 2^g * (g + 1)`; coordinate generation
//! costs two multiplies per coordinate. Pooling, rectifiers, nearest
//! upsampling and additions are free.

use std::ops::AddAssign;

use crate::error::Result;

use super::{UNetConfig, UpChannels, Upsampler};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Cost {
    pub params: u64,
    pub mult_adds: u64,
}

impl AddAssign for Cost {
    fn add_assign(&mut self, o: Cost) {
        self.params += o.params;
        self.mult_adds += o.mult_adds;
    }
}

fn conv(cin: u64, cout: u64, k: u64, g: u32, out_vol: u64, bias: bool) -> Cost {
    let taps = k.pow(g);
    Cost {
        params: cout * cin * taps + if bias { cout } else { 0 },
        mult_adds: out_vol * cout * cin * taps,
    }
}

fn tconv(cin: u64, cout: u64, k: u64, g: u32, in_vol: u64) -> Cost {
    let taps = k.pow(g);
    Cost {
        params: cin * cout * taps + cout,
        mult_adds: in_vol * cin * cout * taps,
    }
}

fn sample(channels: u64, g: u32, out_vol: u64) -> Cost {
    Cost {
        params: 0,
        mult_adds: out_vol * channels * (1u64 << g) * (g as u64 + 1),
    }
}

/// Cost of the upsampler of one decoder level mapping `n` to `m` channels
/// from an input of `in_vol` positions.
fn upsampler(up: &Upsampler, n: u64, m: u64, g: u32, in_vol: u64) -> Cost {
    let out_vol = in_vol << g;
    match up {
        Upsampler::Nearest => Cost::default(),
        Upsampler::LinearInterp => sample(n, g, out_vol),
        Upsampler::TransposedConv => tconv(n, m, 2, g, in_vol),
        Upsampler::DtcOverLinear(..) | Upsampler::DtcOverTransposed(..) => {
            let mut c = upsampler(&up.base_variant(), n, m, g, in_vol);
            c += conv(n, m, 1, g, in_vol, false);
            c += tconv(n, 2 * g as u64, 4, g, in_vol);
            c += Cost {
                params: 0,
                mult_adds: 2 * g as u64 * out_vol,
            };
            c += sample(m, g, out_vol);
            c
        }
    }
}

/// Parameters and mult-adds of the network on one `spatial` input.
pub fn count_params_flops(cfg: &UNetConfig, spatial: &[usize]) -> Result<Cost> {
    cfg.validate()?;
    cfg.validate_input(spatial)?;
    let g = cfg.spatial_rank as u32;
    let vol = |l: usize| spatial.iter().map(|&s| (s >> l) as u64).product::<u64>();
    let ch = |l: usize| cfg.level_channels(l) as u64;
    let mut total = Cost::default();
    for l in 0..cfg.depth {
        let cin = if l == 0 { cfg.in_channels as u64 } else { ch(l - 1) };
        total += conv(cin, ch(l), 3, g, vol(l), true);
        total += conv(ch(l), ch(l), 3, g, vol(l), true);
    }
    for l in 0..cfg.depth - 1 {
        let m = match cfg.up_channels() {
            UpChannels::Same => ch(l + 1),
            UpChannels::Half => ch(l),
        };
        total += upsampler(&cfg.upsampler, ch(l + 1), m, g, vol(l + 1));
        total += conv(m + ch(l), ch(l), 3, g, vol(l), true);
        total += conv(ch(l), ch(l), 3, g, vol(l), true);
    }
    total += conv(ch(0), cfg.out_channels as u64, 1, g, vol(0), true);
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::super::build_unet;
    use super::*;
    use crate::dtc::{AblationSwitches, ReceptiveField};

    #[test]
    fn pointwise_conv_example() {
        let c = conv(2, 3, 1, 2, 16, true);
        assert_eq!(c, Cost { params: 9, mult_adds: 96 });
    }

    #[test]
    fn params_match_built_network() {
        let (r, s) = (ReceptiveField::default(), AblationSwitches::FULL);
        for g in [2, 3] {
            for up in [
                Upsampler::Nearest,
                Upsampler::LinearInterp,
                Upsampler::TransposedConv,
                Upsampler::DtcOverLinear(r, s),
                Upsampler::DtcOverTransposed(r, s),
            ] {
                let cfg = UNetConfig::new(g, up);
                let built = build_unet::<f32>(&cfg, 0).unwrap().num_params() as u64;
                let counted = count_params_flops(&cfg, &vec![16; g]).unwrap().params;
                assert_eq!(built, counted, "{up} rank {g}");
            }
        }
    }
}
