//! Architecture presets and the compact text form used in config files,
//! e.g. `conv3x16s2,relu,pool2,conv3x32,relu,gap,dense2,softmax`.

use super::LayerConfig;
use crate::error::{Error, Result};

/// The full-width first-stage stack: four 3×3 conv blocks (16, 32, 64, 64
/// filters) each followed by 2×2 max pooling, then global average pooling
/// and a dense classifier.
pub fn first_cnn_reference(categories: usize) -> Vec<LayerConfig> {
    vec![
        LayerConfig::conv(3, 16),
        LayerConfig::Relu,
        LayerConfig::pool(2),
        LayerConfig::conv(3, 32),
        LayerConfig::Relu,
        LayerConfig::pool(2),
        LayerConfig::conv(3, 64),
        LayerConfig::Relu,
        LayerConfig::pool(2),
        LayerConfig::conv(3, 64),
        LayerConfig::Relu,
        LayerConfig::pool(2),
        LayerConfig::GlobalAvgPool,
        LayerConfig::Dense { units: categories },
        LayerConfig::Softmax,
    ]
}

/// Cheaper first-stage stack used by the desk profile: a stride-2 entry
/// convolution of width `w`, then `2w` and `4w` blocks with one pooling
/// step. The receptive field stays near one nucleus row (17 px), so the
/// classifier keys on local texture.
pub fn first_cnn(width: usize, categories: usize) -> Vec<LayerConfig> {
    vec![
        LayerConfig::Conv2d {
            kernel: 3,
            filters: width,
            stride: 2,
        },
        LayerConfig::Relu,
        LayerConfig::conv(3, 2 * width),
        LayerConfig::Relu,
        LayerConfig::pool(2),
        LayerConfig::conv(3, 4 * width),
        LayerConfig::Relu,
        LayerConfig::GlobalAvgPool,
        LayerConfig::Dense { units: categories },
        LayerConfig::Softmax,
    ]
}

/// Three 3×3 convolutions (32, 32, 16) over folded feature maps.
pub fn second_cnn(categories: usize) -> Vec<LayerConfig> {
    vec![
        LayerConfig::conv(3, 32),
        LayerConfig::Relu,
        LayerConfig::conv(3, 32),
        LayerConfig::Relu,
        LayerConfig::conv(3, 16),
        LayerConfig::Relu,
        LayerConfig::GlobalAvgPool,
        LayerConfig::Dense { units: categories },
        LayerConfig::Softmax,
    ]
}

fn parse_token(tok: &str) -> Result<LayerConfig> {
    let bad = || Error::Param(format!("unrecognized layer token {tok:?}"));
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
    Ok(match tok {
        "relu" => LayerConfig::Relu,
        "gap" => LayerConfig::GlobalAvgPool,
        "softmax" => LayerConfig::Softmax,
        _ if tok.starts_with("conv") => {
            let rest = &tok[4..];
            let (k, rest) = rest.split_once('x').ok_or_else(bad)?;
            let (f, s) = match rest.split_once('s') {
                Some((f, s)) => (f, num(s)?),
                None => (rest, 1),
            };
            LayerConfig::Conv2d {
                kernel: num(k)?,
                filters: num(f)?,
                stride: s,
            }
        }
        _ if tok.starts_with("pool") => {
            let rest = &tok[4..];
            let (w, s) = match rest.split_once('s') {
                Some((w, s)) => (num(w)?, num(s)?),
                None => (num(rest)?, num(rest)?),
            };
            LayerConfig::MaxPool2d { window: w, stride: s }
        }
        _ if tok.starts_with("dense") => LayerConfig::Dense {
            units: num(&tok[5..])?,
        },
        _ => return Err(bad()),
    })
}

pub fn parse_layers(text: &str) -> Result<Vec<LayerConfig>> {
    text.split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(parse_token)
        .collect()
}

pub fn format_layers(layers: &[LayerConfig]) -> String {
    layers
        .iter()
        .map(|l| match *l {
            LayerConfig::Conv2d {
                kernel,
                filters,
                stride: 1,
            } => format!("conv{kernel}x{filters}"),
            LayerConfig::Conv2d {
                kernel,
                filters,
                stride,
            } => format!("conv{kernel}x{filters}s{stride}"),
            LayerConfig::MaxPool2d { window, stride } if window == stride => format!("pool{window}"),
            LayerConfig::MaxPool2d { window, stride } => format!("pool{window}s{stride}"),
            LayerConfig::Relu => "relu".into(),
            LayerConfig::GlobalAvgPool => "gap".into(),
            LayerConfig::Dense { units } => format!("dense{units}"),
            LayerConfig::Softmax => "softmax".into(),
        })
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_form_round_trips() {
        for layers in [first_cnn_reference(3), first_cnn(8, 2), second_cnn(2)] {
            assert_eq!(parse_layers(&format_layers(&layers)).unwrap(), layers);
        }
        assert_eq!(
            parse_layers("conv5x7s3, pool3s2").unwrap(),
            vec![
                LayerConfig::Conv2d { kernel: 5, filters: 7, stride: 3 },
                LayerConfig::MaxPool2d { window: 3, stride: 2 }
            ]
        );
        assert!(parse_layers("conv3,relu").is_err());
        assert!(parse_layers("lstm").is_err());
    }
}
