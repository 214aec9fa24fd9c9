//! Desk-scale architectures for 10-class 3x32x32 inputs.

use crate::nn::{Layer, NetworkDef, Projection};

fn conv(in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Layer {
    Layer::Conv2d {
        out_ch,
        in_ch,
        kernel,
        stride,
        pad: kernel / 2,
    }
}

/// VGG-style: three convolutions with pooling, global average pool, one fc.
pub fn desk_vgg() -> NetworkDef {
    NetworkDef {
        input_shape: vec![3, 32, 32],
        layers: vec![
            conv(3, 8, 3, 1),
            Layer::Relu,
            Layer::MaxPool { kernel: 2, stride: 2 },
            conv(8, 8, 3, 1),
            Layer::Relu,
            Layer::MaxPool { kernel: 2, stride: 2 },
            conv(8, 24, 1, 1),
            Layer::Relu,
            Layer::AvgPool { kernel: 8, stride: 8 },
            Layer::Fc { inputs: 24, outputs: 10 },
        ],
        classes: 10,
    }
}

/// Residual net: stem, an identity block and a down-sampling block with a
/// projection shortcut.
pub fn desk_resnet() -> NetworkDef {
    NetworkDef {
        input_shape: vec![3, 32, 32],
        layers: vec![
            conv(3, 8, 3, 1),
            Layer::Relu,
            Layer::MaxPool { kernel: 2, stride: 2 },
            Layer::ResidualBegin,
            conv(8, 8, 3, 1),
            Layer::Relu,
            conv(8, 8, 3, 1),
            Layer::ResidualAdd { projection: None },
            Layer::Relu,
            Layer::ResidualBegin,
            conv(8, 16, 3, 2),
            Layer::Relu,
            conv(16, 16, 3, 1),
            Layer::ResidualAdd {
                projection: Some(Projection {
                    in_ch: 8,
                    out_ch: 16,
                    stride: 2,
                }),
            },
            Layer::Relu,
            Layer::AvgPool { kernel: 8, stride: 8 },
            Layer::Fc { inputs: 16, outputs: 10 },
        ],
        classes: 10,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zoo_shapes_check() {
        for net in [desk_vgg(), desk_resnet()] {
            let shapes = net.shapes().unwrap();
            assert_eq!(shapes.last().unwrap(), &vec![10]);
        }
        assert_eq!(desk_vgg().weight_layers(), vec![0, 3, 6, 9]);
        assert_eq!(desk_resnet().weight_layers().len(), 7);
    }
}
