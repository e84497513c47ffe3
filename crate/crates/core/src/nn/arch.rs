//! Desk-scale architectures used by the experiments.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::network::{Dims, Network, NetworkBuilder};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    /// Two 3×3 conv layers (8 and 16 filters), each followed by ReLU and
    /// 2×2 max pooling, then a dense classifier.
    ToyCnn,
    /// Six 3×3 conv layers in three VGG-style stages of widths 8, 16, 32.
    VggMini,
    /// A stem conv, three residual blocks with identity shortcuts and a
    /// transition conv between the 8- and 16-wide stages.
    ResnetMini,
}

impl Arch {
    pub fn build(self, input: Dims, classes: usize, seed: u64) -> Result<Network> {
        let mut b = NetworkBuilder::new(input, seed);
        match self {
            Arch::ToyCnn => {
                b.conv(3, 8)?.relu().maxpool();
                b.conv(3, 16)?.relu().maxpool();
            }
            Arch::VggMini => {
                for width in [8, 16, 32] {
                    b.conv(3, width)?.relu();
                    b.conv(3, width)?.relu().maxpool();
                }
            }
            Arch::ResnetMini => {
                b.conv(3, 8)?.relu();
                residual_block(&mut b, 8)?;
                residual_block(&mut b, 8)?;
                b.maxpool();
                b.conv(3, 16)?.relu();
                residual_block(&mut b, 16)?;
                b.maxpool();
            }
        }
        b.flatten().dense(classes)?;
        b.finish()
    }
}

fn residual_block(b: &mut NetworkBuilder, width: usize) -> Result<()> {
    let shortcut = b.node();
    b.conv(3, width)?.relu();
    b.conv(3, width)?.residual_add(shortcut).relu();
    Ok(())
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::ToyCnn => "toycnn",
            Arch::VggMini => "vgg-mini",
            Arch::ResnetMini => "resnet-mini",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toycnn" => Ok(Arch::ToyCnn),
            "vgg-mini" => Ok(Arch::VggMini),
            "resnet-mini" => Ok(Arch::ResnetMini),
            other => Err(Error::InvalidArgument(format!("unknown arch '{other}'"))),
        }
    }
}
