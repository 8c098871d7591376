//! Datasets on disk: layout, loading, edge derivation, statistics,
//! synthetic generation and augmentation.
//!
//! A split folder holds
//!
//! ```text
//! <split>/Images/<name>.{png,jpg}
//! <split>/GT_Object/<name>.png     masks, strictly {0, 255}
//! <split>/GT_Edge/<name>.png       optional; derived from the mask if absent
//! <split>/attributes.csv           optional; "filename,attributes"
//! ```

pub mod augment;
pub mod edge;
pub mod index;
pub mod io;
pub mod stats;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TvnetError};
use crate::map::Map;
use crate::tensor::Tensor;

pub use augment::{augment, AugmentConfig};
pub use edge::derive_edge;
pub use index::{load_index, load_sample, load_samples, DatasetIndex, Layout, Record, Split};
pub use stats::{dataset_stats, StatsReport};
pub use synth::{synth_generate, Ledger, SynthConfig};

/// Challenge attributes an image may carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Attribute {
    /// Multiple objects: at least two.
    MO,
    /// Small objects: mean object area at most 0.1% of the image.
    SO,
    /// Out of view: an object is clipped by the border.
    OV,
    /// Complex shape, e.g. flagella.
    CS,
    /// Occlusion by surrounding cells.
    OC,
    /// Out of focus.
    OF,
    /// Squeezed, strongly deformed body.
    SQ,
}

impl Attribute {
    pub const ALL: [Attribute; 7] = [
        Attribute::MO,
        Attribute::SO,
        Attribute::OV,
        Attribute::CS,
        Attribute::OC,
        Attribute::OF,
        Attribute::SQ,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Attribute::MO => "MO",
            Attribute::SO => "SO",
            Attribute::OV => "OV",
            Attribute::CS => "CS",
            Attribute::OC => "OC",
            Attribute::OF => "OF",
            Attribute::SQ => "SQ",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Attribute {
    type Err = TvnetError;

    fn from_str(s: &str) -> Result<Self> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.code() == s.trim())
            .ok_or_else(|| TvnetError::Data(format!("unknown attribute code {s:?}")))
    }
}

/// Parses a `;`-separated code list; the empty string means no attributes.
pub fn parse_attributes(s: &str) -> Result<Vec<Attribute>> {
    let mut out: Vec<Attribute> = s
        .split(';')
        .filter(|c| !c.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

pub fn format_attributes(attrs: &[Attribute]) -> String {
    attrs.iter().map(|a| a.code()).collect::<Vec<_>>().join(";")
}

/// One training or test example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    /// `[1, 3, H, W]` in `[0, 1]`.
    pub image: Tensor,
    /// Binary object mask.
    pub mask: Map,
    /// Binary edge map.
    pub edge: Map,
    pub attributes: Vec<Attribute>,
}

impl Sample {
    pub fn new(
        name: String,
        image: Tensor,
        mask: Map,
        edge: Map,
        attributes: Vec<Attribute>,
    ) -> Result<Self> {
        let (h, w) = image.spatial();
        if image.shape()[..2] != [1, 3] {
            return Err(TvnetError::Shape(format!(
                "image must be [1, 3, H, W], got {:?}",
                image.shape()
            )));
        }
        for (what, m) in [("mask", &mask), ("edge", &edge)] {
            if m.height() != h || m.width() != w {
                return Err(TvnetError::Shape(format!(
                    "{name}: {what} is {}x{}, image is {h}x{w}",
                    m.height(),
                    m.width()
                )));
            }
            if !m.is_binary() {
                return Err(TvnetError::Data(format!("{name}: {what} is not binary")));
            }
        }
        Ok(Sample {
            name,
            image,
            mask,
            edge,
            attributes,
        })
    }

    pub fn is_background(&self) -> bool {
        self.mask.count_nonzero() == 0
    }

    pub fn size(&self) -> (usize, usize) {
        self.image.spatial()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attribute_codes_round_trip() {
        let attrs = parse_attributes("SQ;MO; CS").unwrap();
        assert_eq!(attrs, vec![Attribute::MO, Attribute::CS, Attribute::SQ]);
        assert_eq!(format_attributes(&attrs), "MO;CS;SQ");
        assert!(parse_attributes("").unwrap().is_empty());
        assert!(parse_attributes("MO;XX").is_err());
    }
}
