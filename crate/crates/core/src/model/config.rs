use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::text::{key_values, parse, parse_list};
use crate::layers::pool::DEFAULT_DELTA;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Output channels of each encoder stage; the first entry is the base width.
    pub stage_widths: Vec<usize>,
    pub num_classes: usize,
    pub aspp_dilations: Vec<usize>,
    pub pool_window: usize,
    pub pool_stride: usize,
    pub delta: f64,
    /// (height, width)
    pub image_size: (usize, usize),
    /// When false the slave encoder is omitted entirely.
    pub fuse_slave: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::with_base_width(64, 4, (256, 256))
    }
}

impl ModelConfig {
    /// Widths `b, 2b, 4b, …` over `stages` stages.
    pub fn with_base_width(base: usize, stages: usize, image_size: (usize, usize)) -> Self {
        Self {
            stage_widths: (0..stages).map(|i| base << i).collect(),
            num_classes: 3,
            aspp_dilations: vec![1, 6, 12, 18],
            pool_window: 2,
            pool_stride: 2,
            delta: DEFAULT_DELTA,
            image_size,
            fuse_slave: true,
        }
    }

    pub fn base_width(&self) -> usize {
        self.stage_widths[0]
    }

    pub fn stages(&self) -> usize {
        self.stage_widths.len()
    }

    /// Spatial size entering each encoder stage, plus the bottleneck size.
    pub fn stage_sizes(&self) -> Vec<(usize, usize)> {
        let mut sizes = vec![self.image_size];
        let (mut h, mut w) = self.image_size;
        for _ in 0..self.stages() {
            h = (h - self.pool_window) / self.pool_stride + 1;
            w = (w - self.pool_window) / self.pool_stride + 1;
            sizes.push((h, w));
        }
        sizes
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be ≥ 2, got {}", self.num_classes));
        }
        if self.stage_widths.is_empty() || self.stage_widths.contains(&0) {
            return bad(format!("stage widths must be non-empty and positive, got {:?}", self.stage_widths));
        }
        if self.aspp_dilations.is_empty() || self.aspp_dilations.contains(&0) {
            return bad(format!("ASPP dilations must be non-empty and positive, got {:?}", self.aspp_dilations));
        }
        let mut sorted = self.aspp_dilations.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.aspp_dilations.len() {
            return bad(format!("ASPP dilations must be distinct, got {:?}", self.aspp_dilations));
        }
        if self.pool_window == 0 || self.pool_stride == 0 || self.pool_window != self.pool_stride {
            return bad(format!(
                "pool window and stride must be equal and ≥ 1, got {}/{}",
                self.pool_window, self.pool_stride
            ));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        let factor = self.pool_stride.pow(self.stages() as u32);
        let (h, w) = self.image_size;
        if h == 0 || w == 0 || h % factor != 0 || w % factor != 0 {
            return bad(format!("image size {h}x{w} is not divisible by {factor} (pool stride ^ stages)"));
        }
        Ok(())
    }

    /// `key = value` lines, parsed back by [`ModelConfig::from_text`].
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "stage_widths = {}", join(&self.stage_widths));
        let _ = writeln!(s, "num_classes = {}", self.num_classes);
        let _ = writeln!(s, "aspp_dilations = {}", join(&self.aspp_dilations));
        let _ = writeln!(s, "pool_window = {}", self.pool_window);
        let _ = writeln!(s, "pool_stride = {}", self.pool_stride);
        let _ = writeln!(s, "delta = {:?}", self.delta);
        let _ = writeln!(s, "image_height = {}", self.image_size.0);
        let _ = writeln!(s, "image_width = {}", self.image_size.1);
        let _ = writeln!(s, "fuse_slave = {}", self.fuse_slave);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in key_values(text)? {
            c.set(&k, &v)?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Sets one field from its text form. Returns an error for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "stage_widths" => self.stage_widths = parse_list(key, value)?,
            "base_width" => {
                let b: usize = parse(key, value)?;
                let n = self.stages();
                self.stage_widths = (0..n).map(|i| b << i).collect();
            }
            "num_classes" => self.num_classes = parse(key, value)?,
            "aspp_dilations" => self.aspp_dilations = parse_list(key, value)?,
            "pool_window" => self.pool_window = parse(key, value)?,
            "pool_stride" => self.pool_stride = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "image_height" => self.image_size.0 = parse(key, value)?,
            "image_width" => self.image_size.1 = parse(key, value)?,
            "fuse_slave" => self.fuse_slave = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = ModelConfig::with_base_width(4, 3, (32, 48));
        c.delta = 0.37;
        c.fuse_slave = false;
        assert_eq!(ModelConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn validation() {
        let ok = ModelConfig::with_base_width(2, 2, (8, 8));
        assert!(ok.validate().is_ok());
        let mut c = ok.clone();
        c.image_size = (10, 8);
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.num_classes = 1;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.aspp_dilations = vec![1, 2, 2, 3];
        assert!(c.validate().is_err());
        let mut c = ok;
        c.stage_widths = vec![2, 0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_key() {
        assert!(ModelConfig::from_text("widths = 3").is_err());
    }

    #[test]
    fn stage_sizes() {
        let c = ModelConfig::with_base_width(4, 4, (64, 32));
        assert_eq!(c.stage_sizes(), vec![(64, 32), (32, 16), (16, 8), (8, 4), (4, 2)]);
    }
}
