//! Parameter, FLOP and size accounting, itemized per layer.
//!
//! Counts are per sample. Parameters are real scalars, so a complex weight
//! counts twice.

use std::fmt::Write as _;

use super::{ConvLayer, Layout, ModelConfig};

/// Per-element FLOP charges used by the counter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlopConstants {
    /// Real FLOPs per multiply-accumulate in each of the four real convolutions.
    pub flops_per_mac: u64,
    /// Adds that combine the four real convolutions, per complex output element.
    pub conv_combine: u64,
    /// Bias adds per complex output element.
    pub conv_bias: u64,
    /// Pool score evaluation per complex input element.
    pub pool_score: u64,
    pub batch_norm: u64,
    pub crelu: u64,
    pub complex_add: u64,
}

pub const FLOPS: FlopConstants = FlopConstants {
    flops_per_mac: 2,
    conv_combine: 2,
    conv_bias: 2,
    pool_score: 8,
    batch_norm: 8,
    crelu: 2,
    complex_add: 2,
};

/// Published figures for the full-size network, shown as annotations only.
pub struct PaperReference {
    pub flops: &'static str,
    pub params_millions: f64,
    pub model_size_mb: f64,
}

pub const PAPER_REFERENCE: PaperReference = PaperReference { flops: "1.82T", params_millions: 73.927, model_size_mb: 280.0 };

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComplexityRow {
    pub name: String,
    pub op: &'static str,
    /// Output (channels, height, width).
    pub output: (usize, usize, usize),
    pub params: u64,
    /// Real scalars of non-trainable state (batch-norm running statistics).
    pub buffers: u64,
    pub flops: u64,
}

/// Real scalars of one complex convolution with bias.
pub fn conv_params(in_ch: usize, out_ch: usize, k: usize, groups: usize) -> u64 {
    2 * (out_ch * (in_ch / groups) * k * k + out_ch) as u64
}

struct Counter {
    rows: Vec<ComplexityRow>,
}

impl Counter {
    fn conv(&mut self, l: &ConvLayer, (h, w): (usize, usize)) {
        let e = (l.out_ch * h * w) as u64;
        let macs = e * l.fan_in() as u64;
        self.rows.push(ComplexityRow {
            name: l.path.clone(),
            op: if l.spec.groups > 1 { "conv_depthwise" } else { "conv" },
            output: (l.out_ch, h, w),
            params: conv_params(l.in_ch, l.out_ch, l.k, l.spec.groups),
            buffers: 0,
            flops: 4 * macs * FLOPS.flops_per_mac + e * (FLOPS.conv_combine + FLOPS.conv_bias),
        });
    }

    fn bn(&mut self, path: &str, ch: usize, (h, w): (usize, usize)) {
        self.rows.push(ComplexityRow {
            name: path.to_string(),
            op: "batch_norm",
            output: (ch, h, w),
            params: 4 * ch as u64,
            buffers: 4 * ch as u64,
            flops: FLOPS.batch_norm * (ch * h * w) as u64,
        });
    }

    fn elementwise(&mut self, name: String, op: &'static str, ch: usize, (h, w): (usize, usize), per: u64) {
        self.rows.push(ComplexityRow { name, op, output: (ch, h, w), params: 0, buffers: 0, flops: per * (ch * h * w) as u64 });
    }

    fn cbr(&mut self, l: &super::CbrLayer, hw: (usize, usize)) {
        self.conv(&l.conv, hw);
        self.bn(&l.bn.path, l.bn.ch, hw);
        self.elementwise(format!("{}.crelu", l.conv.path.trim_end_matches(".conv")), "crelu", l.conv.out_ch, hw, FLOPS.crelu);
    }
}

/// Rows in forward order.
pub fn complexity_rows(config: &ModelConfig) -> Vec<ComplexityRow> {
    let layout = Layout::new(config);
    let sizes = config.stage_sizes();
    let mut c = Counter { rows: Vec::new() };
    let streams: Vec<_> = std::iter::once(&layout.master).chain(layout.slave.as_ref()).collect();
    for (i, &hw) in sizes.iter().take(config.stages()).enumerate() {
        for stream in &streams {
            let st = &stream[i];
            let w = st.pointwise.out_ch;
            c.cbr(&st.cbr, hw);
            c.conv(&st.pointwise, hw);
            let stage = st.pointwise.path.trim_end_matches(".pointwise");
            c.elementwise(format!("{stage}.crelu"), "crelu", w, hw, FLOPS.crelu);
            c.rows.push(ComplexityRow {
                name: format!("{stage}.pool"),
                op: "complex_max_pool",
                output: (w, sizes[i + 1].0, sizes[i + 1].1),
                params: 0,
                buffers: 0,
                flops: FLOPS.pool_score * (w * hw.0 * hw.1) as u64,
            });
        }
        if layout.slave.is_some() {
            let w = layout.master[i].pointwise.out_ch;
            c.elementwise(format!("fusion.stage{i}"), "complex_add", w, sizes[i + 1], FLOPS.complex_add);
        }
    }

    let bottom = sizes[config.stages()];
    for br in &layout.aspp.atrous {
        c.conv(&br.depthwise, bottom);
        c.conv(&br.pointwise, bottom);
        c.bn(&br.bn.path, br.bn.ch, bottom);
        c.elementwise(br.pointwise.path.replace(".pointwise", ".crelu"), "crelu", br.bn.ch, bottom, FLOPS.crelu);
    }
    c.cbr(&layout.aspp.pointwise, bottom);
    c.elementwise("aspp.concat".into(), "concat", layout.aspp.merge.conv.in_ch, bottom, 0);
    c.cbr(&layout.aspp.merge, bottom);

    for (k, l) in layout.decoder.iter().enumerate() {
        let hw = sizes[config.stages() - 1 - k];
        c.elementwise(format!("decoder.stage{k}.unpool"), "complex_max_unpool", l.conv.in_ch, hw, 0);
        c.cbr(l, hw);
    }

    let full = config.image_size;
    let ph = &layout.phase;
    c.cbr(&ph.stem, full);
    for l in &ph.block1 {
        c.cbr(l, full);
    }
    c.elementwise("phase.block1.add".into(), "complex_add", ph.stem.conv.out_ch, full, FLOPS.complex_add);
    c.elementwise("phase.block1.crelu".into(), "crelu", ph.stem.conv.out_ch, full, FLOPS.crelu);
    for l in &ph.block2 {
        c.cbr(l, full);
    }
    c.conv(&ph.proj, full);
    c.bn(&ph.proj_bn.path, ph.proj_bn.ch, full);
    c.elementwise("phase.block2.add".into(), "complex_add", ph.proj.out_ch, full, FLOPS.complex_add);
    c.elementwise("phase.block2.crelu".into(), "crelu", ph.proj.out_ch, full, FLOPS.crelu);

    c.elementwise("head.concat".into(), "concat", layout.head.in_ch, full, 0);
    c.conv(&layout.head, full);
    c.rows
}

pub fn count_params(config: &ModelConfig) -> u64 {
    complexity_rows(config).iter().map(|r| r.params).sum()
}

pub fn count_flops(config: &ModelConfig) -> u64 {
    complexity_rows(config).iter().map(|r| r.flops).sum()
}

/// Parameters plus batch-norm buffers at 8 bytes (f64) per real scalar.
pub fn model_size_bytes(config: &ModelConfig) -> u64 {
    complexity_rows(config).iter().map(|r| 8 * (r.params + r.buffers)).sum()
}

fn human(v: f64) -> String {
    for (div, suffix) in [(1e12, "T"), (1e9, "G"), (1e6, "M"), (1e3, "K")] {
        if v >= div {
            return format!("{:.3}{suffix}", v / div);
        }
    }
    format!("{v}")
}

/// Itemized table, totals and the accounting constants. When
/// `paper_annotations` is set the published figures are appended as
/// labelled reference values.
pub fn report_text(config: &ModelConfig, paper_annotations: bool) -> String {
    let rows = complexity_rows(config);
    let mut s = String::new();
    let _ = writeln!(s, "{:<36} {:<20} {:>18} {:>12} {:>10} {:>16}", "layer", "op", "output (CxHxW)", "params", "buffers", "flops");
    for r in &rows {
        let out = format!("{}x{}x{}", r.output.0, r.output.1, r.output.2);
        let _ = writeln!(s, "{:<36} {:<20} {:>18} {:>12} {:>10} {:>16}", r.name, r.op, out, r.params, r.buffers, r.flops);
    }
    let params: u64 = rows.iter().map(|r| r.params).sum();
    let buffers: u64 = rows.iter().map(|r| r.buffers).sum();
    let flops: u64 = rows.iter().map(|r| r.flops).sum();
    let size = 8 * (params + buffers);
    let _ = writeln!(s);
    let _ = writeln!(s, "total_params = {params}");
    let _ = writeln!(s, "total_buffers = {buffers}");
    let _ = writeln!(s, "total_flops = {flops}");
    let _ = writeln!(s, "model_size_bytes = {size}");
    let _ = writeln!(
        s,
        "summary: {} params, {} FLOPs, {:.3} MB",
        human(params as f64),
        human(flops as f64),
        size as f64 / (1024.0 * 1024.0)
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "accounting (per sample, per complex element unless noted):");
    let _ = writeln!(s, "  conv: 4 real correlations x {} FLOPs per MAC + {} combine adds + {} bias adds per output", FLOPS.flops_per_mac, FLOPS.conv_combine, FLOPS.conv_bias);
    let _ = writeln!(s, "  complex_max_pool: {} FLOPs per input element (score)", FLOPS.pool_score);
    let _ = writeln!(s, "  batch_norm: {} FLOPs; real and imaginary parts normalized independently", FLOPS.batch_norm);
    let _ = writeln!(s, "  crelu: {}; complex_add: {}; unpool and concat: 0", FLOPS.crelu, FLOPS.complex_add);
    let _ = writeln!(s, "  params: real scalars (complex weight = 2); model size: (params + buffers) x 8 bytes");
    if paper_annotations {
        let _ = writeln!(s);
        let _ = writeln!(s, "paper-reported FLOPs = {} (reference only, not computed)", PAPER_REFERENCE.flops);
        let _ = writeln!(s, "paper-reported params = {}M (reference only, not computed)", PAPER_REFERENCE.params_millions);
        let _ = writeln!(s, "paper-reported model size = {} MB (reference only, not computed)", PAPER_REFERENCE.model_size_mb);
    }
    s
}
