use crate::engine::{Mode, Tape, Tensor, Var};
use crate::error::{contract, Result};

use super::config::ModelConfig;
use super::layers::{AsfebBlock, Conv, Ctx, DcrBlock, GuidedHead, UpConv};
use super::params::{ParamBuilder, ParamSet};

/// Name and shape of one stage output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TraceEntry {
    fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
        }
    }
}

/// Result of [`AdNet::forward`].
pub struct Outputs {
    /// Final probability map, `N×S×S×1`.
    pub output: Var,
    /// Guided-head maps, deepest decoder block first; empty when disabled.
    pub guided: Vec<Var>,
    pub trace: Vec<TraceEntry>,
}

#[derive(Clone, Debug)]
struct DecoderBlock {
    up: UpConv,
    asfeb: Option<AsfebBlock>,
    dcr: DcrBlock,
    guided: Option<GuidedHead>,
}

#[derive(Clone, Debug)]
pub struct AdNet {
    config: ModelConfig,
    params: ParamSet,
    encoder: Vec<DcrBlock>,
    bottleneck: DcrBlock,
    decoder: Vec<DecoderBlock>,
    head: Conv,
}

impl AdNet {
    /// Builds the network with parameters drawn from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let widths = config.widths()?;
        let mut b = ParamBuilder::new(config.seed);
        let mut cin = config.in_channels;
        let mut encoder = Vec::with_capacity(4);
        for (i, (&w, &d)) in widths[..4].iter().zip(&config.encoder_dilations).enumerate() {
            encoder.push(DcrBlock::new(&mut b, &format!("encoder.stage{}", i + 1), cin, w, d));
            cin = w;
        }
        let bottleneck = DcrBlock::new(&mut b, "bottleneck", cin, widths[4], config.bottleneck_dilation);
        cin = widths[4];
        let mut decoder = Vec::with_capacity(4);
        for (j, &d) in config.decoder_dilations().iter().enumerate() {
            let name = format!("decoder.block{}", j + 1);
            let w = widths[3 - j];
            let up = UpConv::new(&mut b, &format!("{name}.up"), cin, w);
            let asfeb = config
                .asfeb
                .then(|| AsfebBlock::new(&mut b, &format!("{name}.asfeb"), w));
            let dcr = DcrBlock::new(&mut b, &format!("{name}.dcr"), 2 * w, w, d);
            let guided = config
                .guided
                .then(|| GuidedHead::new(&mut b, &format!("{name}.guided"), w));
            decoder.push(DecoderBlock { up, asfeb, dcr, guided });
            cin = w;
        }
        let head = Conv::new(&mut b, "head", 1, cin, 1, 1);
        Ok(Self {
            config,
            params: b.finish(),
            encoder,
            bottleneck,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Runs the network on `x` (`N×S×S×C_in`) with learnables bound as
    /// `vars` (see [`ParamSet::bind`]). Train mode updates BN running stats.
    pub fn forward(&mut self, tape: &mut Tape, vars: &[Var], x: Var, mode: Mode) -> Result<Outputs> {
        let s = self.config.input_size;
        let shape = tape.shape(x).to_vec();
        contract!(
            shape.len() == 4 && shape[1] == s && shape[2] == s && shape[3] == self.config.in_channels,
            "model expects N×{s}×{s}×{} input, got {shape:?}",
            self.config.in_channels
        );
        contract!(vars.len() == self.params.len(), "expected {} bound parameters, got {}", self.params.len(), vars.len());
        let bn = self.config.bn_options(mode);
        let leaky_slope = self.config.leaky_slope;
        let mut ctx = Ctx {
            tape,
            vars,
            buffers: self.params.buffers_mut(),
            bn,
            leaky_slope,
        };
        let mut trace = vec![TraceEntry::new("input", &shape)];
        let mut skips = Vec::with_capacity(4);
        let mut h = x;
        for (i, block) in self.encoder.iter().enumerate() {
            let skip = block.forward(&mut ctx, h)?;
            trace.push(TraceEntry::new(format!("encoder.stage{}", i + 1), ctx.tape.shape(skip)));
            h = ctx.tape.max_pool2x2(skip)?;
            skips.push(skip);
        }
        h = self.bottleneck.forward(&mut ctx, h)?;
        trace.push(TraceEntry::new("bottleneck", ctx.tape.shape(h)));
        let mut guided = Vec::new();
        for (j, block) in self.decoder.iter().enumerate() {
            let up = block.up.forward(&mut ctx, h)?;
            let skip = skips[3 - j];
            let skip = match &block.asfeb {
                Some(a) => a.forward(&mut ctx, skip)?,
                None => skip,
            };
            let cat = ctx.tape.concat_channels(up, skip)?;
            h = block.dcr.forward(&mut ctx, cat)?;
            trace.push(TraceEntry::new(format!("decoder.block{}", j + 1), ctx.tape.shape(h)));
            if let Some(head) = &block.guided {
                let g = head.forward(&mut ctx, h, s)?;
                trace.push(TraceEntry::new(format!("decoder.block{}.guided", j + 1), ctx.tape.shape(g)));
                guided.push(g);
            }
        }
        let logits = self.head.forward(&mut ctx, h)?;
        let output = ctx.tape.sigmoid(logits)?;
        trace.push(TraceEntry::new("output", ctx.tape.shape(output)));
        Ok(Outputs { output, guided, trace })
    }

    /// Inference-mode probability map for a batch of images.
    pub fn predict(&mut self, images: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::no_grad();
        let vars = self.params.bind(&mut tape, false);
        let x = tape.constant(images.clone());
        let out = self.forward(&mut tape, &vars, x, Mode::Infer)?;
        Ok(tape.value(out.output).clone())
    }

    /// The ASFEB block of decoder block `j` (1 = deepest), if present.
    pub fn asfeb(&self, j: usize) -> Option<&AsfebBlock> {
        self.decoder.get(j.checked_sub(1)?)?.asfeb.as_ref()
    }
}

fn conv_params(k: usize, cin: usize, cout: usize) -> usize {
    k * k * cin * cout + cout
}

fn bn_params(c: usize) -> usize {
    2 * c
}

fn dcr_params(cin: usize, cout: usize) -> usize {
    conv_params(3, cin, cout) + conv_params(3, cout, cout) + conv_params(1, cin, cout) + 3 * bn_params(cout)
}

fn asfeb_params(c: usize) -> usize {
    conv_params(3, c, c) + conv_params(3, 2 * c, c) + conv_params(3, c, c) + 3 * bn_params(c)
}

/// Exact number of scalar learnables of the network `config` describes,
/// computed in closed form without allocating it.
pub fn parameter_count(config: &ModelConfig) -> Result<usize> {
    config.validate()?;
    let w = config.widths()?;
    let mut total = 0;
    let mut cin = config.in_channels;
    for &c in &w {
        total += dcr_params(cin, c);
        cin = c;
    }
    for j in 0..4 {
        let c = w[3 - j];
        total += 4 * cin * c + c;
        if config.asfeb {
            total += asfeb_params(c);
        }
        total += dcr_params(2 * c, c);
        if config.guided {
            total += conv_params(1, c, 1);
        }
        cin = c;
    }
    Ok(total + conv_params(1, cin, 1))
}

/// Stage shapes for a batch of one, derived from the config alone.
pub fn shape_trace(config: &ModelConfig) -> Result<Vec<TraceEntry>> {
    config.validate()?;
    let w = config.widths()?;
    let s = config.input_size;
    let mut out = vec![TraceEntry::new("input", &[1, s, s, config.in_channels])];
    for (i, &c) in w[..4].iter().enumerate() {
        let e = s >> i;
        out.push(TraceEntry::new(format!("encoder.stage{}", i + 1), &[1, e, e, c]));
    }
    out.push(TraceEntry::new("bottleneck", &[1, s / 16, s / 16, w[4]]));
    for j in 0..4 {
        let e = s >> (3 - j);
        out.push(TraceEntry::new(format!("decoder.block{}", j + 1), &[1, e, e, w[3 - j]]));
        if config.guided {
            out.push(TraceEntry::new(format!("decoder.block{}.guided", j + 1), &[1, s, s, 1]));
        }
    }
    out.push(TraceEntry::new("output", &[1, s, s, 1]));
    Ok(out)
}

/// Multiply-accumulate count of one forward pass on a single image,
/// counting convolutions only (including the ASFEB gate on its 1×1 map).
pub fn forward_macs(config: &ModelConfig) -> Result<u64> {
    config.validate()?;
    let w = config.widths()?;
    let conv = |e: usize, k: usize, cin: usize, cout: usize| (e * e * k * k * cin * cout) as u64;
    let dcr = |e: usize, cin: usize, cout: usize| conv(e, 3, cin, cout) + conv(e, 3, cout, cout) + conv(e, 1, cin, cout);
    let s = config.input_size;
    let mut total = 0u64;
    let mut cin = config.in_channels;
    for (i, &c) in w.iter().enumerate() {
        total += dcr(s >> i, cin, c);
        cin = c;
    }
    for j in 0..4 {
        let c = w[3 - j];
        let e = s >> (3 - j);
        total += conv(e / 2, 2, cin, c);
        if config.asfeb {
            total += conv(e, 3, c, c) + conv(e, 3, 2 * c, c) + conv(1, 1, c, c);
        }
        total += dcr(e, 2 * c, c);
        if config.guided {
            total += conv(e, 1, c, 1);
        }
        cin = c;
    }
    Ok(total + conv(s, 1, cin, 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(asfeb: bool, guided: bool) -> ModelConfig {
        ModelConfig {
            input_size: 16,
            width_multiplier: 0.25,
            asfeb,
            guided,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn closed_form_count_matches_allocation() {
        for (a, g) in [(false, false), (true, false), (false, true), (true, true)] {
            let cfg = tiny(a, g);
            let net = AdNet::new(cfg.clone()).unwrap();
            assert_eq!(parameter_count(&cfg).unwrap(), net.params().numel());
            assert_eq!(net.params().flatten().len(), net.params().numel());
        }
        let cfg = ModelConfig::default();
        assert_eq!(parameter_count(&cfg).unwrap(), AdNet::new(cfg).unwrap().params().numel());
    }

    #[test]
    fn runtime_trace_matches_analytic_trace() {
        let cfg = tiny(true, true);
        let mut net = AdNet::new(cfg.clone()).unwrap();
        let mut tape = Tape::no_grad();
        let vars = net.params().bind(&mut tape, false);
        let x = tape.constant(Tensor::full(&[1, 16, 16, 3], 0.5));
        let out = net.forward(&mut tape, &vars, x, Mode::Infer).unwrap();
        assert_eq!(out.trace, shape_trace(&cfg).unwrap());
        assert_eq!(out.guided.len(), 4);
    }

    #[test]
    fn wrong_input_extent_is_a_contract_violation() {
        let mut net = AdNet::new(tiny(true, true)).unwrap();
        assert!(net.predict(&Tensor::zeros(&[1, 32, 32, 3])).is_err());
    }

    #[test]
    fn parameter_names_are_hierarchical() {
        let net = AdNet::new(tiny(true, true)).unwrap();
        let names = net.params().names();
        for expected in [
            "encoder.stage3.conv_a.kernel",
            "bottleneck.bn_b.gamma",
            "decoder.block1.up.kernel",
            "decoder.block4.asfeb.conv_gate.bias",
            "decoder.block2.guided.kernel",
            "head.kernel",
        ] {
            assert!(names.iter().any(|n| n == expected), "missing {expected}");
        }
    }
}
