//! Flat `key = value` scenario files with dotted keys.
//!
//! ```text
//! # star network, three agents
//! network.topology = star_like
//! network.m = 3
//! tuner.kind = ht1
//! tuner.mu = 1e-4
//! reference.kind = square
//! sim.T = 200
//! ```
//!
//! Lists are whitespace or comma separated. Polynomials are given by their
//! coefficients in descending powers. Unknown keys are rejected, and every key
//! except `network.edge` may appear at most once.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use leadsync::lti::{Polynomial, TransferFunction};
use leadsync::matching::FilterSpec;
use leadsync::network::{build_topology, parse_edge_list, Topology, WeightPolicy};
use leadsync::sim::{
    benchmark_leader, benchmark_plants, DisturbanceSpec, InitialConditions, Mode, ReferenceSpec, ScenarioConfig,
    DEFAULT_HORIZON, DEFAULT_STEP, DEFAULT_STRIDE,
};
use leadsync::tuners::{MuSetting, QScaling, TunerConfig, TunerKind};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct TfSpec {
    pub gain: f64,
    /// Descending coefficients.
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

impl TfSpec {
    fn from_tf(tf: &TransferFunction) -> Self {
        let desc = |p: &Polynomial| p.coeffs().iter().rev().copied().collect();
        TfSpec { gain: tf.gain(), num: desc(tf.num()), den: desc(tf.den()) }
    }

    fn build(&self, what: &str) -> Result<TransferFunction, CliError> {
        TransferFunction::new(self.gain, Polynomial::from_descending(&self.num), Polynomial::from_descending(&self.den))
            .map_err(|e| CliError::Validation(format!("{what}: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlantSource {
    /// The benchmark family `(s + k + 4) / ((s - 1 - k)(s - 2 - k))`.
    Family,
    Explicit(Vec<TfSpec>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub topology: Topology,
    pub m: usize,
    pub seed: u64,
    pub leader_share: f64,
    pub parent_share: f64,
    pub levels: Option<Vec<usize>>,
    /// Edge-list lines for custom networks.
    pub edges: Vec<String>,
    pub plants: PlantSource,
    pub leader: TfSpec,
    /// Filter polynomial `d_lambda`, descending; defaults to the leader numerator.
    pub filter: Option<Vec<f64>>,
    pub tuner: TunerConfig,
    pub reference: ReferenceSpec,
    /// One entry (shared) or one per agent.
    pub nu_u: Vec<f64>,
    pub nu_y: Vec<f64>,
    pub horizon: f64,
    pub step: f64,
    pub stride: usize,
    pub mode: Mode,
    pub init_plant: Vec<f64>,
    pub init_leader: Vec<f64>,
    pub init_theta: Vec<f64>,
    pub sweep_topologies: Option<Vec<Topology>>,
    pub sweep_m: Option<Vec<usize>>,
    pub sweep_tuners: Option<Vec<TunerKind>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let policy = WeightPolicy::default();
        RunConfig {
            topology: Topology::StarLike,
            m: 3,
            seed: policy.seed,
            leader_share: policy.leader_share,
            parent_share: policy.parent_share,
            levels: None,
            edges: Vec::new(),
            plants: PlantSource::Family,
            leader: TfSpec::from_tf(&benchmark_leader()),
            filter: None,
            tuner: TunerConfig::default(),
            reference: ReferenceSpec::default(),
            nu_u: vec![0.0],
            nu_y: vec![0.0],
            horizon: DEFAULT_HORIZON,
            step: DEFAULT_STEP,
            stride: DEFAULT_STRIDE,
            mode: Mode::Full,
            init_plant: Vec::new(),
            init_leader: Vec::new(),
            init_theta: Vec::new(),
            sweep_topologies: None,
            sweep_m: None,
            sweep_tuners: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.trim().parse::<T>().map_err(|_| format!("invalid number `{}`", v.trim()))
}

fn parse_list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>, String> {
    v.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).map(parse_num).collect()
}

fn parse_named<T: std::str::FromStr<Err = String>>(v: &str) -> Result<Vec<T>, String> {
    v.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).map(str::parse).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

/// Pending reference fields; the variant is fixed once the file is read.
#[derive(Default)]
struct RefDraft {
    kind: Option<String>,
    amplitude: Option<f64>,
    period: Option<f64>,
    terms: Option<Vec<(f64, f64)>>,
}

#[derive(Default)]
struct TfDraft {
    gain: Option<f64>,
    num: Option<Vec<f64>>,
    den: Option<Vec<f64>>,
}

impl TfDraft {
    fn finish(self, fallback: Option<&TfSpec>, what: &str) -> Result<TfSpec, String> {
        let pick = |v: Option<Vec<f64>>, f: Option<&Vec<f64>>, key: &str| {
            v.or_else(|| f.cloned()).ok_or_else(|| format!("{what}.{key} is required"))
        };
        Ok(TfSpec {
            gain: self.gain.or(fallback.map(|f| f.gain)).ok_or_else(|| format!("{what}.gain is required"))?,
            num: pick(self.num, fallback.map(|f| &f.num), "num")?,
            den: pick(self.den, fallback.map(|f| &f.den), "den")?,
        })
    }
}

impl RunConfig {
    /// Parses the dotted-key format. Errors carry the line number.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        let mut reference = RefDraft::default();
        let mut leader = TfDraft::default();
        let mut plants: Vec<TfDraft> = Vec::new();
        let mut plant_source: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| CliError::Parse(format!("line {}: {msg}", idx + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if key != "network.edge" && !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            let res: Result<(), String> = (|| {
                match key {
                    "network.topology" => cfg.topology = value.parse()?,
                    "network.m" => cfg.m = parse_num(value)?,
                    "network.seed" => cfg.seed = parse_num(value)?,
                    "network.leader_share" => cfg.leader_share = parse_num(value)?,
                    "network.parent_share" => cfg.parent_share = parse_num(value)?,
                    "network.levels" => cfg.levels = Some(parse_list(value)?),
                    "network.edge" => cfg.edges.push(value.to_string()),
                    "plants.source" => plant_source = Some(value.to_string()),
                    "leader.gain" => leader.gain = Some(parse_num(value)?),
                    "leader.num" => leader.num = Some(parse_list(value)?),
                    "leader.den" => leader.den = Some(parse_list(value)?),
                    "filter.d_lambda" => cfg.filter = Some(parse_list(value)?),
                    "tuner.kind" => cfg.tuner.kind = value.parse()?,
                    "tuner.gamma" => cfg.tuner.gamma = parse_num(value)?,
                    "tuner.beta" => cfg.tuner.beta = parse_num(value)?,
                    "tuner.mu" => {
                        cfg.tuner.mu =
                            if value == "auto" { MuSetting::Auto } else { MuSetting::Fixed(parse_num(value)?) }
                    }
                    "tuner.q_scaling" => cfg.tuner.q_scaling = parse_q_scaling(value)?,
                    "reference.kind" => reference.kind = Some(value.to_string()),
                    "reference.amplitude" => reference.amplitude = Some(parse_num(value)?),
                    "reference.period" => reference.period = Some(parse_num(value)?),
                    "reference.terms" => reference.terms = Some(parse_terms(value)?),
                    "disturbance.nu_u" => cfg.nu_u = parse_list(value)?,
                    "disturbance.nu_y" => cfg.nu_y = parse_list(value)?,
                    "sim.T" => cfg.horizon = parse_num(value)?,
                    "sim.h" => cfg.step = parse_num(value)?,
                    "sim.stride" => cfg.stride = parse_num(value)?,
                    "sim.mode" => cfg.mode = value.parse()?,
                    "init.plant" => cfg.init_plant = parse_list(value)?,
                    "init.leader" => cfg.init_leader = parse_list(value)?,
                    "init.theta" => cfg.init_theta = parse_list(value)?,
                    "sweep.topologies" => cfg.sweep_topologies = Some(parse_named(value)?),
                    "sweep.m" => cfg.sweep_m = Some(parse_list(value)?),
                    "sweep.tuners" => cfg.sweep_tuners = Some(parse_named(value)?),
                    _ => {
                        let plant_key = key.strip_prefix("plant.").and_then(|rest| rest.split_once('.'));
                        let Some((i, field)) = plant_key else {
                            return Err(format!("unknown key `{key}`"));
                        };
                        let i: usize = match i.parse() {
                            Ok(i) if i >= 1 => i,
                            _ => return Err(format!("invalid plant index in `{key}`")),
                        };
                        if plants.len() < i {
                            plants.resize_with(i, TfDraft::default);
                        }
                        let d = &mut plants[i - 1];
                        match field {
                            "gain" => d.gain = Some(parse_num(value)?),
                            "num" => d.num = Some(parse_list(value)?),
                            "den" => d.den = Some(parse_list(value)?),
                            _ => return Err(format!("unknown key `{key}`")),
                        }
                    }
                }
                Ok(())
            })();
            res.map_err(err)?;
        }
        let perr = CliError::Parse;
        cfg.leader = leader.finish(Some(&cfg.leader), "leader").map_err(perr)?;
        cfg.reference = reference.finish().map_err(perr)?;
        cfg.plants = match plant_source.as_deref() {
            None | Some("family") if plants.is_empty() => PlantSource::Family,
            None | Some("explicit") => PlantSource::Explicit(
                plants
                    .into_iter()
                    .enumerate()
                    .map(|(i, d)| d.finish(None, &format!("plant.{}", i + 1)))
                    .collect::<Result<_, _>>()
                    .map_err(perr)?,
            ),
            Some("family") => return Err(CliError::Parse("plant.* keys need plants.source = explicit".into())),
            Some(other) => return Err(CliError::Parse(format!("unknown plant source `{other}`"))),
        };
        Ok(cfg)
    }

    /// Every setting, one per line, in a fixed order. Parsing the output
    /// gives back an equal configuration.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        kv("network.topology", self.topology.to_string());
        kv("network.m", self.m.to_string());
        kv("network.seed", self.seed.to_string());
        kv("network.leader_share", self.leader_share.to_string());
        kv("network.parent_share", self.parent_share.to_string());
        if let Some(l) = &self.levels {
            kv("network.levels", join(l));
        }
        for e in &self.edges {
            kv("network.edge", e.clone());
        }
        match &self.plants {
            PlantSource::Family => kv("plants.source", "family".into()),
            PlantSource::Explicit(ps) => {
                kv("plants.source", "explicit".into());
                for (i, p) in ps.iter().enumerate() {
                    kv(&format!("plant.{}.gain", i + 1), p.gain.to_string());
                    kv(&format!("plant.{}.num", i + 1), join(&p.num));
                    kv(&format!("plant.{}.den", i + 1), join(&p.den));
                }
            }
        }
        kv("leader.gain", self.leader.gain.to_string());
        kv("leader.num", join(&self.leader.num));
        kv("leader.den", join(&self.leader.den));
        if let Some(f) = &self.filter {
            kv("filter.d_lambda", join(f));
        }
        kv("tuner.kind", self.tuner.kind.to_string());
        kv("tuner.gamma", self.tuner.gamma.to_string());
        kv("tuner.beta", self.tuner.beta.to_string());
        kv(
            "tuner.mu",
            match self.tuner.mu {
                MuSetting::Auto => "auto".into(),
                MuSetting::Fixed(mu) => mu.to_string(),
            },
        );
        kv(
            "tuner.q_scaling",
            match &self.tuner.q_scaling {
                QScaling::Geometric { base } => format!("geometric:{base}"),
                QScaling::Table(t) => format!("table:{}", t.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")),
            },
        );
        match &self.reference {
            ReferenceSpec::Step { amplitude } => {
                kv("reference.kind", "step".into());
                kv("reference.amplitude", amplitude.to_string());
            }
            ReferenceSpec::Square { amplitude, period } => {
                kv("reference.kind", "square".into());
                kv("reference.amplitude", amplitude.to_string());
                kv("reference.period", period.to_string());
            }
            ReferenceSpec::SineSum { terms } => {
                kv("reference.kind", "sine_sum".into());
                kv("reference.terms", terms.iter().map(|(a, w)| format!("{a}:{w}")).collect::<Vec<_>>().join(","));
            }
        }
        kv("disturbance.nu_u", join(&self.nu_u));
        kv("disturbance.nu_y", join(&self.nu_y));
        kv("sim.T", self.horizon.to_string());
        kv("sim.h", self.step.to_string());
        kv("sim.stride", self.stride.to_string());
        kv("sim.mode", self.mode.name().into());
        for (k, v) in [("init.plant", &self.init_plant), ("init.leader", &self.init_leader), ("init.theta", &self.init_theta)] {
            if !v.is_empty() {
                kv(k, join(v));
            }
        }
        if let Some(t) = &self.sweep_topologies {
            kv("sweep.topologies", join(t));
        }
        if let Some(m) = &self.sweep_m {
            kv("sweep.m", join(m));
        }
        if let Some(t) = &self.sweep_tuners {
            kv("sweep.tuners", join(t));
        }
        o
    }

    fn per_agent(&self, v: &[f64], what: &str) -> Result<Vec<f64>, CliError> {
        match v.len() {
            1 => Ok(vec![v[0]; self.m]),
            n if n == self.m => Ok(v.to_vec()),
            n => Err(CliError::Validation(format!("{what} has {n} entries; give 1 or m = {}", self.m))),
        }
    }

    /// Builds the simulator configuration. Failures here are validation
    /// failures, not parse errors.
    pub fn to_scenario(&self) -> Result<ScenarioConfig, CliError> {
        let invalid = |e: &dyn std::fmt::Display| CliError::Validation(e.to_string());
        let network = if self.topology == Topology::Custom {
            parse_edge_list(&self.edges.join("\n"), Some(self.m)).map_err(|e| invalid(&e))?
        } else {
            if !self.edges.is_empty() {
                return Err(CliError::Validation("network.edge is only used with network.topology = custom".into()));
            }
            let policy = WeightPolicy {
                leader_share: self.leader_share,
                parent_share: self.parent_share,
                levels: self.levels.clone(),
                seed: self.seed,
            };
            build_topology(self.topology, self.m, &policy).map_err(|e| invalid(&e))?
        };
        let leader = self.leader.build("leader")?;
        let plants = match &self.plants {
            PlantSource::Family => benchmark_plants(self.m).map_err(|e| invalid(&e))?,
            PlantSource::Explicit(ps) => {
                if ps.len() != self.m {
                    return Err(CliError::Validation(format!("{} plants given for m = {}", ps.len(), self.m)));
                }
                ps.iter().enumerate().map(|(i, p)| p.build(&format!("plant {}", i + 1))).collect::<Result<_, _>>()?
            }
        };
        let filter = match &self.filter {
            Some(c) => FilterSpec::from_polynomial(&Polynomial::from_descending(c)),
            None => FilterSpec::for_leader(&leader),
        }
        .map_err(|e| invalid(&e))?;
        Ok(ScenarioConfig {
            network,
            plants,
            leader,
            filter,
            tuner: self.tuner.clone(),
            reference: self.reference.clone(),
            disturbance: DisturbanceSpec {
                nu_u: self.per_agent(&self.nu_u, "disturbance.nu_u")?,
                nu_y: self.per_agent(&self.nu_y, "disturbance.nu_y")?,
            },
            horizon: self.horizon,
            step: self.step,
            stride: self.stride,
            initial: InitialConditions {
                plant: self.init_plant.clone(),
                leader: self.init_leader.clone(),
                theta: self.init_theta.clone(),
            },
            mode: self.mode,
            monitor: false,
            record_states: false,
        })
    }
}

impl RefDraft {
    fn finish(self) -> Result<ReferenceSpec, String> {
        let default = ReferenceSpec::default();
        let (amp0, period0) = match default {
            ReferenceSpec::Square { amplitude, period } => (amplitude, period),
            _ => unreachable!(),
        };
        let has_terms = self.terms.is_some();
        let spec = match self.kind.as_deref().unwrap_or("square") {
            "step" => ReferenceSpec::Step { amplitude: self.amplitude.unwrap_or(amp0) },
            "square" => ReferenceSpec::Square {
                amplitude: self.amplitude.unwrap_or(amp0),
                period: self.period.unwrap_or(period0),
            },
            "sine_sum" => ReferenceSpec::SineSum {
                terms: self.terms.ok_or("reference.terms is required for sine_sum")?,
            },
            other => return Err(format!("unknown reference kind `{other}`")),
        };
        let stray = match spec {
            ReferenceSpec::SineSum { .. } => self.amplitude.is_some() || self.period.is_some(),
            ReferenceSpec::Step { .. } => self.period.is_some() || has_terms,
            ReferenceSpec::Square { .. } => has_terms,
        };
        if stray {
            return Err("reference keys do not match reference.kind".into());
        }
        Ok(spec)
    }
}

fn parse_terms(v: &str) -> Result<Vec<(f64, f64)>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|t| {
            let (a, w) = t.split_once(':').ok_or_else(|| format!("expected `amplitude:frequency`, got `{t}`"))?;
            Ok((parse_num(a)?, parse_num(w)?))
        })
        .collect()
}

fn parse_q_scaling(v: &str) -> Result<QScaling, String> {
    match v.split_once(':') {
        Some(("geometric", b)) => Ok(QScaling::Geometric { base: parse_num(b)? }),
        Some(("table", t)) => {
            let t: Vec<f64> = parse_list(t)?;
            if t.is_empty() {
                return Err("empty q-scaling table".into());
            }
            Ok(QScaling::Table(t))
        }
        _ => Err(format!("expected `geometric:<base>` or `table:<list>`, got `{v}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert!(cfg.to_scenario().is_ok());
    }

    #[test]
    fn full_round_trip() {
        let text = "\
network.topology = custom
network.m = 2
network.edge = L 1 1
network.edge = 1 2 1
plants.source = explicit
plant.1.gain = 2
plant.1.num = 1 1
plant.1.den = 1 5 6
plant.2.gain = -1
plant.2.num = 1 3
plant.2.den = 1 -1 -2
tuner.kind = ht2
tuner.mu = auto
tuner.q_scaling = table:1,3
reference.kind = sine_sum
reference.terms = 1:2, 0.5:7
disturbance.nu_u = 1 2
sim.T = 10
sim.h = 0.01
sim.stride = 5
sim.mode = full
init.theta = 1 2 3 4 5 6 7 8
sweep.m = 1,3
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.topology, Topology::Custom);
        assert_eq!(cfg.tuner.mu, MuSetting::Auto);
        assert_eq!(cfg.reference, ReferenceSpec::SineSum { terms: vec![(1.0, 2.0), (0.5, 7.0)] });
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let sc = cfg.to_scenario().unwrap();
        assert_eq!(sc.plants[1].gain(), -1.0);
        assert_eq!(sc.disturbance.nu_y, vec![0.0, 0.0]);
    }

    #[test]
    fn parse_errors_name_the_line() {
        for (text, needle) in [
            ("network.m = 3\nbogus", "line 2"),
            ("network.x = 1", "unknown key"),
            ("network.m = three", "invalid number"),
            ("network.m = 1\nnetwork.m = 2", "duplicate"),
            ("tuner.kind = newton", "unknown tuner"),
            ("reference.kind = step\nreference.period = 3", "do not match"),
            ("plant.0.gain = 1", "plant index"),
        ] {
            match RunConfig::parse(text) {
                Err(CliError::Parse(msg)) => assert!(msg.contains(needle), "{msg}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn validation_errors_are_not_parse_errors() {
        let cfg = RunConfig::parse("network.m = 3\nplants.source = explicit\nplant.1.gain = 1\nplant.1.num = 1 1\nplant.1.den = 1 5 6").unwrap();
        assert!(matches!(cfg.to_scenario(), Err(CliError::Validation(_))));
        let cfg = RunConfig::parse("disturbance.nu_u = 1 2").unwrap();
        assert!(matches!(cfg.to_scenario(), Err(CliError::Validation(_))));
    }
}
