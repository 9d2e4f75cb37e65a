use super::policy::{ActorCritic, GaussianPolicy};
use super::update::AgentState;
use crate::error::{Error, Result};
use crate::nn::codec::{check_header, read_tensor, write_tensor};
use crate::nn::{AdamConfig, AdamState, MlpParams, CHECKPOINT_VERSION};

/// Agent snapshot taken after `step` environment steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub state: AgentState,
}

fn expect_kv<'a>(line: Option<&'a str>, key: &str) -> Result<&'a str> {
    line.and_then(|l| l.strip_prefix(key))
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| Error::Parse(format!("expected `{key} ...`, got {line:?}")))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad number `{s}`")))
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let p = &self.state.params;
        let a = &self.state.adam;
        let mut out = format!("momentppo-checkpoint {CHECKPOINT_VERSION}\n");
        out.push_str(&format!("step {}\n", self.step));
        p.policy.mean.write_section("policy", &mut out);
        write_tensor(&mut out, "log_std", &p.policy.log_std);
        p.critic.write_section("critic", &mut out);
        out.push_str(&format!(
            "adam {} {:?} {:?} {:?}\n",
            a.step_count, a.config.beta1, a.config.beta2, a.config.eps
        ));
        write_tensor(&mut out, "adam_m", &a.first_moment);
        write_tensor(&mut out, "adam_v", &a.second_moment);
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        check_header(lines.next())?;
        let step = expect_kv(lines.next(), "step")?
            .trim()
            .parse()
            .map_err(|_| Error::Parse("bad step".into()))?;
        let mean = MlpParams::read_section("policy", &mut lines)?;
        let log_std = read_tensor(lines.next(), "log_std")?;
        let critic = MlpParams::read_section("critic", &mut lines)?;
        let adam_line = expect_kv(lines.next(), "adam")?;
        let fields: Vec<&str> = adam_line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse(format!("bad adam line `{adam_line}`")));
        }
        let step_count = fields[0]
            .parse()
            .map_err(|_| Error::Parse("bad adam step".into()))?;
        let config = AdamConfig {
            beta1: parse_f64(fields[1])?,
            beta2: parse_f64(fields[2])?,
            eps: parse_f64(fields[3])?,
        };
        let policy = GaussianPolicy::new(mean, log_std)?;
        let params = ActorCritic { policy, critic };
        let n = params.num_params();
        let first_moment = read_tensor(lines.next(), "adam_m")?;
        let second_moment = read_tensor(lines.next(), "adam_v")?;
        if first_moment.len() != n || second_moment.len() != n {
            return Err(Error::Parse("adam moments do not match parameter count".into()));
        }
        match lines.next() {
            Some("end") => {}
            other => return Err(Error::Parse(format!("expected `end`, got {other:?}"))),
        }
        Ok(Self {
            step,
            state: AgentState {
                params,
                adam: AdamState {
                    config,
                    first_moment,
                    second_moment,
                    step_count,
                },
            },
        })
    }
}
