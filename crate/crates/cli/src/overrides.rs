use clap::Args;
use lazypi::{Error, Result, RunManifest};

/// Flags that take precedence over manifest fields.
#[derive(Debug, Default, Args)]
pub struct ConfigOverrides {
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Ridge penalty of the lazy refit.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Interval relaxation added to both endpoints.
    #[arg(long)]
    pub nu: Option<f64>,
    /// Nominal privacy budget; the noise scale is recalibrated from it.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// DP-SGD noise multiplier; overrides calibration from epsilon.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Hidden layer widths, comma separated (e.g. 64,64). Empty for linear.
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trials run concurrently.
    #[arg(long)]
    pub workers: Option<usize>,
}

fn parse_hidden(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("bad hidden layer width `{t}`")))
        })
        .collect()
}

impl ConfigOverrides {
    pub fn apply(&self, m: &mut RunManifest) -> Result<()> {
        let c = &mut m.config;
        if let Some(v) = self.alpha {
            c.interval.alpha = v;
        }
        if let Some(v) = self.lambda {
            c.lazy.ridge_lambda = v;
        }
        if let Some(v) = self.nu {
            c.interval.relaxation = v;
        }
        if let Some(v) = self.epsilon {
            c.privacy.epsilon = v;
            c.privacy.noise_scale = None;
        }
        if let Some(v) = self.delta {
            c.privacy.delta = v;
        }
        if let Some(v) = self.sigma {
            c.privacy.noise_scale = Some(v);
        }
        if let Some(v) = self.clip_norm {
            c.privacy.clip_norm = v;
        }
        if let Some(v) = self.epochs {
            c.training.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.training.batch_size = v;
        }
        if let Some(h) = &self.hidden {
            c.model.hidden = parse_hidden(h)?;
        }
        if let Some(v) = self.trials {
            m.trials = v;
        }
        if let Some(v) = self.seed {
            m.seed = v;
        }
        if let Some(v) = self.workers {
            m.workers = v;
        }
        m.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lazypi::{DataSource, SimConfig};

    #[test]
    fn flags_win_over_manifest() {
        let mut m = RunManifest::new(DataSource::Simulate(SimConfig::new(200, 3, 1)));
        m.config.privacy.noise_scale = Some(4.0);
        let o = ConfigOverrides {
            alpha: Some(0.2),
            epsilon: Some(1.0),
            hidden: Some("8, 4".into()),
            trials: Some(2),
            ..Default::default()
        };
        o.apply(&mut m).unwrap();
        assert_eq!(m.config.interval.alpha, 0.2);
        assert_eq!(m.config.privacy.noise_scale, None);
        assert_eq!(m.config.model.hidden, vec![8, 4]);
        assert_eq!(m.trials, 2);
    }

    #[test]
    fn bad_values_are_rejected() {
        let mut m = RunManifest::new(DataSource::Simulate(SimConfig::new(200, 3, 1)));
        let o = ConfigOverrides {
            hidden: Some("8,x".into()),
            ..Default::default()
        };
        assert!(o.apply(&mut m).unwrap_err().is_validation());
        let o = ConfigOverrides {
            trials: Some(0),
            ..Default::default()
        };
        assert!(o.apply(&mut m).unwrap_err().is_validation());
    }
}
