use clap::{Arg, ArgMatches, Args, Command, FromArgMatches};
use r3d::pipeline::PipelineConfig;

/// One `--<key>` flag per [`PipelineConfig`] field, with underscores written
/// as dashes. Values are checked at parse time so a bad value is a usage
/// error naming the flag.
#[derive(Debug, Clone, Default)]
pub struct ConfigFlags {
    /// `(key, value)` in the order the keys are declared.
    pub overrides: Vec<(String, String)>,
}

impl ConfigFlags {
    pub fn apply(&self, config: &mut PipelineConfig) -> r3d::Result<()> {
        for (key, value) in &self.overrides {
            config.set(key, value)?;
        }
        Ok(())
    }
}

fn flag_name(key: &str) -> &'static str {
    Box::leak(key.replace('_', "-").into_boxed_str())
}

fn check_value(key: &'static str) -> impl Fn(&str) -> Result<String, String> + Clone + Send + Sync + 'static {
    move |value: &str| {
        let mut config = PipelineConfig::default();
        config.set(key, value).map(|_| value.to_string()).map_err(|e| e.to_string())
    }
}

impl FromArgMatches for ConfigFlags {
    fn from_arg_matches(matches: &ArgMatches) -> Result<Self, clap::Error> {
        let mut flags = Self::default();
        flags.update_from_arg_matches(matches)?;
        Ok(flags)
    }

    fn update_from_arg_matches(&mut self, matches: &ArgMatches) -> Result<(), clap::Error> {
        for key in PipelineConfig::keys() {
            if let Some(value) = matches.get_one::<String>(&key) {
                self.overrides.retain(|(k, _)| *k != key);
                self.overrides.push((key.clone(), value.clone()));
            }
        }
        Ok(())
    }
}

impl Args for ConfigFlags {
    fn augment_args(mut cmd: Command) -> Command {
        let defaults = serde_json::to_value(PipelineConfig::default()).expect("config serializes");
        for key in PipelineConfig::keys() {
            let key: &'static str = Box::leak(key.into_boxed_str());
            let default = defaults[key].to_string();
            cmd = cmd.arg(
                Arg::new(key)
                    .long(flag_name(key))
                    .value_name("VALUE")
                    .help(format!("Pipeline setting {key} [default: {default}]"))
                    .help_heading("Pipeline settings")
                    .value_parser(check_value(key)),
            );
        }
        cmd
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}
