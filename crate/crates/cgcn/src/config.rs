//! Flat key-value configuration files.
//!
//! The format is one `key = value` pair per line, with `#` comments and
//! blank lines ignored. Unknown and duplicate keys are errors. Every key
//! is optional; missing keys fall back to the reference configuration.
//!
//! Keys:
//!
//! ```text
//! shift_kind    = normalized-laplacian      graph shift operator kind
//! kernel        = gaussian-rbf              kernel for every layer
//! kernels       = inverse-polynomial,gaussian-rbf(0.3)
//!                                           per-layer kernels (excludes kernel/gamma)
//! gamma         = 0.2                       bandwidth for kernel = gaussian-rbf
//! hops          = 1                         filter taps beyond hop 0
//! layers        = 2                         number of layers
//! hidden_width  = 32                        width of every hidden layer
//! hidden_widths = 32,16                     per-layer widths (excludes hidden_width)
//! landmarks     = 32                        Nystrom landmark count
//! epochs        = 200                       training epochs per layer
//! optimizer     = projected-adam            projected-adam or projected-gd
//! learning_rate = 0.001                     initial step size
//! batch_size    = auto                      auto or a positive integer
//! radius        = 1.0                       per-column norm bound behind default budgets
//! budgets       = 3.5,2.0                   explicit per-layer nuclear budgets
//! split         = 0.8,0.1,0.1               train/val/test ratios
//! filter_init   = zeros                     zeros or random
//! seed          = 0                         master seed
//! init_seed     = 1                         separate stream for random filter init
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::ShiftKind;
use crate::kernel::KernelSpec;
use crate::train::{FilterInit, OptimizerChoice, TrainConfig};

fn parse_error(file: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

/// One kernel in config syntax: a bare name, or `gaussian-rbf(<gamma>)`.
fn parse_kernel_entry(file: &str, line: usize, raw: &str, gamma: f64) -> Result<KernelSpec> {
    let raw = raw.trim();
    if raw == "inverse-polynomial" {
        return Ok(KernelSpec::InversePolynomial);
    }
    if raw == "gaussian-rbf" {
        return KernelSpec::rbf(gamma)
            .map_err(|e| parse_error(file, line, format!("invalid gamma: {e}")));
    }
    if let Some(inner) = raw
        .strip_prefix("gaussian-rbf(")
        .and_then(|r| r.strip_suffix(')'))
    {
        let g: f64 = inner
            .trim()
            .parse()
            .map_err(|_| parse_error(file, line, format!("invalid gamma {inner:?}")))?;
        return KernelSpec::rbf(g)
            .map_err(|e| parse_error(file, line, format!("invalid gamma: {e}")));
    }
    Err(parse_error(
        file,
        line,
        format!("unknown kernel {raw:?}, expected inverse-polynomial or gaussian-rbf"),
    ))
}

fn kernel_entry_string(spec: &KernelSpec) -> String {
    match spec {
        KernelSpec::InversePolynomial => "inverse-polynomial".to_string(),
        KernelSpec::GaussianRbf { gamma } => format!("gaussian-rbf({gamma})"),
    }
}

struct RawEntry {
    line: usize,
    value: String,
}

fn parse_scalar<T: std::str::FromStr>(file: &str, entry: &RawEntry, what: &str) -> Result<T> {
    entry
        .value
        .parse()
        .map_err(|_| parse_error(file, entry.line, format!("invalid {what} {:?}", entry.value)))
}

fn parse_list<T: std::str::FromStr>(file: &str, entry: &RawEntry, what: &str) -> Result<Vec<T>> {
    if entry.value.is_empty() {
        return Ok(Vec::new());
    }
    entry
        .value
        .split(',')
        .map(|part| {
            part.trim().parse().map_err(|_| {
                parse_error(file, entry.line, format!("invalid {what} {:?}", part.trim()))
            })
        })
        .collect()
}

/// Parses config text. `file` names the source in error messages.
///
/// The result always passes [`TrainConfig::validate`].
pub fn parse_config_str(file: &str, text: &str) -> Result<TrainConfig> {
    let mut entries: BTreeMap<String, RawEntry> = BTreeMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| {
            parse_error(file, line, format!("expected key = value, got {content:?}"))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(parse_error(file, line, "empty key"));
        }
        if let Some(previous) = entries.get(&key) {
            return Err(parse_error(
                file,
                line,
                format!("duplicate key {key:?}, first set on line {}", previous.line),
            ));
        }
        entries.insert(key, RawEntry { line, value });
    }

    const KNOWN: &[&str] = &[
        "shift_kind",
        "kernel",
        "kernels",
        "gamma",
        "hops",
        "layers",
        "hidden_width",
        "hidden_widths",
        "landmarks",
        "epochs",
        "optimizer",
        "learning_rate",
        "batch_size",
        "radius",
        "budgets",
        "split",
        "filter_init",
        "seed",
        "init_seed",
    ];
    for (key, entry) in &entries {
        if !KNOWN.contains(&key.as_str()) {
            return Err(parse_error(
                file,
                entry.line,
                format!("unknown key {key:?}"),
            ));
        }
    }
    for (a, b) in [("kernel", "kernels"), ("hidden_width", "hidden_widths")] {
        if entries.contains_key(a) && entries.contains_key(b) {
            let line = entries[b].line;
            return Err(parse_error(
                file,
                line,
                format!("{a:?} and {b:?} cannot both be set"),
            ));
        }
    }
    if entries.contains_key("gamma") && entries.contains_key("kernels") {
        let line = entries["gamma"].line;
        return Err(parse_error(
            file,
            line,
            "\"gamma\" applies to \"kernel\"; per-layer kernels take gamma inline",
        ));
    }

    let mut config = TrainConfig::reference(0);

    if let Some(entry) = entries.get("shift_kind") {
        config.shift_kind = entry
            .value
            .parse::<ShiftKind>()
            .map_err(|e| parse_error(file, entry.line, e.to_string()))?;
    }
    if let Some(entry) = entries.get("layers") {
        config.num_layers = parse_scalar(file, entry, "layer count")?;
    }
    if let Some(entry) = entries.get("hops") {
        config.hops = parse_scalar(file, entry, "hop count")?;
    }
    if let Some(entry) = entries.get("landmarks") {
        config.landmarks = parse_scalar(file, entry, "landmark count")?;
    }
    if let Some(entry) = entries.get("epochs") {
        config.epochs = parse_scalar(file, entry, "epoch count")?;
    }
    if let Some(entry) = entries.get("optimizer") {
        config.optimizer = entry
            .value
            .parse::<OptimizerChoice>()
            .map_err(|e| parse_error(file, entry.line, e.to_string()))?;
    }
    if let Some(entry) = entries.get("learning_rate") {
        config.learning_rate = parse_scalar(file, entry, "learning rate")?;
    }
    if let Some(entry) = entries.get("batch_size") {
        config.batch_size = if entry.value == "auto" {
            None
        } else {
            Some(parse_scalar(file, entry, "batch size")?)
        };
    }
    if let Some(entry) = entries.get("radius") {
        config.radius = parse_scalar(file, entry, "radius")?;
    }
    if let Some(entry) = entries.get("budgets") {
        config.budgets = Some(parse_list(file, entry, "budget")?);
    }
    if let Some(entry) = entries.get("split") {
        let parts: Vec<f64> = parse_list(file, entry, "split ratio")?;
        if parts.len() != 3 {
            return Err(parse_error(
                file,
                entry.line,
                format!("split needs 3 ratios, got {}", parts.len()),
            ));
        }
        config.split = (parts[0], parts[1], parts[2]);
    }
    if let Some(entry) = entries.get("filter_init") {
        config.filter_init = entry
            .value
            .parse::<FilterInit>()
            .map_err(|e| parse_error(file, entry.line, e.to_string()))?;
    }
    if let Some(entry) = entries.get("seed") {
        config.seed = parse_scalar(file, entry, "seed")?;
    }
    if let Some(entry) = entries.get("init_seed") {
        config.init_seed = Some(parse_scalar(file, entry, "init seed")?);
    }

    // Kernels and hidden widths complete against the final layer count.
    let layers = config.num_layers;
    let gamma = match entries.get("gamma") {
        Some(entry) => {
            let g: f64 = parse_scalar(file, entry, "gamma")?;
            KernelSpec::rbf(g).map_err(|e| parse_error(file, entry.line, e.to_string()))?;
            g
        }
        None => 0.2,
    };
    if let Some(entry) = entries.get("kernels") {
        let mut kernels = Vec::new();
        for part in entry.value.split(',') {
            kernels.push(parse_kernel_entry(file, entry.line, part, gamma)?);
        }
        config.kernels = kernels;
    } else {
        let single = match entries.get("kernel") {
            Some(entry) => parse_kernel_entry(file, entry.line, &entry.value, gamma)?,
            None => KernelSpec::rbf(gamma).expect("validated above"),
        };
        config.kernels = vec![single; layers];
    }
    if let Some(entry) = entries.get("hidden_widths") {
        config.hidden_widths = parse_list(file, entry, "hidden width")?;
    } else {
        let width = match entries.get("hidden_width") {
            Some(entry) => parse_scalar(file, entry, "hidden width")?,
            None => 32,
        };
        config.hidden_widths = vec![width; layers.saturating_sub(1)];
    }

    config.validate()?;
    Ok(config)
}

/// Reads and parses a config file.
pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&path.display().to_string(), &text)
}

/// Renders a config in the file format; `parse_config_str` inverts this.
pub fn render_config(config: &TrainConfig) -> String {
    let mut out = String::new();
    let kernels: Vec<String> = config.kernels.iter().map(kernel_entry_string).collect();
    out.push_str(&format!("shift_kind = {}\n", config.shift_kind));
    out.push_str(&format!("kernels = {}\n", kernels.join(",")));
    out.push_str(&format!("hops = {}\n", config.hops));
    out.push_str(&format!("layers = {}\n", config.num_layers));
    if !config.hidden_widths.is_empty() {
        let widths: Vec<String> = config.hidden_widths.iter().map(|w| w.to_string()).collect();
        out.push_str(&format!("hidden_widths = {}\n", widths.join(",")));
    }
    out.push_str(&format!("landmarks = {}\n", config.landmarks));
    out.push_str(&format!("epochs = {}\n", config.epochs));
    out.push_str(&format!("optimizer = {}\n", config.optimizer));
    out.push_str(&format!("learning_rate = {}\n", config.learning_rate));
    match config.batch_size {
        Some(b) => out.push_str(&format!("batch_size = {b}\n")),
        None => out.push_str("batch_size = auto\n"),
    }
    out.push_str(&format!("radius = {}\n", config.radius));
    if let Some(budgets) = &config.budgets {
        let parts: Vec<String> = budgets.iter().map(|b| b.to_string()).collect();
        out.push_str(&format!("budgets = {}\n", parts.join(",")));
    }
    out.push_str(&format!(
        "split = {},{},{}\n",
        config.split.0, config.split.1, config.split.2
    ));
    out.push_str(&format!("filter_init = {}\n", config.filter_init));
    out.push_str(&format!("seed = {}\n", config.seed));
    if let Some(init_seed) = config.init_seed {
        out.push_str(&format!("init_seed = {init_seed}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_yields_reference_config() {
        let config = parse_config_str("<test>", "").unwrap();
        assert_eq!(config, TrainConfig::reference(0));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "\n# a comment\n  seed = 9   # trailing comment\n\n";
        let config = parse_config_str("<test>", text).unwrap();
        assert_eq!(config.seed, 9);
    }

    #[test]
    fn render_parse_round_trips() {
        let mut config = TrainConfig::reference(42);
        config.num_layers = 3;
        config.kernels = vec![
            KernelSpec::InversePolynomial,
            KernelSpec::rbf(0.35).unwrap(),
            KernelSpec::rbf(0.2).unwrap(),
        ];
        config.hidden_widths = vec![16, 8];
        config.budgets = Some(vec![2.5, 1.5, 1.0]);
        config.batch_size = Some(64);
        config.init_seed = Some(7);
        let text = render_config(&config);
        let parsed = parse_config_str("<round-trip>", &text).unwrap();
        assert_eq!(parsed, config);
    }

    #[test]
    fn single_layer_round_trips_without_width_keys() {
        let mut config = TrainConfig::reference(3);
        config.num_layers = 1;
        config.kernels = vec![KernelSpec::rbf(0.2).unwrap()];
        config.hidden_widths = vec![];
        let parsed = parse_config_str("<t>", &render_config(&config)).unwrap();
        assert_eq!(parsed, config);
    }

    #[test]
    fn broadcast_keys_fill_every_layer() {
        let text = "layers = 3\nkernel = inverse-polynomial\nhidden_width = 12\n";
        let config = parse_config_str("<t>", text).unwrap();
        assert_eq!(config.kernels, vec![KernelSpec::InversePolynomial; 3]);
        assert_eq!(config.hidden_widths, vec![12, 12]);
    }

    #[test]
    fn gamma_key_sets_rbf_bandwidth() {
        let config = parse_config_str("<t>", "kernel = gaussian-rbf\ngamma = 0.7\n").unwrap();
        assert_eq!(config.kernels[0], KernelSpec::rbf(0.7).unwrap());
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = parse_config_str("<t>", "seed = 1\nlr = 0.1\n").unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("lr"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err = parse_config_str("<t>", "seed = 1\nseed = 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn malformed_line_is_rejected() {
        let err = parse_config_str("<t>", "just words\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn bad_number_reports_line_and_value() {
        let err = parse_config_str("<t>", "epochs = soon\n").unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 1);
                assert!(message.contains("soon"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn conflicting_keys_are_rejected() {
        assert!(parse_config_str("<t>", "kernel = gaussian-rbf\nkernels = gaussian-rbf\n").is_err());
        assert!(parse_config_str("<t>", "hidden_width = 4\nhidden_widths = 4\n").is_err());
        assert!(
            parse_config_str("<t>", "kernels = gaussian-rbf(0.2)\ngamma = 0.3\n").is_err()
        );
    }

    #[test]
    fn invalid_settings_fail_validation() {
        assert!(parse_config_str("<t>", "epochs = 0\n").is_err());
        assert!(parse_config_str("<t>", "split = 0.5,0.2,0.2\n").is_err());
        assert!(parse_config_str("<t>", "layers = 2\nkernels = gaussian-rbf\n").is_err());
        assert!(parse_config_str("<t>", "batch_size = 0\n").is_err());
    }

    #[test]
    fn auto_batch_size_parses_to_none() {
        let config = parse_config_str("<t>", "batch_size = auto\n").unwrap();
        assert_eq!(config.batch_size, None);
        let config = parse_config_str("<t>", "batch_size = 16\n").unwrap();
        assert_eq!(config.batch_size, Some(16));
    }

    #[test]
    fn explicit_kernel_list_with_inline_gamma() {
        let text = "layers = 2\nkernels = inverse-polynomial, gaussian-rbf(0.4)\n";
        let config = parse_config_str("<t>", text).unwrap();
        assert_eq!(config.kernels[0], KernelSpec::InversePolynomial);
        assert_eq!(config.kernels[1], KernelSpec::rbf(0.4).unwrap());
    }

    #[test]
    fn load_from_file_names_the_path_in_errors() {
        let dir = std::env::temp_dir().join("cgcn-config-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.cfg");
        std::fs::write(&path, "epochs = never\n").unwrap();
        let err = load_train_config(&path).unwrap_err();
        match err {
            Error::Parse { file, .. } => assert!(file.contains("bad.cfg")),
            other => panic!("unexpected error {other:?}"),
        }
        std::fs::remove_file(&path).unwrap();
    }
}
