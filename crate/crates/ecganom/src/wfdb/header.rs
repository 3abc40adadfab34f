//! Text header (.hea) parser for MIT-BIH style records.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub file_name: String,
    pub format: u16,
    /// adu per physical mV.
    pub gain: f64,
    /// adu value corresponding to 0 physical units.
    pub baseline: i32,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordHeader {
    pub record_name: String,
    pub num_signals: usize,
    pub sampling_frequency: f64,
    pub num_samples: usize,
    pub signals: Vec<SignalSpec>,
}

/// Parse a `.hea` header. Grammar:
///
/// ```text
/// name num_signals fs num_samples
/// file format gain(baseline)/units adc_res adc_zero init_value [cksum blk desc...]
/// ```
///
/// Leading `#` comment lines are ignored. The baseline defaults to the
/// adc_zero field when the parenthesized form is absent.
pub fn parse_header(text: &str) -> Result<RecordHeader> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));

    let (line_no, record_line) = lines
        .next()
        .ok_or_else(|| Error::Parse("empty header".into()))?;
    let fields: Vec<&str> = record_line.split_whitespace().collect();
    if fields.len() < 4 {
        return Err(Error::Parse(format!(
            "line {}: record line needs `name num_signals fs num_samples`, got {:?}",
            line_no + 1,
            record_line
        )));
    }
    // record name may carry a /segment-count suffix; MIT-BIH does not use it.
    let record_name = fields[0].split('/').next().unwrap_or(fields[0]).to_string();
    let num_signals: usize = fields[1].parse().map_err(|_| {
        Error::Parse(format!("line {}: bad signal count {:?}", line_no + 1, fields[1]))
    })?;
    // fs may carry a counter-frequency suffix `fs/cf(base)`.
    let fs_token = fields[2].split('/').next().unwrap_or(fields[2]);
    let sampling_frequency: f64 = fs_token.parse().map_err(|_| {
        Error::Parse(format!("line {}: bad sampling frequency {:?}", line_no + 1, fields[2]))
    })?;
    if sampling_frequency <= 0.0 {
        return Err(Error::Parse(format!(
            "line {}: sampling frequency must be positive",
            line_no + 1
        )));
    }
    let num_samples: usize = fields[3].parse().map_err(|_| {
        Error::Parse(format!("line {}: bad sample count {:?}", line_no + 1, fields[3]))
    })?;

    let mut signals = Vec::with_capacity(num_signals);
    for _ in 0..num_signals {
        let (sig_line_no, sig_line) = lines.next().ok_or_else(|| {
            Error::Parse(format!(
                "expected {} signal spec lines, found {}",
                num_signals,
                signals.len()
            ))
        })?;
        signals.push(parse_signal_spec(sig_line, sig_line_no + 1)?);
    }

    Ok(RecordHeader {
        record_name,
        num_signals,
        sampling_frequency,
        num_samples,
        signals,
    })
}

fn parse_signal_spec(line: &str, line_no: usize) -> Result<SignalSpec> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 3 {
        return Err(Error::Parse(format!(
            "line {}: signal spec needs at least `file format gain`",
            line_no
        )));
    }
    let file_name = fields[0].to_string();
    // strip xN / :skew / +offset modifiers from the format token
    let fmt_token: String = fields[1]
        .chars()
        .take_while(char::is_ascii_digit)
        .collect();
    let format: u16 = fmt_token.parse().map_err(|_| {
        Error::Parse(format!("line {}: bad format code {:?}", line_no, fields[1]))
    })?;

    // gain token: gain(baseline)/units, every part optional after the number
    let gain_token = fields[2];
    let (gain_part, _units) = match gain_token.split_once('/') {
        Some((g, u)) => (g, Some(u)),
        None => (gain_token, None),
    };
    let (gain_str, baseline_in_parens) = match gain_part.split_once('(') {
        Some((g, rest)) => {
            let b = rest.trim_end_matches(')');
            (g, Some(b))
        }
        None => (gain_part, None),
    };
    let gain: f64 = gain_str.parse().map_err(|_| {
        Error::Parse(format!("line {}: bad gain {:?}", line_no, gain_token))
    })?;
    let parsed_baseline: Option<i32> = match baseline_in_parens {
        Some(b) => Some(b.parse().map_err(|_| {
            Error::Parse(format!("line {}: bad baseline {:?}", line_no, b))
        })?),
        None => None,
    };
    // fields: 3 adc_res, 4 adc_zero, 5 init_value, 6 cksum, 7 blocksize, 8.. description
    let adc_zero: i32 = fields
        .get(4)
        .map(|s| {
            s.parse().map_err(|_| {
                Error::Parse(format!("line {}: bad adc zero {:?}", line_no, s))
            })
        })
        .transpose()?
        .unwrap_or(0);
    let baseline = parsed_baseline.unwrap_or(adc_zero);
    let description = fields.get(8..).map_or_else(String::new, |d| d.join(" "));

    Ok(SignalSpec {
        file_name,
        format,
        gain,
        baseline,
        description,
    })
}
