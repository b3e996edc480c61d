//! CSV matrices for social states and values, and atomic file writes.
//!
//! Floats are written in Rust's shortest round-trip form, so reading an
//! exported state back gives the same bits.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{KarmaError, Result};
use crate::model::{Game, SocialState};
use crate::solver::{TypeValue, ValueTable};

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| KarmaError::Io(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Rows `(type, u, k)` with the mass `d[type][u, k]`.
pub fn distribution_csv(state: &SocialState) -> Result<Vec<u8>> {
    let levels = state.levels();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["type", "u", "k", "mass"])?;
    for t in 0..state.n_types() {
        for (i, m) in state.distribution(t).iter().enumerate() {
            w.write_record([
                t.to_string(),
                (i / levels).to_string(),
                (i % levels).to_string(),
                m.to_string(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| KarmaError::Io(e.to_string()))
}

/// Rows `(type, u, k)` with one column per bid `b0 ..= b{k_max}`.
pub fn policy_csv(state: &SocialState) -> Result<Vec<u8>> {
    let levels = state.levels();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["type".to_string(), "u".into(), "k".into()];
    header.extend((0..levels).map(|b| format!("b{b}")));
    w.write_record(&header)?;
    for t in 0..state.n_types() {
        let pi = state.policy(t);
        for i in 0..state.n_urgency(t) * levels {
            let mut row = vec![
                t.to_string(),
                (i / levels).to_string(),
                (i % levels).to_string(),
            ];
            row.extend(pi[i * levels..(i + 1) * levels].iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.into_inner().map_err(|e| KarmaError::Io(e.to_string()))
}

/// Rows `(type, u, k)` with the discounted value, or the relative value in
/// average-reward mode.
pub fn values_csv(values: &ValueTable, levels: usize) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["type", "u", "k", "value"])?;
    for (t, v) in values.types.iter().enumerate() {
        for (i, x) in v.continuation().iter().enumerate() {
            w.write_record([
                t.to_string(),
                (i / levels).to_string(),
                (i % levels).to_string(),
                x.to_string(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| KarmaError::Io(e.to_string()))
}

/// Average reward per type, `None` for discounted types.
pub fn gains(values: &ValueTable) -> Vec<Option<f64>> {
    values
        .types
        .iter()
        .map(|v| match v {
            TypeValue::AverageReward { gain, .. } => Some(*gain),
            TypeValue::Discounted { .. } => None,
        })
        .collect()
}

fn parse_index(field: Option<&str>, what: &str, line: u64) -> Result<usize> {
    field
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| KarmaError::Io(format!("line {line}: bad {what}")))
}

fn parse_value(field: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| KarmaError::Io(format!("line {line}: bad number {field:?}")))
}

/// Reads the two CSV files written by [`distribution_csv`] and
/// [`policy_csv`] and validates the result against `game`.
pub fn read_state_csv(game: &Game, distribution: &[u8], policy: &[u8]) -> Result<SocialState> {
    let levels = game.levels();
    let mut d: Vec<Vec<f64>> = game
        .types()
        .iter()
        .map(|t| vec![f64::NAN; t.urgency.len() * levels])
        .collect();
    let mut pi: Vec<Vec<f64>> = game
        .types()
        .iter()
        .map(|t| vec![f64::NAN; t.urgency.len() * levels * levels])
        .collect();
    let locate = |t: usize, u: usize, k: usize, line: u64| -> Result<usize> {
        if t >= game.n_types() || u >= game.agent_type(t).urgency.len() || k >= levels {
            return Err(KarmaError::DimensionMismatch(format!(
                "line {line}: (type {t}, u {u}, k {k}) outside the scenario"
            )));
        }
        Ok(u * levels + k)
    };

    let mut r = csv::Reader::from_reader(distribution);
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let t = parse_index(rec.get(0), "type", line)?;
        let i = locate(
            t,
            parse_index(rec.get(1), "u", line)?,
            parse_index(rec.get(2), "k", line)?,
            line,
        )?;
        d[t][i] = parse_value(rec.get(3).unwrap_or(""), line)?;
    }
    let mut r = csv::Reader::from_reader(policy);
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 + levels {
            return Err(KarmaError::DimensionMismatch(format!(
                "line {line}: {} bid columns, expected {levels}",
                rec.len().saturating_sub(3)
            )));
        }
        let t = parse_index(rec.get(0), "type", line)?;
        let i = locate(
            t,
            parse_index(rec.get(1), "u", line)?,
            parse_index(rec.get(2), "k", line)?,
            line,
        )?;
        for b in 0..levels {
            pi[t][i * levels + b] = parse_value(&rec[3 + b], line)?;
        }
    }
    for (t, (dt, pt)) in d.iter().zip(&pi).enumerate() {
        if dt.iter().chain(pt.iter()).any(|x| x.is_nan()) {
            return Err(KarmaError::DimensionMismatch(format!(
                "type {t}: missing rows"
            )));
        }
    }
    SocialState::new(game, d, pi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentType, MechanismConfig, PaymentRule, UrgencyChain};

    fn game() -> Game {
        let chain =
            UrgencyChain::new(vec![1.0, 10.0], vec![vec![0.3, 0.7], vec![0.6, 0.4]]).unwrap();
        Game::new(
            vec![
                AgentType::new(chain.clone(), 0.9, 1.0 / 3.0),
                AgentType::new(chain, 0.5, 2.0 / 3.0),
            ],
            MechanismConfig::new(PaymentRule::Pbp, 2).with_k_max(5),
        )
        .unwrap()
    }

    #[test]
    fn state_round_trips_bit_exactly() {
        let g = game();
        let s = SocialState::initial(&g);
        let back =
            read_state_csv(&g, &distribution_csv(&s).unwrap(), &policy_csv(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        for t in 0..2 {
            for (a, b) in back.policy(t).iter().zip(s.policy(t)) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn rejects_bad_policy_rows() {
        let g = game();
        let s = SocialState::initial(&g);
        let policy = String::from_utf8(policy_csv(&s).unwrap()).unwrap();
        // k = 0 rows bid 0 with probability 1; make one of them 0.9
        let broken = policy.replacen("0,0,0,1,0", "0,0,0,0.9,0", 1);
        assert_ne!(broken, policy);
        let err =
            read_state_csv(&g, &distribution_csv(&s).unwrap(), broken.as_bytes()).unwrap_err();
        assert!(
            matches!(err, KarmaError::InvalidSocialState { .. }),
            "{err}"
        );
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
