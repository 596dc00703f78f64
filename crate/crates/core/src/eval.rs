//! Accuracy, self-consistency voting, consistency rate and energy gaps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Most frequent answer; ties go to the smallest value.
pub fn majority_vote(answers: &[u32]) -> Result<u32> {
    if answers.is_empty() {
        return Err(Error::Empty("majority_vote"));
    }
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &a in answers {
        *counts.entry(a).or_default() += 1;
    }
    let mut best = (0usize, 0u32);
    // Ascending key order, so strict `>` keeps the smallest on ties.
    for (&a, &c) in &counts {
        if c > best.0 {
            best = (c, a);
        }
    }
    Ok(best.1)
}

fn check_chains(chains: &[Vec<u32>], gold: &[u32], n: usize) -> Result<()> {
    if chains.is_empty() {
        return Err(Error::Empty("chain answers"));
    }
    if chains.len() != gold.len() {
        return Err(Error::invalid(format!(
            "{} chain lists for {} gold answers",
            chains.len(),
            gold.len()
        )));
    }
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if let Some((i, c)) = chains.iter().enumerate().find(|(_, c)| c.len() != n) {
        return Err(Error::invalid(format!("question {i} has {} chains, expected {n}", c.len())));
    }
    Ok(())
}

/// Majority-vote accuracy in percent over questions with exactly `n` chains.
pub fn pass_at_n(chains: &[Vec<u32>], gold: &[u32], n: usize) -> Result<f64> {
    check_chains(chains, gold, n)?;
    let mut correct = 0usize;
    for (c, &g) in chains.iter().zip(gold) {
        correct += usize::from(majority_vote(c)? == g);
    }
    Ok(100.0 * correct as f64 / chains.len() as f64)
}

/// Mean single-chain accuracy in percent, averaged over all chains.
pub fn pass_at_1(chains: &[Vec<u32>], gold: &[u32], n: usize) -> Result<f64> {
    check_chains(chains, gold, n)?;
    let correct: usize = chains
        .iter()
        .zip(gold)
        .map(|(c, &g)| c.iter().filter(|&&a| a == g).count())
        .sum();
    Ok(100.0 * correct as f64 / (chains.len() * n) as f64)
}

/// `acc1 / accn * 100`, not clamped.
pub fn consistency_rate(acc1: f64, accn: f64) -> Result<f64> {
    if !(accn > 0.0) {
        return Err(Error::invalid(format!(
            "consistency rate undefined for pass@N accuracy {accn}"
        )));
    }
    Ok(acc1 / accn * 100.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyGapStats {
    pub mean: f64,
    pub median: f64,
    pub fraction_positive: f64,
}

/// Summary of `E(first) - E(last)` over energy traces.
pub fn energy_gap_stats(traces: &[Vec<f64>]) -> Result<EnergyGapStats> {
    if traces.is_empty() {
        return Err(Error::Empty("energy_gap_stats"));
    }
    let mut gaps = Vec::with_capacity(traces.len());
    for t in traces {
        let (Some(first), Some(last)) = (t.first(), t.last()) else {
            return Err(Error::Empty("energy trace"));
        };
        gaps.push(first - last);
    }
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n;
    let positive = gaps.iter().filter(|&&g| g > 0.0).count() as f64 / n;
    gaps.sort_by(f64::total_cmp);
    let mid = gaps.len() / 2;
    let median = if gaps.len() % 2 == 1 {
        gaps[mid]
    } else {
        0.5 * (gaps[mid - 1] + gaps[mid])
    };
    Ok(EnergyGapStats {
        mean,
        median,
        fraction_positive: positive,
    })
}

/// Placeholder vote value for chains that produced no answer; larger than
/// any real answer so it never wins a tie.
pub const NO_ANSWER: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionRecord {
    pub question_id: u64,
    pub gold: u32,
    /// One answer per chain, `null` when a chain produced none.
    pub chains: Vec<Option<u32>>,
    pub vote: Option<u32>,
    pub correct: bool,
    pub energy_initial: f64,
    pub energy_final: f64,
}

impl QuestionRecord {
    pub fn new(question_id: u64, gold: u32, chains: Vec<Option<u32>>, energy_trace: &[f64]) -> Result<Self> {
        let votes: Vec<u32> = chains.iter().map(|a| a.unwrap_or(NO_ANSWER)).collect();
        let vote = Some(majority_vote(&votes)?).filter(|&v| v != NO_ANSWER);
        let (Some(&energy_initial), Some(&energy_final)) = (energy_trace.first(), energy_trace.last()) else {
            return Err(Error::Empty("energy trace"));
        };
        Ok(QuestionRecord {
            question_id,
            gold,
            correct: vote == Some(gold),
            chains,
            vote,
            energy_initial,
            energy_final,
        })
    }

    fn votes(&self) -> Vec<u32> {
        self.chains.iter().map(|a| a.unwrap_or(NO_ANSWER)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSummary {
    pub n_questions: usize,
    pub n_chains: usize,
    pub calibration_steps: usize,
    pub decode_temperature: f64,
    pub pass1_accuracy: f64,
    #[serde(rename = "passN_accuracy")]
    pub pass_n_accuracy: f64,
    /// `None` when pass@N accuracy is zero.
    pub consistency_rate: Option<f64>,
    pub mean_energy_raw: f64,
    pub mean_energy_calibrated: f64,
    pub energy_gap: EnergyGapStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub records: Vec<QuestionRecord>,
}

impl EvalReport {
    /// Aggregates per-question records into a report.
    pub fn from_records(
        records: Vec<QuestionRecord>,
        n_chains: usize,
        calibration_steps: usize,
        decode_temperature: f64,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("evaluation records"));
        }
        let chains: Vec<Vec<u32>> = records.iter().map(QuestionRecord::votes).collect();
        let gold: Vec<u32> = records.iter().map(|r| r.gold).collect();
        let acc1 = pass_at_1(&chains, &gold, n_chains)?;
        let accn = pass_at_n(&chains, &gold, n_chains)?;
        let n = records.len() as f64;
        let traces: Vec<Vec<f64>> = records.iter().map(|r| vec![r.energy_initial, r.energy_final]).collect();
        let summary = EvalSummary {
            n_questions: records.len(),
            n_chains,
            calibration_steps,
            decode_temperature,
            pass1_accuracy: acc1,
            pass_n_accuracy: accn,
            consistency_rate: consistency_rate(acc1, accn).ok(),
            mean_energy_raw: records.iter().map(|r| r.energy_initial).sum::<f64>() / n,
            mean_energy_calibrated: records.iter().map(|r| r.energy_final).sum::<f64>() / n,
            energy_gap: energy_gap_stats(&traces)?,
        };
        Ok(EvalReport { summary, records })
    }

    /// Summary line followed by one line per question.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.summary)?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines.next().ok_or(Error::Empty("evaluation report"))?;
        let summary: EvalSummary = serde_json::from_str(first)?;
        let records = lines
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect::<Result<Vec<QuestionRecord>>>()?;
        Ok(EvalReport { summary, records })
    }
}
