use crate::error::{Error, Result};

/// Per-stage iteration budgets and warm-up lengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSchedule {
    total: usize,
    lengths: Vec<usize>,
    warmup: Vec<usize>,
}

/// Builds a schedule of `total` rounds over `stages` stages.
///
/// Without overrides every early stage gets `floor(T / 2S)` rounds and the
/// last stage absorbs the rest, so the final stage always holds at least
/// half of the budget. `warmup` is either empty (no warm-up) or one entry per
/// stage, each strictly shorter than its stage.
pub fn make_schedule(
    total: usize,
    stages: usize,
    override_lengths: Option<&[usize]>,
    warmup: &[usize],
) -> Result<StageSchedule> {
    if stages == 0 {
        return Err(Error::Schedule("stage count must be at least 1".into()));
    }
    let lengths = match override_lengths {
        Some(lengths) => {
            if lengths.len() != stages {
                return Err(Error::Schedule(format!(
                    "{} stage lengths given for {stages} stages",
                    lengths.len()
                )));
            }
            if lengths.contains(&0) {
                return Err(Error::Schedule("every stage needs at least one round".into()));
            }
            let sum: usize = lengths.iter().sum();
            if sum != total {
                return Err(Error::Schedule(format!("stage lengths sum to {sum}, expected {total}")));
            }
            lengths.to_vec()
        }
        None => {
            if total < 2 * stages {
                return Err(Error::Schedule(format!(
                    "{total} rounds cannot be split into {stages} stages (need at least {})",
                    2 * stages
                )));
            }
            let early = total / (2 * stages);
            let mut lengths = vec![early; stages];
            lengths[stages - 1] = total - early * (stages - 1);
            lengths
        }
    };
    let warmup = if warmup.is_empty() {
        vec![0; stages]
    } else {
        if warmup.len() != stages {
            return Err(Error::Schedule(format!(
                "{} warm-up entries for {stages} stages",
                warmup.len()
            )));
        }
        warmup.to_vec()
    };
    if let Some(s) = (0..stages).find(|&s| warmup[s] >= lengths[s]) {
        return Err(Error::Schedule(format!(
            "warm-up {} of stage {} is not shorter than the stage ({})",
            warmup[s],
            s + 1,
            lengths[s]
        )));
    }
    Ok(StageSchedule { total, lengths, warmup })
}

impl StageSchedule {
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn stages(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn warmup(&self) -> &[usize] {
        &self.warmup
    }

    /// First round (1-based) of stage `s` (1-based).
    pub fn stage_start(&self, s: usize) -> usize {
        1 + self.lengths[..s - 1].iter().sum::<usize>()
    }

    /// Last round of every stage: the cumulative lengths.
    pub fn boundaries(&self) -> Vec<usize> {
        self.lengths
            .iter()
            .scan(0, |acc, &l| {
                *acc += l;
                Some(*acc)
            })
            .collect()
    }

    /// Stage holding round `t` (both 1-based).
    pub fn active_stage(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.total {
            return Err(Error::Stage(format!("round {t} outside [1, {}]", self.total)));
        }
        let mut end = 0;
        for (s, &l) in self.lengths.iter().enumerate() {
            end += l;
            if t <= end {
                return Ok(s + 1);
            }
        }
        unreachable!("lengths sum to total")
    }

    /// Whether round `t` falls in the warm-up window of its stage.
    pub fn in_warmup(&self, t: usize) -> Result<bool> {
        let s = self.active_stage(t)?;
        Ok(t - self.stage_start(s) < self.warmup[s - 1])
    }

    /// Position of round `t` inside its stage, as `(offset, stage length)`.
    pub fn stage_offset(&self, t: usize) -> Result<(usize, usize)> {
        let s = self.active_stage(t)?;
        Ok((t - self.stage_start(s), self.lengths[s - 1]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rule_examples() {
        assert_eq!(
            make_schedule(3000, 4, None, &[]).unwrap().lengths(),
            &[375, 375, 375, 1875]
        );
        assert_eq!(make_schedule(1500, 3, None, &[]).unwrap().lengths(), &[250, 250, 1000]);
        assert_eq!(make_schedule(8, 1, None, &[]).unwrap().lengths(), &[8]);
    }

    #[test]
    fn override_lengths() {
        let s = make_schedule(100, 4, Some(&[25, 25, 25, 25]), &[]).unwrap();
        assert_eq!(s.boundaries(), vec![25, 50, 75, 100]);
        assert!(make_schedule(100, 4, Some(&[25, 25, 25, 24]), &[]).is_err());
        assert!(make_schedule(100, 2, Some(&[100, 0]), &[]).is_err());
    }

    #[test]
    fn infeasible_rejected() {
        assert!(make_schedule(7, 4, None, &[]).is_err());
        assert!(make_schedule(10, 0, None, &[]).is_err());
    }

    #[test]
    fn active_stage_lookup() {
        let s = make_schedule(3000, 4, None, &[]).unwrap();
        assert_eq!(s.active_stage(1).unwrap(), 1);
        assert_eq!(s.active_stage(375).unwrap(), 1);
        assert_eq!(s.active_stage(376).unwrap(), 2);
        assert_eq!(s.active_stage(1126).unwrap(), 4);
        assert_eq!(s.active_stage(3000).unwrap(), 4);
        assert!(s.active_stage(0).is_err());
        assert!(s.active_stage(3001).is_err());
        let one = make_schedule(9, 1, None, &[]).unwrap();
        assert!((1..=9).all(|t| one.active_stage(t).unwrap() == 1));
    }

    #[test]
    fn warmup_windows() {
        let s = make_schedule(20, 2, None, &[0, 3]).unwrap();
        // lengths [5, 15]; stage 2 starts at round 6.
        let flags: Vec<bool> = (1..=20).map(|t| s.in_warmup(t).unwrap()).collect();
        assert_eq!(flags.iter().filter(|&&f| f).count(), 3);
        assert!(flags[5] && flags[6] && flags[7] && !flags[8]);
        assert!(make_schedule(20, 2, None, &[0, 15]).is_err());
        assert!(make_schedule(20, 2, None, &[0]).is_err());
    }
}
