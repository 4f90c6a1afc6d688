//! Cost share vectors and sequential genomes, with the line-oriented text format
//! `T: t1,...,tn ; B: b1,...,bn`.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::BUDGET_TOL;

/// Formats with at most 12 significant digits, shortest form.
pub(crate) fn fmt_sig12(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    format!("{rounded}")
}

/// Simultaneous offer of release time `t[i]` for payment `b[i]` to each agent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostShareVector {
    pub t: Vec<f64>,
    pub b: Vec<f64>,
}

impl CostShareVector {
    pub fn new(t: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let gene = CostShareVector { t, b };
        gene.validate()?;
        Ok(gene)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.t.len() != self.b.len() {
            return Err(Error::InvalidGene(format!(
                "{} release times but {} payments",
                self.t.len(),
                self.b.len()
            )));
        }
        if self.t.is_empty() {
            return Err(Error::InvalidGene("empty cost share vector".into()));
        }
        if let Some(t) = self.t.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::InvalidGene(format!("release time {t} outside [0, 1]")));
        }
        if let Some(b) = self.b.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
            return Err(Error::InvalidGene(format!("payment {b} is negative")));
        }
        let total: f64 = self.b.iter().sum();
        if (total - 1.0).abs() > BUDGET_TOL {
            return Err(Error::InvalidGene(format!("payments sum to {total}, not 1")));
        }
        Ok(())
    }

    /// `B_i / (1 - T_i)`; at `T_i = 1` the price is 0 for a free offer and infinite otherwise.
    pub fn unit_price(&self, agent: usize) -> f64 {
        let (t, b) = (self.t[agent], self.b[agent]);
        if t >= 1.0 {
            if b == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            b / (1.0 - t)
        }
    }

    /// Whether `agent` is shut out entirely (release at 1, pays nothing).
    pub fn excludes(&self, agent: usize) -> bool {
        self.t[agent] >= 1.0 && self.b[agent] == 0.0
    }

    pub fn accepted_by(&self, agent: usize, value: f64) -> bool {
        value >= self.unit_price(agent)
    }

    pub fn accepted(&self, profile: &[f64]) -> bool {
        profile.iter().enumerate().all(|(i, &v)| self.accepted_by(i, v))
    }

    /// L1 distance over the concatenated `T` and `B` vectors.
    pub fn l1_distance(&self, other: &CostShareVector) -> f64 {
        let dt: f64 = self.t.iter().zip(&other.t).map(|(a, b)| (a - b).abs()).sum();
        let db: f64 = self.b.iter().zip(&other.b).map(|(a, b)| (a - b).abs()).sum();
        dt + db
    }

    /// Rescales `b` to sum to 1; an all-zero vector becomes an equal split.
    pub(crate) fn normalize_payments(&mut self) {
        let total: f64 = self.b.iter().sum();
        if total > 0.0 {
            self.b.iter_mut().for_each(|b| *b /= total);
        } else {
            let share = 1.0 / self.b.len() as f64;
            self.b.iter_mut().for_each(|b| *b = share);
        }
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|&x| fmt_sig12(x)).collect::<Vec<_>>().join(",")
}

impl fmt::Display for CostShareVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T: {} ; B: {}", join(&self.t), join(&self.b))
    }
}

fn parse_list(field: &str, prefix: &str) -> Result<Vec<f64>> {
    let body = field
        .trim()
        .strip_prefix(prefix)
        .ok_or_else(|| Error::parse("cost share vector", format!("expected `{prefix}` in `{field}`")))?;
    body.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|e| Error::parse("cost share vector", format!("`{}`: {e}", x.trim())))
        })
        .collect()
}

impl FromStr for CostShareVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (t, b) = s
            .split_once(';')
            .ok_or_else(|| Error::parse("cost share vector", format!("missing `;` in `{s}`")))?;
        CostShareVector::new(parse_list(t, "T:")?, parse_list(b, "B:")?)
    }
}

/// An ordered, nonempty list of cost share vectors over the same agents.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Genome {
    genes: Vec<CostShareVector>,
}

impl Genome {
    pub fn new(genes: Vec<CostShareVector>) -> Result<Self> {
        let first = genes
            .first()
            .ok_or_else(|| Error::InvalidGene("a genome needs at least one gene".into()))?;
        let n = first.len();
        for gene in &genes {
            gene.validate()?;
            if gene.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: gene.len(),
                });
            }
        }
        Ok(Genome { genes })
    }

    /// Skips validation; callers keep every gene normalized.
    pub(crate) fn from_genes_unchecked(genes: Vec<CostShareVector>) -> Self {
        debug_assert!(!genes.is_empty());
        Genome { genes }
    }

    pub fn genes(&self) -> &[CostShareVector] {
        &self.genes
    }

    pub fn into_genes(self) -> Vec<CostShareVector> {
        self.genes
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    pub fn agents(&self) -> usize {
        self.genes[0].len()
    }

    /// Index of the first unanimously accepted gene, if any.
    pub fn first_accepted(&self, profile: &[f64]) -> Option<usize> {
        self.genes.iter().position(|g| g.accepted(profile))
    }

    /// One record per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for gene in &self.genes {
            out.push_str(&gene.to_string());
            out.push('\n');
        }
        out
    }

    /// Parses records separated by newlines or `|`; blank lines and `#` comments are skipped.
    pub fn parse_text(text: &str) -> Result<Self> {
        let genes = text
            .split(['\n', '|'])
            .map(str::trim)
            .filter(|line| !line.is_empty() && !line.starts_with('#'))
            .map(str::parse)
            .collect::<Result<Vec<CostShareVector>>>()?;
        Genome::new(genes)
    }
}

impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let records: Vec<String> = self.genes.iter().map(|g| g.to_string()).collect();
        f.write_str(&records.join(" | "))
    }
}

impl FromStr for Genome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Genome::parse_text(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_price_conventions() {
        let g = CostShareVector::new(vec![0.5, 1.0, 1.0], vec![0.5, 0.0, 0.5]).unwrap();
        assert_eq!(g.unit_price(0), 1.0);
        assert_eq!(g.unit_price(1), 0.0);
        assert_eq!(g.unit_price(2), f64::INFINITY);
        assert!(g.excludes(1));
        assert!(!g.excludes(2));
    }

    #[test]
    fn rejects_unbalanced_payments() {
        assert!(CostShareVector::new(vec![0.0, 0.0], vec![0.5, 0.4]).is_err());
        assert!(CostShareVector::new(vec![0.0, 1.2], vec![0.5, 0.5]).is_err());
        assert!(CostShareVector::new(vec![0.0], vec![0.5, 0.5]).is_err());
        assert!(Genome::new(vec![]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let genome = Genome::new(vec![
            CostShareVector::new(vec![0.0, 0.0], vec![0.5, 0.5]).unwrap(),
            CostShareVector::new(vec![0.5, 1.0 / 3.0], vec![0.2, 0.8]).unwrap(),
        ])
        .unwrap();
        let text = genome.to_text();
        assert!(text.starts_with("T: 0,0 ; B: 0.5,0.5\n"));
        assert!(text.contains("0.333333333333"));
        let back = Genome::parse_text(&text).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.genes().iter().zip(genome.genes()) {
            assert!(a.l1_distance(b) < 1e-11);
        }
        let inline: Genome = genome.to_string().parse().unwrap();
        assert_eq!(inline, back);
    }

    #[test]
    fn sig12_formatting() {
        assert_eq!(fmt_sig12(0.5), "0.5");
        assert_eq!(fmt_sig12(1.0), "1");
        assert_eq!(fmt_sig12(2.0 / 3.0), "0.666666666667");
        assert_eq!(fmt_sig12(1e-20), "0.00000000000000000001");
    }
}
