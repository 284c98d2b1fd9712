//! Immune masks: the set of directed node pairs locked in their clean state.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One immunized entry in selection order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub round: usize,
    pub src: usize,
    pub dst: usize,
    pub value: f64,
}

/// Mask `A_c` with 1 everywhere except at immunized entries.
///
/// The local budget of node `t` counts immunized entries in row `t` and
/// column `t` together; `None` means unlimited.
#[derive(Debug, Clone, PartialEq)]
pub struct ImmuneMask {
    num_nodes: usize,
    global_budget: usize,
    local_budget: Vec<Option<usize>>,
    zeros: BTreeSet<(usize, usize)>,
    incident: Vec<usize>,
    trace: Vec<Selection>,
}

impl ImmuneMask {
    pub fn new(num_nodes: usize, global_budget: usize, local_budget: Vec<Option<usize>>) -> Result<Self> {
        if local_budget.len() != num_nodes {
            return Err(Error::Shape(format!(
                "{} local budgets for {num_nodes} nodes",
                local_budget.len()
            )));
        }
        Ok(Self {
            num_nodes,
            global_budget,
            local_budget,
            zeros: BTreeSet::new(),
            incident: vec![0; num_nodes],
            trace: Vec::new(),
        })
    }

    /// All-ones mask with no budget limits.
    pub fn unconstrained(num_nodes: usize) -> Self {
        Self::new(num_nodes, num_nodes * num_nodes, vec![None; num_nodes]).expect("sizes agree")
    }

    /// Unconstrained mask with the given entries immunized.
    pub fn from_entries(num_nodes: usize, entries: &[(usize, usize)]) -> Result<Self> {
        let mut mask = Self::unconstrained(num_nodes);
        for (round, &(i, j)) in entries.iter().enumerate() {
            mask.immunize(i, j, round, 0.0)?;
        }
        Ok(mask)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn global_budget(&self) -> usize {
        self.global_budget
    }

    pub fn local_budget(&self) -> &[Option<usize>] {
        &self.local_budget
    }

    /// Mask entry: 0 if immunized, 1 otherwise.
    pub fn value(&self, i: usize, j: usize) -> u8 {
        u8::from(!self.is_immunized(i, j))
    }

    pub fn is_immunized(&self, i: usize, j: usize) -> bool {
        self.zeros.contains(&(i, j))
    }

    pub fn num_immunized(&self) -> usize {
        self.zeros.len()
    }

    pub fn remaining(&self) -> usize {
        self.global_budget.saturating_sub(self.zeros.len())
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.zeros.iter().copied()
    }

    pub fn trace(&self) -> &[Selection] {
        &self.trace
    }

    /// Immunized entries incident to node `t` (row plus column).
    pub fn incident(&self, t: usize) -> usize {
        self.incident[t]
    }

    fn local_room(&self, t: usize, extra: usize) -> bool {
        self.local_budget[t].is_none_or(|c| self.incident[t] + extra <= c)
    }

    pub fn can_immunize(&self, i: usize, j: usize) -> bool {
        i != j
            && i < self.num_nodes
            && j < self.num_nodes
            && !self.is_immunized(i, j)
            && self.zeros.len() < self.global_budget
            && self.local_room(i, 1)
            && self.local_room(j, 1)
    }

    /// Feasibility of locking `(i, j)` and `(j, i)` together.
    pub fn can_immunize_pair(&self, i: usize, j: usize) -> bool {
        let new = usize::from(!self.is_immunized(i, j)) + usize::from(!self.is_immunized(j, i));
        i != j
            && i < self.num_nodes
            && j < self.num_nodes
            && new > 0
            && self.zeros.len() + new <= self.global_budget
            && self.local_room(i, new)
            && self.local_room(j, new)
    }

    pub fn immunize(&mut self, i: usize, j: usize, round: usize, value: f64) -> Result<()> {
        if !self.can_immunize(i, j) {
            return Err(Error::InvalidMask(format!("cannot immunize ({i}, {j}) within budget")));
        }
        self.zeros.insert((i, j));
        self.incident[i] += 1;
        self.incident[j] += 1;
        self.trace.push(Selection {
            round,
            src: i,
            dst: j,
            value,
        });
        Ok(())
    }

    /// First `count` selections of this mask under the same budgets.
    pub fn prefix(&self, count: usize) -> ImmuneMask {
        let mut out = ImmuneMask::new(self.num_nodes, count, self.local_budget.clone()).expect("sizes agree");
        for s in self.trace.iter().take(count) {
            out.immunize(s.src, s.dst, s.round, s.value)
                .expect("prefix of a feasible mask is feasible");
        }
        out
    }

    pub fn check_feasible(&self) -> Result<()> {
        if self.zeros.len() > self.global_budget {
            return Err(Error::InvalidMask(format!(
                "{} immunized entries exceed global budget {}",
                self.zeros.len(),
                self.global_budget
            )));
        }
        for t in 0..self.num_nodes {
            if !self.local_room(t, 0) {
                return Err(Error::InvalidMask(format!(
                    "node {t} has {} immunized entries, local budget {:?}",
                    self.incident[t], self.local_budget[t]
                )));
            }
        }
        Ok(())
    }

    /// Writes `round,src,dst,value`, optionally prefixed by `method,seed`, after a comment line.
    pub fn write_csv(&self, path: &Path, header: &str, tag: Option<(&str, u64)>) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        std::io::Write::write_all(&mut file, format!("# {header}\n").as_bytes())?;
        let mut w = csv::Writer::from_writer(file);
        match tag {
            Some(_) => w.write_record(["method", "seed", "round", "src", "dst", "value"])?,
            None => w.write_record(["round", "src", "dst", "value"])?,
        }
        for s in &self.trace {
            let mut record = Vec::with_capacity(6);
            if let Some((method, seed)) = tag {
                record.push(method.to_string());
                record.push(seed.to_string());
            }
            record.extend([
                s.round.to_string(),
                s.src.to_string(),
                s.dst.to_string(),
                s.value.to_string(),
            ]);
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a mask written by [`ImmuneMask::write_csv`] as an unconstrained mask.
    pub fn read_csv(path: &Path, num_nodes: usize) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let headers = r.headers()?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("missing column {name}"),
            })
        };
        let (ci, cs, cd, cv) = (col("round")?, col("src")?, col("dst")?, col("value")?);
        let mut mask = Self::unconstrained(num_nodes);
        for (line, record) in r.records().enumerate() {
            let record = record?;
            let field = |c: usize| record.get(c).unwrap_or("").trim().to_string();
            let bad = |m: &str| Error::Parse {
                path: path.to_path_buf(),
                line: line + 2,
                message: m.to_string(),
            };
            let round = field(ci).parse().map_err(|_| bad("bad round"))?;
            let src = field(cs).parse().map_err(|_| bad("bad src"))?;
            let dst = field(cd).parse().map_err(|_| bad("bad dst"))?;
            let value = field(cv).parse().map_err(|_| bad("bad value"))?;
            mask.immunize(src, dst, round, value)?;
        }
        Ok(mask)
    }
}
