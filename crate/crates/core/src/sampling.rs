//! Sample generation for SRS, imperfect RSS and imperfect PROS designs, plus
//! finite-population PROS draws ranked by an auxiliary variable.
//!
//! Every sampler takes an explicit RNG so callers control streams; the same
//! seed always reproduces the same sample bit for bit.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution as _, Normal, Open01};
use serde::{Deserialize, Serialize};

use crate::distributions::{Design, Distribution, MisplacementMatrix, RssErrorMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignTag {
    Srs,
    Rss,
    Pros,
}

/// One measured unit: its value, zero-based nominal subset and cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub value: f64,
    pub subset: usize,
    pub cycle: usize,
}

/// A balanced sample: exactly one observation per (subset, cycle) pair.
///
/// SRS samples are stored as `n = m = 1` with one cycle per draw, which keeps
/// every estimator on a single code path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsSample {
    design: Design,
    tag: DesignTag,
    observations: Vec<Observation>,
}

impl ProsSample {
    /// Validates structure and stores observations in cycle-major order.
    pub fn new(design: Design, tag: DesignTag, mut observations: Vec<Observation>) -> Result<Self> {
        let n = design.n_subsets;
        let l = design.cycles;
        if observations.len() != n * l {
            return Err(Error::Structure(format!(
                "expected {} observations (n = {n}, L = {l}), got {}",
                n * l,
                observations.len()
            )));
        }
        let mut seen = vec![false; n * l];
        for (i, obs) in observations.iter().enumerate() {
            if !obs.value.is_finite() {
                return Err(Error::Structure(format!("observation {} is not finite", i + 1)));
            }
            if obs.subset >= n || obs.cycle >= l {
                return Err(Error::Structure(format!(
                    "observation {} has subset {} / cycle {} outside n = {n}, L = {l}",
                    i + 1,
                    obs.subset + 1,
                    obs.cycle + 1
                )));
            }
            let slot = obs.cycle * n + obs.subset;
            if seen[slot] {
                return Err(Error::Structure(format!(
                    "duplicate observation for subset {} in cycle {}",
                    obs.subset + 1,
                    obs.cycle + 1
                )));
            }
            seen[slot] = true;
        }
        observations.sort_by_key(|o| (o.cycle, o.subset));
        Ok(ProsSample {
            design,
            tag,
            observations,
        })
    }

    /// Builds a sample from labelled records, inferring `n` and `L` from the
    /// labels. Each subset must appear the same number of times.
    pub fn from_records(observations: Vec<Observation>, subset_size: usize, tag: DesignTag) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Structure("sample is empty".into()));
        }
        let n = observations.iter().map(|o| o.subset).max().unwrap_or(0) + 1;
        let mut counts = vec![0usize; n];
        for o in &observations {
            counts[o.subset] += 1;
        }
        let l = counts[0];
        if let Some(j) = counts.iter().position(|&c| c != l) {
            return Err(Error::Structure(format!(
                "subset {} has {} observations but subset 1 has {l}",
                j + 1,
                counts[j]
            )));
        }
        let design = Design::new(n, subset_size, l)?;
        ProsSample::new(design, tag, observations)
    }

    /// Treats plain values as an SRS.
    pub fn from_srs(values: &[f64]) -> Result<Self> {
        let design = Design::new(1, 1, values.len().max(1))?;
        if values.is_empty() {
            return Err(Error::Structure("sample is empty".into()));
        }
        let obs = values
            .iter()
            .enumerate()
            .map(|(i, &value)| Observation {
                value,
                subset: 0,
                cycle: i,
            })
            .collect();
        ProsSample::new(design, DesignTag::Srs, obs)
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn tag(&self) -> DesignTag {
        self.tag
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// All values in cycle-major order.
    pub fn values(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.value).collect()
    }

    pub fn subset_values(&self, j: usize) -> Vec<f64> {
        self.observations
            .iter()
            .filter(|o| o.subset == j)
            .map(|o| o.value)
            .collect()
    }

    pub fn cycle_values(&self, i: usize) -> &[Observation] {
        let n = self.design.n_subsets;
        &self.observations[i * n..(i + 1) * n]
    }

    /// Multiplies every value by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        for o in &mut self.observations {
            o.value *= factor;
        }
        self
    }

    /// Writes `value,subset,cycle` rows with one-based labels.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["value", "subset", "cycle"])?;
        for o in &self.observations {
            w.write_record([
                format_float(o.value),
                (o.subset + 1).to_string(),
                (o.cycle + 1).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `value,subset,cycle` rows (one-based labels, header required).
    pub fn read_csv<R: Read>(reader: R, subset_size: usize, tag: DesignTag) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::ingest(Some(1), format!("missing column {name:?}")))
        };
        let (vi, si, ci) = (col("value")?, col("subset")?, col("cycle")?);
        let mut obs = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line());
            let value = parse_field::<f64>(&rec, vi, "value", line)?;
            if !value.is_finite() {
                return Err(Error::ingest(line, "value is not finite"));
            }
            let subset = parse_field::<usize>(&rec, si, "subset", line)?;
            let cycle = parse_field::<usize>(&rec, ci, "cycle", line)?;
            if subset == 0 || cycle == 0 {
                return Err(Error::ingest(line, "subset and cycle labels are 1-based"));
            }
            obs.push(Observation {
                value,
                subset: subset - 1,
                cycle: cycle - 1,
            });
        }
        if obs.is_empty() {
            return Err(Error::ingest(None, "no data rows"));
        }
        ProsSample::from_records(obs, subset_size, tag)
    }
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str, line: Option<u64>) -> Result<T> {
    let raw = rec
        .get(idx)
        .ok_or_else(|| Error::ingest(line, format!("missing field {name:?}")))?;
    raw.parse::<T>()
        .map_err(|_| Error::ingest(line, format!("cannot parse {name} {raw:?}")))
}

/// Shortest decimal that round-trips exactly; negative zero prints as `0`.
pub fn format_float(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v}")
    }
}

/// Draws `count` i.i.d. values.
pub fn draw_srs<R: Rng + ?Sized>(dist: &Distribution, count: usize, rng: &mut R) -> Result<Vec<f64>> {
    let sampler = dist.sampler()?;
    Ok((0..count).map(|_| sampler.sample(rng)).collect())
}

/// Index drawn from a discrete distribution given by `probs` (summing to 1).
fn draw_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left a sliver above the cumulative sum; take the last
    // positive-probability index.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Imperfect PROS sample: for each cycle and nominal subset `j`, the actual
/// block `h` is drawn from row `j` of `alpha`, then a uniformly chosen order
/// statistic from block `h` of a fresh set of `s` draws is recorded.
pub fn draw_pros<R: Rng + ?Sized>(
    dist: &Distribution,
    design: &Design,
    alpha: &MisplacementMatrix,
    rng: &mut R,
) -> Result<ProsSample> {
    draw_ranked(dist, design, alpha, DesignTag::Pros, rng)
}

/// Imperfect RSS with set size `n`: slot `r` records order statistic `k`
/// with probability `p[r][k]`. Equivalent to PROS with `m = 1`.
pub fn draw_rss<R: Rng + ?Sized>(
    dist: &Distribution,
    n: usize,
    cycles: usize,
    p: &RssErrorMatrix,
    rng: &mut R,
) -> Result<ProsSample> {
    let design = Design::new(n, 1, cycles)?;
    draw_ranked(dist, &design, p, DesignTag::Rss, rng)
}

fn draw_ranked<R: Rng + ?Sized>(
    dist: &Distribution,
    design: &Design,
    alpha: &MisplacementMatrix,
    tag: DesignTag,
    rng: &mut R,
) -> Result<ProsSample> {
    if alpha.dim() != design.n_subsets {
        return Err(Error::DesignMismatch(format!(
            "misplacement matrix is {0}×{0} but the design has n = {1} subsets",
            alpha.dim(),
            design.n_subsets
        )));
    }
    let sampler = dist.sampler()?;
    let s = design.set_size();
    let m = design.subset_size;
    let mut set = vec![0.0; s];
    let mut obs = Vec::with_capacity(design.sample_size());
    for cycle in 0..design.cycles {
        for j in 0..design.n_subsets {
            let h = if design.n_subsets == 1 {
                0
            } else {
                draw_index(alpha.row(j), rng)
            };
            for v in set.iter_mut() {
                *v = sampler.sample(rng);
            }
            let rank0 = h * m + if m == 1 { 0 } else { rng.random_range(0..m) };
            let (_, value, _) = set.select_nth_unstable_by(rank0, f64::total_cmp);
            obs.push(Observation {
                value: *value,
                subset: j,
                cycle,
            });
        }
    }
    ProsSample::new(*design, tag, obs)
}

/// One unit of a finite population: variable of interest `y`, auxiliary `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub y: f64,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinitePopulation {
    units: Vec<Unit>,
}

impl FinitePopulation {
    pub fn new(units: Vec<Unit>) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::ingest(None, "population is empty"));
        }
        if let Some(i) = units.iter().position(|u| !(u.x.is_finite() && u.y.is_finite())) {
            return Err(Error::ingest(None, format!("unit {} has a non-finite value", i + 1)));
        }
        Ok(FinitePopulation { units })
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn y_values(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.y).collect()
    }

    /// Multiplies every `y` by `factor`.
    pub fn scale_y(mut self, factor: f64) -> Self {
        for u in &mut self.units {
            u.y *= factor;
        }
        self
    }

    /// Reads a headed CSV, picking the `y` and `x` columns by name. Rows with
    /// missing or unparsable numbers are rejected with their line number.
    pub fn read_csv<R: Read>(reader: R, y_column: &str, x_column: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::ingest(Some(1), format!("missing column {name:?}")))
        };
        let (yi, xi) = (col(y_column)?, col(x_column)?);
        let mut units = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line());
            let y = parse_field::<f64>(&rec, yi, y_column, line)?;
            let x = parse_field::<f64>(&rec, xi, x_column, line)?;
            if !(y.is_finite() && x.is_finite()) {
                return Err(Error::ingest(line, "non-finite value"));
            }
            units.push(Unit { y, x });
        }
        FinitePopulation::new(units)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["y", "x"])?;
        for u in &self.units {
            w.write_record([format_float(u.y), format_float(u.x)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// PROS sample from a finite population, drawn with replacement. Each set of
/// `s` units is ordered by the auxiliary `x` (ties broken by a uniform random
/// jitter key), split into the rank blocks, and the `y` of a uniformly chosen
/// unit of the nominal block is recorded. With `m = 1` this is RSS.
pub fn draw_pros_finite<R: Rng + ?Sized>(pop: &FinitePopulation, design: &Design, rng: &mut R) -> Result<ProsSample> {
    if pop.is_empty() {
        return Err(Error::ingest(None, "population is empty"));
    }
    let s = design.set_size();
    if pop.len() < s {
        return Err(Error::DesignMismatch(format!(
            "population has {} units, fewer than the set size {s}",
            pop.len()
        )));
    }
    let m = design.subset_size;
    let tag = if m == 1 { DesignTag::Rss } else { DesignTag::Pros };
    let mut set = Vec::with_capacity(s);
    let mut obs = Vec::with_capacity(design.sample_size());
    for cycle in 0..design.cycles {
        for j in 0..design.n_subsets {
            draw_ranked_set(pop, s, &mut set, rng);
            let rank0 = j * m + if m == 1 { 0 } else { rng.random_range(0..m) };
            obs.push(Observation {
                value: set[rank0].y,
                subset: j,
                cycle,
            });
        }
    }
    ProsSample::new(*design, tag, obs)
}

/// Fills `set` with `s` units drawn with replacement, ordered by `x` with
/// ties broken by a uniform jitter key.
fn draw_ranked_set<R: Rng + ?Sized>(pop: &FinitePopulation, s: usize, set: &mut Vec<Unit>, rng: &mut R) {
    let mut keyed: Vec<(f64, f64, Unit)> = (0..s)
        .map(|_| {
            let unit = pop.units[rng.random_range(0..pop.len())];
            let jitter: f64 = Open01.sample(rng);
            (unit.x, jitter, unit)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    set.clear();
    set.extend(keyed.into_iter().map(|k| k.2));
}

/// SRS of `count` `y`-values drawn with replacement.
pub fn draw_srs_finite<R: Rng + ?Sized>(pop: &FinitePopulation, count: usize, rng: &mut R) -> Result<Vec<f64>> {
    if pop.is_empty() {
        return Err(Error::ingest(None, "population is empty"));
    }
    Ok((0..count)
        .map(|_| pop.units[rng.random_range(0..pop.len())].y)
        .collect())
}

/// Synthetic stand-in for a yield/acreage population: bivariate normal with
/// correlation `rho`, `y` centred at 30 (sd 8) and `x` at 100 (sd 25).
pub fn synthesize_population<R: Rng + ?Sized>(size: usize, rho: f64, rng: &mut R) -> Result<FinitePopulation> {
    if size == 0 {
        return Err(Error::InvalidParameter("population size must be positive".into()));
    }
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::InvalidParameter(format!("correlation {rho} outside [-1, 1]")));
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    let tail = (1.0 - rho * rho).sqrt();
    let units = (0..size)
        .map(|_| {
            let zx: f64 = z.sample(rng);
            let ze: f64 = z.sample(rng);
            let zy = rho * zx + tail * ze;
            Unit {
                y: 30.0 + 8.0 * zy,
                x: 100.0 + 25.0 * zx,
            }
        })
        .collect();
    FinitePopulation::new(units)
}
