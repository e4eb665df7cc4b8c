//! Linear sketch of a streaming d-dimensional data cube.
//!
//! Each of the `R×C` estimators keeps one accumulator `Y = Σ v·S(update range)`
//! over its own 4-wise independent Gaussian variables `S`. For a query range
//! `Q`, `Y·S(Q)` is an unbiased estimate of the total mass inside `Q`; the
//! sketch reports the median over rows of the per-row mean.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::gaussian::GaussianErs;
use crate::randomness::{MasterSeed, Mode};
use crate::universe::{RangeD, Universe};

pub const MAGIC: &[u8; 8] = b"ERSSKTCH";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_ROWS: usize = 5;
pub const DEFAULT_COLS: usize = 16;

/// Independence order of the estimators' Gaussian variables.
pub const SKETCH_K: usize = 4;

const HEADER_LEN: usize = 8 + 4 * 5 + 32;

/// A point or range update with a signed weight.
#[derive(Debug, Clone, PartialEq)]
pub enum Update {
    Point { point: Vec<u64>, value: i64 },
    Range { range: RangeD, value: i64 },
}

impl Update {
    pub fn range(&self) -> Result<RangeD> {
        match self {
            Update::Point { point, .. } => RangeD::unit(point),
            Update::Range { range, .. } => Ok(range.clone()),
        }
    }

    pub fn value(&self) -> i64 {
        match self {
            Update::Point { value, .. } | Update::Range { value, .. } => *value,
        }
    }
}

/// One line of the update-stream text format.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamRecord {
    Update(Update),
    Query(RangeD),
}

impl StreamRecord {
    /// Parses `P i.. v`, `R l.. u.. v` or `Q l.. u..`. Blank lines and lines
    /// starting with `#` yield `None`. `line_no` is 1-based and only used in errors.
    pub fn parse(line: &str, dims: usize, line_no: usize) -> Result<Option<StreamRecord>> {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            return Ok(None);
        }
        let err = |msg: String| Error::Parse { line: line_no, msg };
        let mut fields = line.split_whitespace();
        let tag = fields.next().unwrap_or_default();
        let rest: Vec<&str> = fields.collect();
        let expected = match tag {
            "P" => dims + 1,
            "R" => 2 * dims + 1,
            "Q" => 2 * dims,
            other => return Err(err(format!("unknown record type '{other}' (expected P, R or Q)"))),
        };
        if rest.len() != expected {
            return Err(err(format!("'{tag}' takes {expected} fields for d={dims}, got {}", rest.len())));
        }
        let coords = |s: &[&str]| -> Result<Vec<u64>> {
            s.iter().map(|t| t.parse::<u64>().map_err(|e| err(format!("bad coordinate '{t}': {e}")))).collect()
        };
        let value = |t: &str| t.parse::<i64>().map_err(|e| err(format!("bad value '{t}': {e}")));
        let range = |s: &[&str]| -> Result<RangeD> {
            let c = coords(s)?;
            RangeD::new(&c[..dims], &c[dims..]).map_err(|e| err(e.to_string()))
        };
        Ok(Some(match tag {
            "P" => StreamRecord::Update(Update::Point { point: coords(&rest[..dims])?, value: value(rest[dims])? }),
            "R" => {
                StreamRecord::Update(Update::Range { range: range(&rest[..2 * dims])?, value: value(rest[2 * dims])? })
            }
            _ => StreamRecord::Query(range(&rest)?),
        }))
    }
}

impl std::fmt::Display for StreamRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let bounds = |r: &RangeD| {
            let lo: Vec<String> = r.axes().iter().map(|a| a.lo.to_string()).collect();
            let hi: Vec<String> = r.axes().iter().map(|a| a.hi.to_string()).collect();
            format!("{} {}", lo.join(" "), hi.join(" "))
        };
        match self {
            StreamRecord::Update(Update::Point { point, value }) => {
                let p: Vec<String> = point.iter().map(u64::to_string).collect();
                write!(f, "P {} {value}", p.join(" "))
            }
            StreamRecord::Update(Update::Range { range, value }) => write!(f, "R {} {value}", bounds(range)),
            StreamRecord::Query(r) => write!(f, "Q {}", bounds(r)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sketch {
    universe: Universe,
    rows: usize,
    cols: usize,
    seed: MasterSeed,
    estimators: Vec<GaussianErs>,
    acc: Vec<f64>,
}

impl Sketch {
    pub fn new(universe: Universe, rows: usize, cols: usize, seed: MasterSeed) -> Result<Self> {
        if rows == 0 || cols == 0 || rows > u32::MAX as usize || cols > u32::MAX as usize {
            return Err(Error::Unsupported(format!("sketch shape {rows}x{cols} is not allowed")));
        }
        let estimators = (0..rows * cols)
            .map(|i| GaussianErs::new(universe, Mode::KWise { k: SKETCH_K }, seed.derive(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { universe, rows, cols, seed, estimators, acc: vec![0.0; rows * cols] })
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn seed(&self) -> &MasterSeed {
        &self.seed
    }

    pub fn accumulators(&self) -> &[f64] {
        &self.acc
    }

    /// Applies one update to every estimator; on error the state is unchanged.
    pub fn apply(&mut self, upd: &Update) -> Result<()> {
        let r = upd.range()?;
        r.check(&self.universe)?;
        let sums = self.estimators.iter().map(|e| e.range_sum(&r)).collect::<Result<Vec<_>>>()?;
        let v = upd.value() as f64;
        for (a, s) in self.acc.iter_mut().zip(sums) {
            *a += v * s;
        }
        Ok(())
    }

    /// Per-estimator products `Y·S(r)`, row-major.
    pub fn raw_estimates(&self, r: &RangeD) -> Result<Vec<f64>> {
        r.check(&self.universe)?;
        self.estimators.iter().zip(&self.acc).map(|(e, &y)| Ok(y * e.range_sum(r)?)).collect()
    }

    /// Median over rows of the row-mean estimate.
    pub fn query(&self, r: &RangeD) -> Result<f64> {
        let raw = self.raw_estimates(r)?;
        let mut means: Vec<f64> = raw.chunks(self.cols).map(|row| row.iter().sum::<f64>() / self.cols as f64).collect();
        means.sort_by(f64::total_cmp);
        let mid = means.len() / 2;
        Ok(if means.len() % 2 == 1 { means[mid] } else { 0.5 * (means[mid - 1] + means[mid]) })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.acc.len());
        out.extend_from_slice(MAGIC);
        for v in [
            FORMAT_VERSION,
            self.universe.dims() as u32,
            self.universe.log2_delta(),
            self.rows as u32,
            self.cols as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(self.seed.as_bytes());
        for a in &self.acc {
            out.extend_from_slice(&a.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Corrupt(format!("sketch file is {} bytes, header needs {HEADER_LEN}", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Corrupt("not a sketch file (bad magic)".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes"));
        let version = word(0);
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        let (dims, l, rows, cols) = (word(1) as usize, word(2), word(3) as usize, word(4) as usize);
        let seed = MasterSeed::from_bytes(bytes[28..60].try_into().expect("32 bytes"));
        let cells =
            rows.checked_mul(cols).ok_or_else(|| Error::Corrupt(format!("sketch shape {rows}x{cols} overflows")))?;
        let body = &bytes[HEADER_LEN..];
        if Some(body.len()) != cells.checked_mul(8) {
            return Err(Error::Corrupt(format!(
                "expected {cells} accumulators ({} bytes), found {} bytes",
                cells.saturating_mul(8),
                body.len()
            )));
        }
        let universe = Universe::new(dims, l).map_err(|e| Error::Corrupt(e.to_string()))?;
        let mut sketch = Sketch::new(universe, rows, cols, seed).map_err(|e| Error::Corrupt(e.to_string()))?;
        for (a, chunk) in sketch.acc.iter_mut().zip(body.chunks_exact(8)) {
            *a = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        Ok(sketch)
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Applies every update in `input` and writes `EST <value>` for each query.
    pub fn process_stream<R: BufRead, W: Write>(&mut self, input: R, mut out: W) -> Result<()> {
        for (i, line) in input.lines().enumerate() {
            match StreamRecord::parse(&line?, self.universe.dims(), i + 1)? {
                None => {}
                Some(StreamRecord::Update(u)) => {
                    self.apply(&u).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?
                }
                Some(StreamRecord::Query(r)) => {
                    let est = self.query(&r).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
                    writeln!(out, "EST {est}")?;
                }
            }
        }
        Ok(())
    }
}

/// Dense exact counter with the same update and query interface.
#[derive(Debug, Clone)]
pub struct ExactCounter {
    universe: Universe,
    cells: Vec<i128>,
}

impl ExactCounter {
    pub fn new(universe: Universe, cap: u64) -> Result<Self> {
        let n = universe
            .cells()
            .filter(|&n| n <= cap)
            .ok_or(Error::OracleTooLarge { size: universe.cells().unwrap_or(u64::MAX), cap })?;
        Ok(Self { universe, cells: vec![0; n as usize] })
    }

    fn for_each_in(&self, r: &RangeD, mut f: impl FnMut(usize)) {
        let delta = self.universe.delta();
        let mut point: Vec<u64> = r.axes().iter().map(|a| a.lo).collect();
        loop {
            f(point.iter().fold(0u64, |acc, &i| acc * delta + i) as usize);
            let mut t = point.len();
            loop {
                if t == 0 {
                    return;
                }
                t -= 1;
                point[t] += 1;
                if point[t] < r.axes()[t].hi {
                    break;
                }
                point[t] = r.axes()[t].lo;
            }
        }
    }

    pub fn apply(&mut self, upd: &Update) -> Result<()> {
        let r = upd.range()?;
        r.check(&self.universe)?;
        let v = upd.value() as i128;
        let mut idx = Vec::new();
        self.for_each_in(&r, |i| idx.push(i));
        for i in idx {
            self.cells[i] += v;
        }
        Ok(())
    }

    pub fn query(&self, r: &RangeD) -> Result<i128> {
        r.check(&self.universe)?;
        let mut total = 0i128;
        self.for_each_in(r, |i| total += self.cells[i]);
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uni(d: usize, l: u32) -> Universe {
        Universe::new(d, l).unwrap()
    }

    fn sketch(d: usize, l: u32, s: u64) -> Sketch {
        Sketch::new(uni(d, l), 3, 4, MasterSeed::from_u64(s)).unwrap()
    }

    #[test]
    fn fresh_sketch_answers_zero() {
        let s = sketch(2, 4, 1);
        assert_eq!(s.query(&RangeD::new(&[0, 0], &[5, 9]).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn doubled_update_equals_two_updates() {
        let mut a = sketch(2, 4, 2);
        let mut b = a.clone();
        let p = Update::Point { point: vec![3, 7], value: 5 };
        a.apply(&p).unwrap();
        a.apply(&p).unwrap();
        b.apply(&Update::Point { point: vec![3, 7], value: 10 }).unwrap();
        for (x, y) in a.accumulators().iter().zip(b.accumulators()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn opposite_updates_cancel() {
        let mut s = sketch(1, 6, 3);
        s.apply(&Update::Point { point: vec![9], value: 4 }).unwrap();
        let before = s.accumulators().to_vec();
        let r = RangeD::new(&[3], &[40]).unwrap();
        s.apply(&Update::Range { range: r.clone(), value: 7 }).unwrap();
        s.apply(&Update::Range { range: r, value: -7 }).unwrap();
        for (x, y) in s.accumulators().iter().zip(before) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn full_universe_update_adds_the_scaled_root_coefficient() {
        let u = uni(2, 3);
        let mut s = Sketch::new(u, 1, 2, MasterSeed::from_u64(4)).unwrap();
        s.apply(&Update::Range { range: RangeD::full(&u), value: 1 }).unwrap();
        for (i, &y) in s.accumulators().iter().enumerate() {
            let g = GaussianErs::new(u, Mode::KWise { k: 4 }, MasterSeed::from_u64(4).derive(i as u64)).unwrap();
            let root =
                g.coefficient(&crate::universe::CoeffRef::new(vec![crate::universe::HaarIndex::AVERAGE; 2])).unwrap();
            assert!((y - 8.0 * root).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_updates_leave_state_untouched() {
        let mut s = sketch(1, 4, 5);
        s.apply(&Update::Point { point: vec![1], value: 1 }).unwrap();
        let before = s.accumulators().to_vec();
        assert!(s.apply(&Update::Point { point: vec![16], value: 1 }).is_err());
        assert!(s.apply(&Update::Point { point: vec![1, 1], value: 1 }).is_err());
        assert_eq!(s.accumulators(), &before[..]);
    }

    #[test]
    fn persistence_round_trip() {
        let mut s = sketch(2, 3, 6);
        s.apply(&Update::Range { range: RangeD::new(&[1, 2], &[5, 8]).unwrap(), value: -3 }).unwrap();
        s.apply(&Update::Point { point: vec![0, 7], value: 11 }).unwrap();
        let bytes = s.to_bytes();
        let back = Sketch::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.rows(), 3);
        assert_eq!(back.seed(), s.seed());
        let r = RangeD::new(&[0, 1], &[6, 8]).unwrap();
        assert_eq!(back.query(&r).unwrap().to_bits(), s.query(&r).unwrap().to_bits());

        assert!(matches!(Sketch::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Corrupt(_))));
        assert!(matches!(Sketch::from_bytes(&bytes[..20]), Err(Error::Corrupt(_))));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(Sketch::from_bytes(&longer), Err(Error::Corrupt(_))));
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 2;
        assert!(matches!(Sketch::from_bytes(&wrong_version), Err(Error::VersionMismatch { found: 2, expected: 1 })));
        let mut bad_magic = bytes;
        bad_magic[0] = b'X';
        assert!(matches!(Sketch::from_bytes(&bad_magic), Err(Error::Corrupt(_))));
    }

    #[test]
    fn record_parsing() {
        let p = StreamRecord::parse("P 3 4 -2", 2, 1).unwrap().unwrap();
        assert_eq!(p, StreamRecord::Update(Update::Point { point: vec![3, 4], value: -2 }));
        let r = StreamRecord::parse("R 1 2 3 4 7", 2, 1).unwrap().unwrap();
        assert_eq!(r.to_string(), "R 1 2 3 4 7");
        let q = StreamRecord::parse("  Q 0 5  ", 1, 1).unwrap().unwrap();
        assert_eq!(q, StreamRecord::Query(RangeD::new(&[0], &[5]).unwrap()));
        assert_eq!(StreamRecord::parse("# note", 1, 1).unwrap(), None);
        assert_eq!(StreamRecord::parse("", 1, 1).unwrap(), None);
        assert!(matches!(StreamRecord::parse("X 1", 1, 7), Err(Error::Parse { line: 7, .. })));
        assert!(matches!(StreamRecord::parse("P 1", 1, 2), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(StreamRecord::parse("Q 4 2", 1, 3), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(StreamRecord::parse("P a 1", 1, 4), Err(Error::Parse { line: 4, .. })));
    }

    #[test]
    fn stream_processing() {
        let mut s = sketch(1, 4, 7);
        let mut out = Vec::new();
        s.process_stream("".as_bytes(), &mut out).unwrap();
        assert!(out.is_empty());
        let mut s2 = s.clone();
        s.process_stream("P 3 5\nQ 0 8\n# c\nQ 8 16\n".as_bytes(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines.iter().all(|l| l.starts_with("EST ")));
        assert!(matches!(
            s2.process_stream("P 3 5\nP 99 1\n".as_bytes(), Vec::new()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn exact_counter_examples() {
        let u = uni(2, 3);
        let mut c = ExactCounter::new(u, 4096).unwrap();
        assert_eq!(c.query(&RangeD::full(&u)).unwrap(), 0);
        c.apply(&Update::Point { point: vec![2, 3], value: 4 }).unwrap();
        c.apply(&Update::Point { point: vec![2, 3], value: 4 }).unwrap();
        assert_eq!(c.query(&RangeD::unit(&[2, 3]).unwrap()).unwrap(), 8);
        let r = RangeD::new(&[1, 1], &[4, 6]).unwrap();
        c.apply(&Update::Range { range: r.clone(), value: 3 }).unwrap();
        c.apply(&Update::Range { range: r, value: -3 }).unwrap();
        assert_eq!(c.query(&RangeD::full(&u)).unwrap(), 8);
        c.apply(&Update::Range { range: RangeD::full(&u), value: 1 }).unwrap();
        assert_eq!(c.query(&RangeD::full(&u)).unwrap(), 72);
        assert!(ExactCounter::new(uni(2, 7), 4096).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn update_order_does_not_matter(
            s in any::<u64>(),
            ups in proptest::collection::vec((0u64..16, 1u64..8, -50i64..50), 1..12),
        ) {
            let updates: Vec<Update> = ups.iter().map(|&(lo, len, v)| {
                Update::Range { range: RangeD::new(&[lo], &[(lo + len).min(16)]).unwrap(), value: v }
            }).collect();
            let mut fwd = sketch(1, 4, s);
            let mut rev = fwd.clone();
            for u in &updates { fwd.apply(u).unwrap(); }
            for u in updates.iter().rev() { rev.apply(u).unwrap(); }
            for (a, b) in fwd.accumulators().iter().zip(rev.accumulators()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
