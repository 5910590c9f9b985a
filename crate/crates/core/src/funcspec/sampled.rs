use std::io::Read;
use std::path::Path;

use super::{FuncError, Interval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Linear,
    /// Piecewise constant, holding the value of the left node.
    Step,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

/// Which CSV columns hold time and value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec {
    pub time: ColumnRef,
    pub value: ColumnRef,
    pub interpolation: Interpolation,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            time: ColumnRef::Index(0),
            value: ColumnRef::Index(1),
            interpolation: Interpolation::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledData {
    grid: Vec<f64>,
    samples: Vec<f64>,
    interpolation: Interpolation,
}

impl SampledData {
    pub fn new(grid: Vec<f64>, samples: Vec<f64>, interpolation: Interpolation) -> Result<Self, FuncError> {
        if grid.len() != samples.len() {
            return Err(FuncError::Csv(format!(
                "{} grid points but {} samples",
                grid.len(),
                samples.len()
            )));
        }
        if grid.len() < 2 {
            return Err(FuncError::TooFewSamples(grid.len()));
        }
        for (row, (t, v)) in grid.iter().zip(&samples).enumerate() {
            if !t.is_finite() {
                return Err(FuncError::BadValue {
                    row,
                    text: t.to_string(),
                });
            }
            if !v.is_finite() {
                return Err(FuncError::BadValue {
                    row,
                    text: v.to_string(),
                });
            }
        }
        if let Some(row) = grid.windows(2).position(|w| w[1] <= w[0]) {
            return Err(FuncError::NonMonotoneTime { row: row + 1 });
        }
        Ok(Self {
            grid,
            samples,
            interpolation,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn domain(&self) -> Interval {
        Interval {
            lo: self.grid[0],
            hi: self.grid[self.grid.len() - 1],
        }
    }

    /// Interpolated value; never extrapolates.
    pub fn eval(&self, x: f64) -> Result<f64, FuncError> {
        let d = self.domain();
        if !d.contains(x) {
            return Err(FuncError::OutOfDomain { x, domain: d });
        }
        let i = match self.grid.binary_search_by(|g| g.total_cmp(&x)) {
            Ok(i) => return Ok(self.samples[i]),
            Err(i) => i - 1,
        };
        let (x0, x1) = (self.grid[i], self.grid[i + 1]);
        let (y0, y1) = (self.samples[i], self.samples[i + 1]);
        Ok(match self.interpolation {
            Interpolation::Linear => {
                // Halved so that grids spanning most of the f64 range cannot overflow.
                let w = (0.5 * x - 0.5 * x0) / (0.5 * x1 - 0.5 * x0);
                (1.0 - w) * y0 + w * y1
            }
            Interpolation::Step => y0,
        })
    }

    pub(crate) fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        let start = self.grid.partition_point(|g| *g <= a);
        let end = self.grid.partition_point(|g| *g < b);
        self.grid[start..end].to_vec()
    }

    /// Reads comma-separated data with a header row.
    pub fn from_csv_reader<R: Read>(reader: R, spec: &ColumnSpec) -> Result<Self, FuncError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(|e| FuncError::Csv(e.to_string()))?.clone();
        let resolve = |c: &ColumnRef| -> Result<usize, FuncError> {
            match c {
                ColumnRef::Index(i) if *i < headers.len() => Ok(*i),
                ColumnRef::Index(i) => Err(FuncError::MissingColumn(format!("#{i}"))),
                ColumnRef::Name(n) => headers
                    .iter()
                    .position(|h| h == n)
                    .ok_or_else(|| FuncError::MissingColumn(n.clone())),
            }
        };
        let (ti, vi) = (resolve(&spec.time)?, resolve(&spec.value)?);
        let mut grid = Vec::new();
        let mut samples = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| FuncError::Csv(e.to_string()))?;
            let field = |i: usize| -> Result<f64, FuncError> {
                let text = rec.get(i).unwrap_or("");
                text.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| FuncError::BadValue {
                        row,
                        text: text.to_owned(),
                    })
            };
            grid.push(field(ti)?);
            samples.push(field(vi)?);
        }
        Self::new(grid, samples, spec.interpolation)
    }
}

/// Loads a sampled function from a CSV file.
pub fn load_samples<P: AsRef<Path>>(path: P, spec: &ColumnSpec) -> Result<SampledData, FuncError> {
    let file =
        std::fs::File::open(path.as_ref()).map_err(|e| FuncError::Csv(format!("{}: {e}", path.as_ref().display())))?;
    SampledData::from_csv_reader(std::io::BufReader::new(file), spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<SampledData, FuncError> {
        SampledData::from_csv_reader(text.as_bytes(), &ColumnSpec::default())
    }

    #[test]
    fn linear_interpolation() {
        let d = read("t,v\n0,0\n1,1\n2,4\n").unwrap();
        assert_eq!(d.eval(0.5).unwrap(), 0.5);
        assert_eq!(d.eval(1.5).unwrap(), 2.5);
        assert_eq!(d.eval(2.0).unwrap(), 4.0);
        assert!(matches!(d.eval(2.1), Err(FuncError::OutOfDomain { .. })));
        assert!(matches!(d.eval(-0.1), Err(FuncError::OutOfDomain { .. })));
    }

    #[test]
    fn extreme_grids_stay_finite() {
        let d = read("t,v\n-1e308,-1e308\n1e308,1e308\n").unwrap();
        assert_eq!(d.eval(0.0).unwrap(), 0.0);
        assert!(d.eval(5e307).unwrap().is_finite());
    }

    #[test]
    fn nonmonotone_time_rejected() {
        assert_eq!(read("t,v\n0,1\n0,2\n1,3\n"), Err(FuncError::NonMonotoneTime { row: 1 }));
    }

    #[test]
    fn named_columns_and_errors() {
        let spec = ColumnSpec {
            time: ColumnRef::Name("time".into()),
            value: ColumnRef::Name("y".into()),
            interpolation: Interpolation::Step,
        };
        let d = SampledData::from_csv_reader("y,time\n5,0\n7,1\n".as_bytes(), &spec).unwrap();
        assert_eq!(d.eval(0.9).unwrap(), 5.0);
        let spec = ColumnSpec {
            value: ColumnRef::Name("missing".into()),
            ..spec
        };
        assert!(matches!(
            SampledData::from_csv_reader("y,time\n5,0\n".as_bytes(), &spec),
            Err(FuncError::MissingColumn(_))
        ));
        assert!(matches!(read("t,v\n0,abc\n1,2\n"), Err(FuncError::BadValue { .. })));
        assert!(matches!(read("t,v\n0,1\n"), Err(FuncError::TooFewSamples(1))));
    }
}
