use std::fmt;
use std::str::FromStr;

/// A scalar `N` or an inclusive `start:end:step` range of positive integers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sweep(Vec<usize>);

impl Sweep {
    pub fn values(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepError(String);

impl fmt::Display for SweepError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SweepError {}

fn positive(s: &str) -> Result<usize, SweepError> {
    match s.trim().parse::<usize>() {
        Ok(0) | Err(_) => Err(SweepError(format!("`{s}` is not a positive integer"))),
        Ok(v) => Ok(v),
    }
}

impl FromStr for Sweep {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, SweepError> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            [v] => Ok(Sweep(vec![positive(v)?])),
            [a, b, c] => {
                let (start, end, step) = (positive(a)?, positive(b)?, positive(c)?);
                if start > end {
                    return Err(SweepError(format!("sweep start {start} exceeds end {end}")));
                }
                Ok(Sweep((start..=end).step_by(step).collect()))
            }
            _ => Err(SweepError(format!("`{s}` is neither N nor start:end:step"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_scalars_and_ranges() {
        assert_eq!("7".parse::<Sweep>().unwrap().values(), &[7]);
        assert_eq!(
            "1024:4096:1024".parse::<Sweep>().unwrap().values(),
            &[1024, 2048, 3072, 4096]
        );
        assert_eq!("1:10:4".parse::<Sweep>().unwrap().values(), &[1, 5, 9]);
        assert_eq!("5:5:1".parse::<Sweep>().unwrap().values(), &[5]);
    }

    #[test]
    fn rejects_bad_input() {
        for s in ["0", "-3", "x", "1:2", "4:1:1", "1:4:0", "1:2:3:4", ""] {
            assert!(s.parse::<Sweep>().is_err(), "{s}");
        }
    }
}
