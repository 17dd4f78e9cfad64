//! Pseudo-time loading programs: triangular cyclic waveforms and explicit
//! value lists shared by the point driver and the FE solver.

use thiserror::Error;

/// Scalar load waveform sampled at integer step indices.
#[derive(Debug, Clone, PartialEq)]
pub enum Waveform {
    /// Piecewise-linear cycling: first ramp 0 -> max reaching the peak at a
    /// quarter cycle, then max -> min -> max with period `steps_per_cycle`.
    Triangular {
        min: f64,
        max: f64,
        cycles: usize,
        steps_per_cycle: usize,
    },
    /// Explicit per-step values; index 0 is the initial state.
    Explicit(Vec<f64>),
}

#[derive(Debug, Error, PartialEq)]
pub enum WaveformError {
    #[error("waveform requires min < max (got min={0}, max={1})")]
    EmptyRange(f64, f64),
    #[error("steps_per_cycle must be a multiple of 4 and at least 8 (got {0})")]
    BadStepsPerCycle(usize),
    #[error("at least one cycle required")]
    NoCycles,
    #[error("explicit waveform must contain at least one value")]
    EmptyList,
    #[error("step index {0} out of range (total {1})")]
    OutOfRange(usize, usize),
}

impl Waveform {
    pub fn validate(&self) -> Result<(), WaveformError> {
        match self {
            Waveform::Triangular {
                min,
                max,
                cycles,
                steps_per_cycle,
            } => {
                if !(min < max) {
                    return Err(WaveformError::EmptyRange(*min, *max));
                }
                if *steps_per_cycle < 8 || steps_per_cycle % 4 != 0 {
                    return Err(WaveformError::BadStepsPerCycle(*steps_per_cycle));
                }
                if *cycles == 0 {
                    return Err(WaveformError::NoCycles);
                }
                Ok(())
            }
            Waveform::Explicit(v) => {
                if v.is_empty() {
                    return Err(WaveformError::EmptyList);
                }
                Ok(())
            }
        }
    }

    /// Number of steps after the initial state (trace has
    /// `total_steps + 1` rows).
    pub fn total_steps(&self) -> usize {
        match self {
            Waveform::Triangular {
                cycles,
                steps_per_cycle,
                ..
            } => cycles * steps_per_cycle,
            Waveform::Explicit(v) => v.len() - 1,
        }
    }

    /// Load value at step `i` (0 ..= total_steps).
    pub fn sample(&self, i: usize) -> Result<f64, WaveformError> {
        if i > self.total_steps() {
            return Err(WaveformError::OutOfRange(i, self.total_steps()));
        }
        match self {
            Waveform::Explicit(v) => Ok(v[i]),
            Waveform::Triangular {
                min,
                max,
                steps_per_cycle,
                ..
            } => {
                let p = *steps_per_cycle;
                let q = p / 4;
                if i <= q {
                    return Ok(max * i as f64 / q as f64);
                }
                let j = (i - q) % p;
                let h = p / 2;
                if j < h {
                    Ok(max - (max - min) * j as f64 / h as f64)
                } else {
                    Ok(min + (max - min) * (j - h) as f64 / h as f64)
                }
            }
        }
    }

    /// 1-based cycle number containing step `i >= 1`; cycle `k` covers steps
    /// `((k-1)p, kp]`.
    pub fn cycle_of(&self, i: usize) -> usize {
        match self {
            Waveform::Triangular {
                steps_per_cycle, ..
            } => i.div_ceil(*steps_per_cycle),
            Waveform::Explicit(_) => 1,
        }
    }

    /// Step index of the `k`-th visit to the maximum (1-based).
    pub fn peak_index(&self, k: usize) -> usize {
        match self {
            Waveform::Triangular {
                steps_per_cycle, ..
            } => steps_per_cycle / 4 + (k - 1) * steps_per_cycle,
            Waveform::Explicit(_) => 0,
        }
    }

    /// Step index of the `k`-th visit to the minimum (1-based).
    pub fn trough_index(&self, k: usize) -> usize {
        self.peak_index(k)
            + match self {
                Waveform::Triangular {
                    steps_per_cycle, ..
                } => steps_per_cycle / 2,
                Waveform::Explicit(_) => 0,
            }
    }
}
