//! Trajectories, windows and normalisation shared across modules.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{KoapError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrajMeta {
    pub env: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
}

/// Time-indexed state sequence with optional per-transition action labels.
/// When present, `actions[t]` drives `states[t] -> states[t + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Option<Vec<Vec<f64>>>,
    pub meta: TrajMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn action_dim(&self) -> Option<usize> {
        self.actions.as_ref().and_then(|a| a.first()).map(Vec::len)
    }

    /// Copy without action labels.
    pub fn stripped(&self) -> Trajectory {
        Trajectory {
            states: self.states.clone(),
            actions: None,
            meta: self.meta.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(KoapError::Config("trajectory has no states".into()));
        }
        let d = self.state_dim();
        if self.states.iter().any(|s| s.len() != d) {
            return Err(KoapError::Config("trajectory states have ragged dimensions".into()));
        }
        if let Some(a) = &self.actions {
            if a.len() + 1 != self.states.len() {
                return Err(KoapError::Config(format!(
                    "{} states need {} actions, found {}",
                    self.states.len(),
                    self.states.len() - 1,
                    a.len()
                )));
            }
        }
        Ok(())
    }
}

pub fn write_jsonl<W: Write>(mut w: W, trajs: &[Trajectory]) -> Result<()> {
    for t in trajs {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Trajectory = serde_json::from_str(&line)?;
        t.validate()?;
        out.push(t);
    }
    Ok(out)
}

/// What to do with windows whose future runs past the last recorded state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndHandling {
    /// Drop the window.
    Discard,
    /// Repeat the final state with zero actions. Only valid for systems where
    /// a zero action holds the state.
    HoldLast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Number of past states.
    pub history: usize,
    /// Number of future states.
    pub horizon: usize,
    pub end: EndHandling,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            history: 2,
            horizon: 12,
            end: EndHandling::Discard,
        }
    }
}

impl WindowSpec {
    pub fn len(&self) -> usize {
        self.history + 1 + self.horizon
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// States `x_{t-n} .. x_t .. x_{t+k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateWindow {
    pub states: Vec<Vec<f64>>,
    pub history: usize,
    pub horizon: usize,
}

impl StateWindow {
    pub fn new(states: Vec<Vec<f64>>, history: usize, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(KoapError::Window("window horizon must be at least 1".into()));
        }
        if states.len() != history + 1 + horizon {
            return Err(KoapError::Window(format!(
                "window needs {} states (history {history}, horizon {horizon}), got {}",
                history + 1 + horizon,
                states.len()
            )));
        }
        let d = states[0].len();
        if states.iter().any(|s| s.len() != d) {
            return Err(KoapError::Window("window states have ragged dimensions".into()));
        }
        Ok(Self {
            states,
            history,
            horizon,
        })
    }

    /// Assemble from history, current state and a plan of future states.
    pub fn assemble(history: &[Vec<f64>], current: &[f64], future: &[Vec<f64>]) -> Result<Self> {
        let mut states = history.to_vec();
        states.push(current.to_vec());
        states.extend_from_slice(future);
        Self::new(states, history.len(), future.len())
    }

    pub fn history(&self) -> &[Vec<f64>] {
        &self.states[..self.history]
    }

    pub fn current(&self) -> &[f64] {
        &self.states[self.history]
    }

    pub fn future(&self) -> &[Vec<f64>] {
        &self.states[self.history + 1..]
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }
}

/// A training window; unlabeled windows carry no action storage at all.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub states: StateWindow,
    /// `horizon` actions for the transitions starting at the current state.
    pub actions: Option<Vec<Vec<f64>>>,
}

impl Window {
    pub fn is_labeled(&self) -> bool {
        self.actions.is_some()
    }
}

/// Slice every window centred at each transition start of `traj`.
/// States before `t = 0` replicate the first state.
pub fn extract_windows(traj: &Trajectory, spec: &WindowSpec, with_actions: bool) -> Vec<Window> {
    let t_len = traj.states.len();
    if t_len < 2 {
        return Vec::new();
    }
    let adim = traj.action_dim().unwrap_or(0);
    let mut out = Vec::new();
    for t in 0..t_len - 1 {
        let last_needed = t + spec.horizon;
        if last_needed >= t_len && spec.end == EndHandling::Discard {
            break;
        }
        let states: Vec<Vec<f64>> = (0..spec.len())
            .map(|j| {
                let idx = t as isize - spec.history as isize + j as isize;
                let idx = idx.clamp(0, t_len as isize - 1) as usize;
                traj.states[idx].clone()
            })
            .collect();
        let actions = match (&traj.actions, with_actions) {
            (Some(acts), true) => Some(
                (t..t + spec.horizon)
                    .map(|i| acts.get(i).cloned().unwrap_or_else(|| vec![0.0; adim]))
                    .collect(),
            ),
            _ => None,
        };
        out.push(Window {
            states: StateWindow {
                states,
                history: spec.history,
                horizon: spec.horizon,
            },
            actions,
        });
    }
    out
}

/// Per-dimension affine normalisation `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Statistics over a set of vectors. Dimensions with (near) zero spread
    /// keep unit scale.
    pub fn fit<'a, I>(dim: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = &'a Vec<f64>>,
    {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1;
            for i in 0..dim {
                sum[i] += r[i];
                sq[i] += r[i] * r[i];
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = (0..dim)
            .map(|i| {
                let var = (sq[i] / n as f64 - mean[i] * mean[i]).max(0.0);
                let s = var.sqrt();
                if s < 1e-8 {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(n: usize) -> Trajectory {
        Trajectory {
            states: (0..n).map(|i| vec![i as f64]).collect(),
            actions: Some((0..n - 1).map(|i| vec![10.0 + i as f64]).collect()),
            meta: TrajMeta::default(),
        }
    }

    #[test]
    fn windows_replicate_start_and_discard_end() {
        let spec = WindowSpec {
            history: 2,
            horizon: 3,
            end: EndHandling::Discard,
        };
        let ws = extract_windows(&traj(6), &spec, true);
        // Transition starts t = 0..=2 have t + 3 <= 5.
        assert_eq!(ws.len(), 3);
        let first: Vec<f64> = ws[0].states.states.iter().map(|s| s[0]).collect();
        assert_eq!(first, vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(
            ws[2].actions.as_ref().unwrap(),
            &vec![vec![12.0], vec![13.0], vec![14.0]]
        );
    }

    #[test]
    fn hold_last_pads_with_zero_actions() {
        let spec = WindowSpec {
            history: 1,
            horizon: 3,
            end: EndHandling::HoldLast,
        };
        let ws = extract_windows(&traj(4), &spec, true);
        assert_eq!(ws.len(), 3);
        let last = &ws[2];
        let s: Vec<f64> = last.states.states.iter().map(|s| s[0]).collect();
        assert_eq!(s, vec![1.0, 2.0, 3.0, 3.0, 3.0]);
        assert_eq!(last.actions.as_ref().unwrap(), &vec![vec![12.0], vec![0.0], vec![0.0]]);
    }

    #[test]
    fn unlabeled_windows_have_no_actions() {
        let ws = extract_windows(&traj(20).stripped(), &WindowSpec::default(), true);
        assert!(ws.iter().all(|w| !w.is_labeled()));
        let ws = extract_windows(&traj(20), &WindowSpec::default(), false);
        assert!(ws.iter().all(|w| !w.is_labeled()));
        assert!(ws.iter().all(|w| w.states.states.len() == 15));
    }

    #[test]
    fn normalizer_roundtrip() {
        let rows = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let n = Normalizer::fit(2, &rows);
        assert_eq!(n.mean, vec![2.0, 5.0]);
        assert_eq!(n.std, vec![1.0, 1.0]);
        let x = vec![0.3, -2.0];
        let back = n.invert(&n.apply(&x));
        assert!((back[0] - x[0]).abs() < 1e-12 && (back[1] - x[1]).abs() < 1e-12);
    }

    #[test]
    fn jsonl_roundtrip() {
        let ts = vec![traj(3), traj(4).stripped()];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &ts).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(1).unwrap().contains("\"actions\":null"));
        assert_eq!(read_jsonl(buf.as_slice()).unwrap(), ts);
    }
}
