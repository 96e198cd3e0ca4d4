//! Excitation-capped atom ⊗ Fock basis.
//!
//! States are ordered atom level major. Within a level, photon
//! configurations are grouped by total quanta (shell) and each shell is
//! listed in descending lexicographic order of the dense occupation vector,
//! so two modes with caps of 2 give 00, 10, 01, 20, 11, 02.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Default refusal threshold on the basis dimension.
pub const DEFAULT_MEMORY_BUDGET: usize = 2_000_000;

/// Sparse occupation list: (mode, quanta) with quanta > 0, sorted by mode.
pub type Occupation = Vec<(u32, u8)>;

#[derive(Clone, Debug)]
pub struct CIBasis {
    levels: usize,
    n_modes: usize,
    per_mode_cap: u32,
    total_cap: u32,
    configs: Vec<Occupation>,
    shells: Vec<u32>,
    lookup: HashMap<Occupation, usize>,
}

/// Number of photon configurations per shell 0..=total_cap, saturating.
fn shell_counts(n_modes: usize, per_mode_cap: u32, total_cap: u32) -> Vec<u128> {
    let t = total_cap as usize;
    let mut counts = vec![0u128; t + 1];
    counts[0] = 1;
    // multiply by (1 + x + … + x^cap) once per mode
    for _ in 0..n_modes {
        let mut next = vec![0u128; t + 1];
        for (s, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            for n in 0..=(per_mode_cap as usize).min(t - s) {
                next[s + n] = next[s + n].saturating_add(c);
            }
        }
        counts = next;
    }
    counts
}

/// Basis dimension without enumerating it.
pub fn basis_dimension(levels: usize, n_modes: usize, per_mode_cap: u32, total_cap: u32) -> u128 {
    shell_counts(n_modes, per_mode_cap, total_cap)
        .iter()
        .fold(0u128, |a, &c| a.saturating_add(c))
        .saturating_mul(levels as u128)
}

fn generate(
    start: usize,
    remaining: u32,
    n_modes: usize,
    cap: u32,
    current: &mut Occupation,
    out: &mut Vec<Occupation>,
) {
    if remaining == 0 {
        out.push(current.clone());
        return;
    }
    for mode in start..n_modes {
        // the remaining modes must be able to hold what is left
        if remaining > cap * (n_modes - mode) as u32 {
            break;
        }
        for n in (1..=cap.min(remaining)).rev() {
            current.push((mode as u32, n as u8));
            generate(mode + 1, remaining - n, n_modes, cap, current, out);
            current.pop();
        }
    }
}

/// Enumerate every configuration within both caps, refusing bases larger
/// than `budget` states.
pub fn enumerate_basis(
    levels: usize,
    n_modes: usize,
    per_mode_cap: u32,
    total_cap: u32,
    budget: usize,
) -> Result<CIBasis> {
    if levels < 2 {
        return Err(Error::Config(format!("atom needs at least 2 levels, got {levels}")));
    }
    if per_mode_cap < 1 || total_cap < 1 {
        return Err(Error::Config("per_mode_cap and total_cap must be at least 1".into()));
    }
    if per_mode_cap > u8::MAX as u32 {
        return Err(Error::Config(format!("per_mode_cap {per_mode_cap} exceeds 255")));
    }
    let dimension = basis_dimension(levels, n_modes, per_mode_cap, total_cap);
    if dimension > budget as u128 {
        return Err(Error::MemoryBudget {
            dimension,
            budget,
            levels,
            modes: n_modes,
            per_mode_cap,
            total_cap,
        });
    }
    let mut configs = Vec::with_capacity(dimension as usize / levels);
    let mut shells = Vec::with_capacity(configs.capacity());
    for shell in 0..=total_cap {
        let before = configs.len();
        generate(0, shell, n_modes, per_mode_cap, &mut Vec::new(), &mut configs);
        shells.resize(shells.len() + configs.len() - before, shell);
    }
    let lookup = configs
        .iter()
        .enumerate()
        .map(|(i, c)| (c.clone(), i))
        .collect();
    Ok(CIBasis {
        levels,
        n_modes,
        per_mode_cap,
        total_cap,
        configs,
        shells,
        lookup,
    })
}

impl CIBasis {
    pub fn dim(&self) -> usize {
        self.levels * self.configs.len()
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_configs(&self) -> usize {
        self.configs.len()
    }

    pub fn per_mode_cap(&self) -> u32 {
        self.per_mode_cap
    }

    pub fn total_cap(&self) -> u32 {
        self.total_cap
    }

    pub fn index(&self, level: usize, config: usize) -> usize {
        level * self.configs.len() + config
    }

    /// (atom level, configuration index) of state `i`.
    pub fn split(&self, i: usize) -> (usize, usize) {
        (i / self.configs.len(), i % self.configs.len())
    }

    pub fn config(&self, c: usize) -> &Occupation {
        &self.configs[c]
    }

    pub fn occupation(&self, i: usize) -> (usize, &Occupation) {
        let (level, c) = self.split(i);
        (level, &self.configs[c])
    }

    /// Total photon number of configuration `c`.
    pub fn config_shell(&self, c: usize) -> u32 {
        self.shells[c]
    }

    pub fn shell(&self, i: usize) -> u32 {
        self.shells[self.split(i).1]
    }

    pub fn config_index(&self, occupation: &[(u32, u8)]) -> Option<usize> {
        self.lookup.get(occupation).copied()
    }

    pub fn index_of(&self, level: usize, occupation: &[(u32, u8)]) -> Option<usize> {
        if level >= self.levels {
            return None;
        }
        self.config_index(occupation).map(|c| self.index(level, c))
    }

    /// Occupation vector over all modes of state `i`.
    pub fn dense_occupation(&self, i: usize) -> Vec<u32> {
        let mut out = vec![0; self.n_modes];
        for &(mode, n) in self.occupation(i).1 {
            out[mode as usize] = n as u32;
        }
        out
    }
}

/// `occupation` with one quantum added to (`delta` = +1) or removed from
/// (`delta` = −1) `mode`; `None` when removing from an empty mode.
pub(crate) fn shifted(occupation: &[(u32, u8)], mode: u32, delta: i32) -> Option<Occupation> {
    let mut out: Occupation = occupation.to_vec();
    match out.binary_search_by_key(&mode, |e| e.0) {
        Ok(pos) => {
            let n = out[pos].1 as i32 + delta;
            if n < 0 || n > u8::MAX as i32 {
                return None;
            }
            if n == 0 {
                out.remove(pos);
            } else {
                out[pos].1 = n as u8;
            }
        }
        Err(pos) => {
            if delta < 0 {
                return None;
            }
            out.insert(pos, (mode, delta as u8));
        }
    }
    Some(out)
}
