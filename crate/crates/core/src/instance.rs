//! LRS instances: run decomposition, feasibility, objective, generation,
//! exact solvers and the single-line instance file format.
//!
//! All indices are 0-based. Run ids shown to humans (prompt rows, CLI
//! output) are 1-based and converted at those boundaries only.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of the instance generator. Bump whenever the byte stream
/// produced for a given `(n, sigma, seed)` changes.
pub const GENERATOR_VERSION: &str = "chacha8-uniform-v1";

/// Largest run count accepted by the subset-enumeration oracle.
pub const ENUMERATION_MAX_RUNS: usize = 22;

/// Largest alphabet accepted by the subset dynamic program.
pub const DP_MAX_SYMBOLS: usize = 12;

/// Symbols used for generated instances, in order.
pub const GENERATED_SYMBOLS: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("run index {index} out of range for {runs} runs")]
    IndexOutOfRange { index: usize, runs: usize },
    #[error("selection is not strictly ascending at position {position}")]
    NotAscending { position: usize },
    #[error("selection {0:?} is not a valid run-subsequence")]
    Infeasible(Vec<usize>),
    #[error("invalid generator parameters: {0}")]
    InvalidParameters(String),
    #[error("exact solver capacity exceeded: {runs} runs and {symbols} symbols (limits: runs <= {ENUMERATION_MAX_RUNS} or symbols <= {DP_MAX_SYMBOLS})")]
    TooLarge { runs: usize, symbols: usize },
    #[error("malformed instance file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = InstanceError> = std::result::Result<T, E>;

/// A maximal block of identical characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub character: char,
    pub start: usize,
    pub length: usize,
}

impl Run {
    /// Inclusive end index.
    pub fn end(&self) -> usize {
        self.start + self.length - 1
    }
}

/// Splits `text` into its maximal uniform blocks, left to right.
pub fn decompose(text: &[char]) -> Vec<Run> {
    let mut runs = Vec::new();
    let mut iter = text.iter().enumerate();
    let Some((_, &first)) = iter.next() else {
        return runs;
    };
    let mut current = Run { character: first, start: 0, length: 1 };
    for (i, &c) in iter {
        if c == current.character {
            current.length += 1;
        } else {
            runs.push(current);
            current = Run { character: c, start: i, length: 1 };
        }
    }
    runs.push(current);
    runs
}

/// Convenience wrapper over [`decompose`] for string input.
pub fn decompose_str(text: &str) -> Vec<Run> {
    decompose(&text.chars().collect::<Vec<_>>())
}

/// Rebuilds the text a run list was decomposed from.
pub fn reconstruct(runs: &[Run]) -> String {
    runs.iter()
        .flat_map(|r| std::iter::repeat_n(r.character, r.length))
        .collect()
}

/// An LRS instance `(S, Σ, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrsInstance {
    name: String,
    text: Vec<char>,
    alphabet: Vec<char>,
    runs: Vec<Run>,
    run_symbols: Vec<usize>,
}

impl LrsInstance {
    pub fn new(name: impl Into<String>, text: &str) -> Self {
        Self::from_chars(name, text.chars().collect())
    }

    pub fn from_chars(name: impl Into<String>, text: Vec<char>) -> Self {
        let mut alphabet: Vec<char> = text.clone();
        alphabet.sort_unstable();
        alphabet.dedup();
        let runs = decompose(&text);
        let run_symbols = runs
            .iter()
            .map(|r| alphabet.binary_search(&r.character).expect("run character is in alphabet"))
            .collect();
        Self { name: name.into(), text, alphabet, runs, run_symbols }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn text(&self) -> &[char] {
        &self.text
    }

    pub fn text_string(&self) -> String {
        self.text.iter().collect()
    }

    /// Distinct symbols in ascending order.
    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    /// String length `n`.
    pub fn len(&self) -> usize {
        self.text.len()
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }

    /// Number of runs `m`.
    pub fn run_count(&self) -> usize {
        self.runs.len()
    }

    /// Alphabet size `σ`.
    pub fn sigma(&self) -> usize {
        self.alphabet.len()
    }

    /// Alphabet index of the character of run `i`.
    pub fn run_symbol(&self, i: usize) -> usize {
        self.run_symbols[i]
    }

    pub fn run_symbols(&self) -> &[usize] {
        &self.run_symbols
    }

    pub fn max_run_length(&self) -> usize {
        self.runs.iter().map(|r| r.length).max().unwrap_or(0)
    }

    fn check_selection(&self, selected: &[usize]) -> Result<()> {
        for (pos, &i) in selected.iter().enumerate() {
            if i >= self.runs.len() {
                return Err(InstanceError::IndexOutOfRange { index: i, runs: self.runs.len() });
            }
            if pos > 0 && selected[pos - 1] >= i {
                return Err(InstanceError::NotAscending { position: pos });
            }
        }
        Ok(())
    }
}

/// A feasible set of runs with its total length.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSolution {
    /// Ascending run indices.
    pub selected: Vec<usize>,
    pub score: u64,
}

impl RunSolution {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Selected characters concatenated in string order.
    pub fn subsequence(&self, instance: &LrsInstance) -> String {
        let runs = instance.runs();
        self.selected
            .iter()
            .flat_map(|&i| std::iter::repeat_n(runs[i].character, runs[i].length))
            .collect()
    }
}

/// Full-scan feasibility test: every character's selected runs must be
/// contiguous within the selection.
pub fn is_feasible(instance: &LrsInstance, selected: &[usize]) -> Result<bool> {
    instance.check_selection(selected)?;
    Ok(scan_feasible(instance, selected))
}

fn scan_feasible(instance: &LrsInstance, selected: &[usize]) -> bool {
    let mut closed = vec![false; instance.sigma()];
    let mut open: Option<usize> = None;
    for &i in selected {
        let s = instance.run_symbol(i);
        if open == Some(s) {
            continue;
        }
        if closed[s] {
            return false;
        }
        if let Some(prev) = open {
            closed[prev] = true;
        }
        open = Some(s);
    }
    true
}

/// Total length of a feasible selection.
pub fn objective(instance: &LrsInstance, selected: &[usize]) -> Result<u64> {
    if !is_feasible(instance, selected)? {
        return Err(InstanceError::Infeasible(selected.to_vec()));
    }
    Ok(selected.iter().map(|&i| instance.runs()[i].length as u64).sum())
}

/// Incrementally built selection with O(log m) insertion checks.
///
/// Inserting run `i` is legal iff its selected neighbours do not share a
/// character other than `c(R_i)` (which the insertion would split), and,
/// if `c(R_i)` is already selected, one of those neighbours belongs to
/// that character's block.
#[derive(Debug, Clone)]
pub struct Selection<'a> {
    instance: &'a LrsInstance,
    selected: BTreeSet<usize>,
    per_symbol: Vec<u32>,
    score: u64,
}

impl<'a> Selection<'a> {
    pub fn new(instance: &'a LrsInstance) -> Self {
        Self { instance, selected: BTreeSet::new(), per_symbol: vec![0; instance.sigma()], score: 0 }
    }

    pub fn can_insert(&self, i: usize) -> bool {
        if self.selected.contains(&i) {
            return false;
        }
        let sym = self.instance.run_symbol(i);
        let left = self.selected.range(..i).next_back().map(|&j| self.instance.run_symbol(j));
        let right = self.selected.range(i + 1..).next().map(|&j| self.instance.run_symbol(j));
        if let (Some(l), Some(r)) = (left, right) {
            if l == r && l != sym {
                return false;
            }
        }
        if self.per_symbol[sym] > 0 {
            return left == Some(sym) || right == Some(sym);
        }
        true
    }

    /// Inserts run `i` if that keeps the selection feasible.
    pub fn try_insert(&mut self, i: usize) -> bool {
        if !self.can_insert(i) {
            return false;
        }
        self.selected.insert(i);
        self.per_symbol[self.instance.run_symbol(i)] += 1;
        self.score += self.instance.runs()[i].length as u64;
        true
    }

    pub fn score(&self) -> u64 {
        self.score
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.selected.iter().copied()
    }

    pub fn into_solution(self) -> RunSolution {
        RunSolution { selected: self.selected.into_iter().collect(), score: self.score }
    }
}

/// Draws an instance with i.i.d. uniform characters over the first `sigma`
/// symbols of [`GENERATED_SYMBOLS`], using ChaCha8 seeded from `seed`.
pub fn generate(length: usize, sigma: usize, seed: u64) -> Result<LrsInstance> {
    if length < 1 {
        return Err(InstanceError::InvalidParameters("length must be >= 1".into()));
    }
    let symbols: Vec<char> = GENERATED_SYMBOLS.chars().collect();
    if sigma < 1 || sigma > symbols.len() {
        return Err(InstanceError::InvalidParameters(format!(
            "alphabet size must be in 1..={}, got {sigma}",
            symbols.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let text: Vec<char> = (0..length).map(|_| symbols[rng.random_range(0..sigma)]).collect();
    Ok(LrsInstance::from_chars(format!("len_{length}_sigma_{sigma}_seed_{seed}"), text))
}

/// File name of the `k`-th repetition for `(n, sigma)`.
pub fn instance_file_name(length: usize, sigma: usize, k: usize) -> String {
    format!("len_{length}_sigma_{sigma}_{k}.txt")
}

/// One line of the generation manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub file: String,
    pub n: usize,
    pub sigma: usize,
    pub k: usize,
    pub seed: u64,
    pub generator_version: String,
}

/// Seed for repetition `k` of `(n, sigma)` under a corpus master seed.
pub fn corpus_seed(master: u64, length: usize, sigma: usize, k: usize) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((length as u64).to_le_bytes());
    h.update((sigma as u64).to_le_bytes());
    h.update((k as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Generates `reps` instances for every `(sigma, n)` pair, writes them to
/// `dir` together with `manifest.csv`, and returns the manifest records.
pub fn generate_corpus(
    lengths: &[usize],
    sigmas: &[usize],
    reps: usize,
    master_seed: u64,
    dir: &Path,
) -> Result<Vec<ManifestRecord>> {
    fs::create_dir_all(dir)?;
    let mut records = Vec::new();
    for &sigma in sigmas {
        for &n in lengths {
            for k in 1..=reps {
                let seed = corpus_seed(master_seed, n, sigma, k);
                let inst = generate(n, sigma, seed)?;
                let path = write_instance(&inst, dir, sigma, k)?;
                records.push(ManifestRecord {
                    file: path.file_name().unwrap().to_string_lossy().into_owned(),
                    n,
                    sigma,
                    k,
                    seed,
                    generator_version: GENERATOR_VERSION.to_string(),
                });
            }
        }
    }
    let mut w = csv::Writer::from_path(dir.join("manifest.csv"))?;
    for r in &records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(records)
}

/// Writes `instance` as `len_<n>_sigma_<sigma>_<k>.txt` under `dir`.
///
/// `sigma` is the nominal alphabet size the instance was drawn from; short
/// strings need not contain every symbol.
pub fn write_instance(instance: &LrsInstance, dir: &Path, sigma: usize, k: usize) -> Result<PathBuf> {
    let path = dir.join(instance_file_name(instance.len(), sigma, k));
    let mut body = instance.text_string();
    body.push('\n');
    fs::write(&path, body)?;
    Ok(path)
}

/// Reads a single-line instance file. The instance is named after the
/// file stem.
pub fn read_instance(path: &Path) -> Result<LrsInstance> {
    let bytes = fs::read(path)?;
    let format_err = |reason: &str| InstanceError::Format { path: path.to_path_buf(), reason: reason.into() };
    let text = String::from_utf8(bytes).map_err(|_| format_err("not valid UTF-8"))?;
    let line = text
        .strip_suffix("\r\n")
        .or_else(|| text.strip_suffix('\n'))
        .unwrap_or(&text);
    if line.is_empty() {
        return Err(format_err("empty file"));
    }
    if line.contains(['\n', '\r']) {
        return Err(format_err("more than one line"));
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(LrsInstance::new(name, line))
}

/// Which exact algorithm [`exact_solve_with`] should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExactMode {
    /// Dynamic program if the alphabet is small enough, else enumeration.
    Auto,
    Enumeration,
    Dp,
}

/// Provably optimal solution, for oracle-sized instances.
pub fn exact_solve(instance: &LrsInstance) -> Result<RunSolution> {
    exact_solve_with(instance, ExactMode::Auto)
}

pub fn exact_solve_with(instance: &LrsInstance, mode: ExactMode) -> Result<RunSolution> {
    let too_large = || InstanceError::TooLarge { runs: instance.run_count(), symbols: instance.sigma() };
    let dp_ok = instance.sigma() <= DP_MAX_SYMBOLS;
    let enum_ok = instance.run_count() <= ENUMERATION_MAX_RUNS;
    match mode {
        ExactMode::Auto if dp_ok => Ok(solve_dp(instance)),
        ExactMode::Auto if enum_ok => Ok(solve_enumeration(instance)),
        ExactMode::Dp if dp_ok => Ok(solve_dp(instance)),
        ExactMode::Enumeration if enum_ok => Ok(solve_enumeration(instance)),
        _ => Err(too_large()),
    }
}

// Brute force over all 2^m subsets.
fn solve_enumeration(instance: &LrsInstance) -> RunSolution {
    let m = instance.run_count();
    let syms = instance.run_symbols();
    let lens: Vec<u64> = instance.runs().iter().map(|r| r.length as u64).collect();
    // closed[s] == epoch marks symbol s as closed for the current subset
    let mut closed = vec![0u64; instance.sigma()];
    let mut best_mask = 0u64;
    let mut best = 0u64;
    for mask in 0..(1u64 << m) {
        let epoch = mask + 1;
        let mut bits = mask;
        let mut open = usize::MAX;
        let mut score = 0;
        let mut ok = true;
        while bits != 0 {
            let i = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            let s = syms[i];
            if s != open {
                if closed[s] == epoch {
                    ok = false;
                    break;
                }
                if open != usize::MAX {
                    closed[open] = epoch;
                }
                open = s;
            }
            score += lens[i];
        }
        if ok && score > best {
            best = score;
            best_mask = mask;
        }
    }
    let selected = (0..m).filter(|&i| best_mask >> i & 1 == 1).collect();
    RunSolution { selected, score: best }
}

// Backward DP over (closed symbol set, open symbol) with one decision bit
// per (run, state) for reconstruction.
fn solve_dp(instance: &LrsInstance) -> RunSolution {
    let m = instance.run_count();
    let sigma = instance.sigma();
    let opens = sigma + 1; // `sigma` encodes "no open symbol"
    let states = (1usize << sigma) * opens;
    let idx = |closed: usize, open: usize| closed * opens + open;
    let step = |state: usize, sym: usize| -> Option<usize> {
        let (closed, open) = (state / opens, state % opens);
        if open == sym {
            return Some(state);
        }
        if closed >> sym & 1 == 1 {
            return None;
        }
        let closed = if open < sigma { closed | 1 << open } else { closed };
        Some(idx(closed, sym))
    };

    let mut next = vec![0u64; states];
    let mut cur = vec![0u64; states];
    let mut take = vec![0u64; (m * states).div_ceil(64)];
    for i in (0..m).rev() {
        let sym = instance.run_symbol(i);
        let len = instance.runs()[i].length as u64;
        for s in 0..states {
            let skip = next[s];
            let taken = step(s, sym).map(|t| len + next[t]);
            match taken {
                Some(v) if v > skip => {
                    cur[s] = v;
                    let bit = i * states + s;
                    take[bit / 64] |= 1 << (bit % 64);
                }
                _ => cur[s] = skip,
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }

    let mut state = idx(0, sigma);
    let score = next[state];
    let mut selected = Vec::new();
    for i in 0..m {
        let bit = i * states + state;
        if take[bit / 64] >> (bit % 64) & 1 == 1 {
            selected.push(i);
            state = step(state, instance.run_symbol(i)).expect("recorded take is legal");
        }
    }
    RunSolution { selected, score }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> LrsInstance {
        LrsInstance::new("example", "ZZBCCZBBBC")
    }

    #[test]
    fn decompose_example() {
        let got: Vec<(char, usize, usize)> =
            decompose_str("ZZBCCZBBBC").iter().map(|r| (r.character, r.start, r.length)).collect();
        assert_eq!(
            got,
            vec![('Z', 0, 2), ('B', 2, 1), ('C', 3, 2), ('Z', 5, 1), ('B', 6, 3), ('C', 9, 1)]
        );
        assert!(decompose_str("").is_empty());
        let single = decompose_str("AAAA");
        assert_eq!(single, vec![Run { character: 'A', start: 0, length: 4 }]);
        assert_eq!(single[0].end(), 3);
    }

    #[test]
    fn feasibility_examples() {
        let inst = example();
        assert!(is_feasible(&inst, &[0, 3, 4, 5]).unwrap());
        assert_eq!(objective(&inst, &[0, 3, 4, 5]).unwrap(), 7);
        assert!(!is_feasible(&inst, &[0, 1, 3]).unwrap());
        assert!(is_feasible(&inst, &[]).unwrap());
        assert_eq!(objective(&inst, &[]).unwrap(), 0);
        assert_eq!(objective(&inst, &[4]).unwrap(), 3);
    }

    #[test]
    fn feasibility_rejects_bad_indices() {
        let inst = example();
        assert!(matches!(is_feasible(&inst, &[2, 1]), Err(InstanceError::NotAscending { .. })));
        assert!(matches!(is_feasible(&inst, &[1, 1]), Err(InstanceError::NotAscending { .. })));
        assert!(matches!(is_feasible(&inst, &[6]), Err(InstanceError::IndexOutOfRange { .. })));
        assert!(matches!(objective(&inst, &[0, 1, 3]), Err(InstanceError::Infeasible(_))));
    }

    #[test]
    fn selection_matches_full_scan() {
        let inst = example();
        let mut sel = Selection::new(&inst);
        assert!(sel.try_insert(3));
        assert!(sel.try_insert(0));
        assert!(sel.try_insert(4));
        // C at 2 would sit between Z(0) and Z(3)
        assert!(!sel.try_insert(2));
        // B at 1 would split the Z block
        assert!(!sel.try_insert(1));
        assert!(sel.try_insert(5));
        assert_eq!(sel.score(), 7);
        let sol = sel.into_solution();
        assert_eq!(sol.selected, vec![0, 3, 4, 5]);
        assert_eq!(sol.subsequence(&inst), "ZZZBBBC");
    }

    #[test]
    fn generator_contract() {
        let inst = generate(10, 1, 99).unwrap();
        assert_eq!(inst.text_string(), "AAAAAAAAAA");
        assert_eq!(inst.run_count(), 1);
        assert_eq!(generate(100, 2, 7).unwrap().text(), generate(100, 2, 7).unwrap().text());
        assert!(generate(0, 2, 1).is_err());
        assert!(generate(10, 0, 1).is_err());
        assert!(generate(10, 53, 1).is_err());
    }

    #[test]
    fn exact_examples() {
        assert_eq!(exact_solve(&example()).unwrap().score, 7);
        assert_eq!(exact_solve(&LrsInstance::new("ab", "AB")).unwrap().score, 2);
        let inst = generate(40, 3, 1).unwrap();
        let e = exact_solve_with(&inst, ExactMode::Enumeration);
        let d = exact_solve_with(&inst, ExactMode::Dp).unwrap();
        if let Ok(e) = e {
            assert_eq!(e.score, d.score);
        }
        assert!(is_feasible(&inst, &d.selected).unwrap());
        assert_eq!(objective(&inst, &d.selected).unwrap(), d.score);
    }

    #[test]
    fn exact_capacity_error() {
        // 13 symbols and more than 22 runs
        let text: String = GENERATED_SYMBOLS.chars().take(13).cycle().take(30).collect();
        let inst = LrsInstance::new("big", &text);
        assert!(matches!(exact_solve(&inst), Err(InstanceError::TooLarge { .. })));
    }

    #[test]
    fn empty_instance_solves_to_zero() {
        let inst = LrsInstance::new("empty", "");
        assert_eq!(exact_solve(&inst).unwrap(), RunSolution::empty());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let inst = generate(100, 32, 5).unwrap();
        let path = write_instance(&inst, dir.path(), 32, 3).unwrap();
        assert_eq!(path.file_name().unwrap(), "len_100_sigma_32_3.txt");
        let back = read_instance(&path).unwrap();
        assert_eq!(back.text(), inst.text());
        assert_eq!(back.name(), "len_100_sigma_32_3");
    }

    #[test]
    fn read_rejects_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.txt");
        fs::write(&empty, b"").unwrap();
        assert!(matches!(read_instance(&empty), Err(InstanceError::Format { .. })));
        let multi = dir.path().join("multi.txt");
        fs::write(&multi, b"AB\nCD\n").unwrap();
        assert!(matches!(read_instance(&multi), Err(InstanceError::Format { .. })));
        let bad = dir.path().join("bad.txt");
        fs::write(&bad, [0xff, 0xfe]).unwrap();
        assert!(matches!(read_instance(&bad), Err(InstanceError::Format { .. })));
        let crlf = dir.path().join("crlf.txt");
        fs::write(&crlf, b"ABBA\r\n").unwrap();
        assert_eq!(read_instance(&crlf).unwrap().text_string(), "ABBA");
    }

    #[test]
    fn corpus_writes_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let recs = generate_corpus(&[100], &[2], 30, 1, dir.path()).unwrap();
        assert_eq!(recs.len(), 30);
        let files = fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(files, 31);
        let manifest = fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
        assert!(manifest.starts_with("file,n,sigma,k,seed,generator_version\n"));
        assert!(manifest.contains("len_100_sigma_2_30.txt"));
    }
}
