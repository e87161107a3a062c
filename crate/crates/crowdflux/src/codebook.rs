//! Group visual dictionaries: greedy sparse-cover training, least-squares
//! reconstruction scoring, and online maintenance via word pools.
//!
//! A group is an ordered list of small unit-column dictionaries plus one
//! reconstruction-error bound `lambda`. A word is normal if any dictionary
//! reconstructs it with residual below `lambda`; dictionaries are scanned in
//! training order, so the dominant dictionaries trained first answer most
//! queries. Normal words flow into per-dictionary pools; a full pool triggers
//! a block-coordinate-descent refinement of its dictionary, and a word that
//! two dictionaries can both represent signals drift and triggers a full
//! retrain from the pooled words. Updates always build a replacement off to
//! the side and install it by snapshot swap, so concurrent classification
//! never observes a half-updated dictionary.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::VisualWord;

#[derive(Debug, Error)]
pub enum CodebookError {
    #[error("need at least {needed} training words, got {got}")]
    InsufficientWords { needed: usize, got: usize },
    #[error("word length {got} does not match dictionary word length {expected}")]
    WordLengthMismatch { expected: usize, got: usize },
    #[error("word token {token} does not match pool dictionary {pool}")]
    TokenMismatch { token: u32, pool: u32 },
    #[error("word pool holds {count} of {capacity} words; update requires a full pool")]
    PoolNotReady { count: usize, capacity: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Ridge added to the Gram diagonal; absorbs duplicate atoms without branching.
const GRAM_RIDGE: f64 = 1e-8;

/// Columns whose norm falls below this cannot be renormalized and keep their
/// previous direction during projection.
const NORM_FLOOR: f64 = 1e-15;

/// One small dictionary: `word_len x atom_count` matrix of unit columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    id: u32,
    atoms: DMatrix<f64>,
}

impl Dictionary {
    /// Build from atom columns, normalizing each to unit length.
    pub fn from_columns(id: u32, columns: &[DVector<f64>]) -> Result<Self, CodebookError> {
        if columns.is_empty() {
            return Err(CodebookError::InvalidParams("dictionary needs at least one atom".into()));
        }
        let t = columns[0].len();
        let mut atoms = DMatrix::zeros(t, columns.len());
        for (j, col) in columns.iter().enumerate() {
            if col.len() != t {
                return Err(CodebookError::WordLengthMismatch { expected: t, got: col.len() });
            }
            let norm = col.norm();
            if norm < NORM_FLOOR {
                return Err(CodebookError::InvalidParams(format!("atom {j} has zero norm")));
            }
            atoms.set_column(j, &(col / norm));
        }
        Ok(Self { id, atoms })
    }

    /// Build from columns that are already unit length, storing them without
    /// renormalization so decoded models stay bit-exact.
    pub fn from_unit_columns(id: u32, columns: &[DVector<f64>]) -> Result<Self, CodebookError> {
        if columns.is_empty() {
            return Err(CodebookError::InvalidParams("dictionary needs at least one atom".into()));
        }
        let t = columns[0].len();
        let mut atoms = DMatrix::zeros(t, columns.len());
        for (j, col) in columns.iter().enumerate() {
            if col.len() != t {
                return Err(CodebookError::WordLengthMismatch { expected: t, got: col.len() });
            }
            let norm = col.norm();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(CodebookError::InvalidParams(format!("atom {j} has norm {norm}, not unit")));
            }
            atoms.set_column(j, col);
        }
        Ok(Self { id, atoms })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn word_len(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    /// Max deviation of any column norm from 1.
    pub fn unit_column_defect(&self) -> f64 {
        (0..self.atom_count())
            .map(|j| (self.atoms.column(j).norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Least-squares code of a word under one dictionary.
#[derive(Debug, Clone)]
pub struct SparseCode {
    pub dictionary_id: u32,
    pub beta: DVector<f64>,
    /// Residual L2 norm `|x - D beta|`.
    pub error: f64,
}

/// Solve `min_beta |x - D beta|` by ridge-jittered normal equations.
///
/// One iterative-refinement pass keeps the residual orthogonal to the atom
/// span even though the Gram solve is regularized.
pub fn least_squares_code(word: &VisualWord, dict: &Dictionary) -> SparseCode {
    assert_eq!(
        word.values.len(),
        dict.word_len(),
        "word length must match dictionary word length"
    );
    let x = DVector::from_column_slice(&word.values);
    let d = &dict.atoms;
    let mut gram = d.transpose() * d;
    for i in 0..gram.nrows() {
        gram[(i, i)] += GRAM_RIDGE;
    }
    let chol = Cholesky::new(gram).expect("ridged Gram matrix is positive definite");
    let mut beta = chol.solve(&(d.transpose() * &x));
    let residual = &x - d * &beta;
    beta += chol.solve(&(d.transpose() * &residual));
    let error = (&x - d * &beta).norm();
    SparseCode { dictionary_id: dict.id, beta, error }
}

/// Classification outcome of one word against a group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label {
    Normal { dictionary_id: u32 },
    Abnormal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub label: Label,
    /// Best (smallest) reconstruction error across the scanned dictionaries.
    pub error: f64,
    /// True when a second dictionary also reconstructs the word below
    /// `lambda` — the drift signal that requests a global update. Words with
    /// norm below `lambda` are representable by every dictionary (beta = 0
    /// already suffices) and never report overlap.
    pub overlap: bool,
}

/// Ordered list of dictionaries plus the shared reconstruction error bound.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupDictionary {
    dictionaries: Vec<Dictionary>,
    pub lambda: f64,
}

impl GroupDictionary {
    pub fn new(dictionaries: Vec<Dictionary>, lambda: f64) -> Result<Self, CodebookError> {
        if dictionaries.is_empty() {
            return Err(CodebookError::InvalidParams("group needs at least one dictionary".into()));
        }
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(CodebookError::InvalidParams(format!("lambda {lambda} must be positive")));
        }
        Ok(Self { dictionaries, lambda })
    }

    pub fn s(&self) -> usize {
        self.dictionaries.len()
    }

    pub fn dictionaries(&self) -> &[Dictionary] {
        &self.dictionaries
    }

    pub fn word_len(&self) -> usize {
        self.dictionaries[0].word_len()
    }

    /// Scan dictionaries in stored order; the first one with error below
    /// `lambda` wins. Scanning continues only to detect a second pass.
    pub fn classify(&self, word: &VisualWord) -> Classification {
        let check_overlap = word.norm() >= self.lambda;
        let mut best = f64::INFINITY;
        let mut winner = None;
        for dict in &self.dictionaries {
            let code = least_squares_code(word, dict);
            best = best.min(code.error);
            if code.error < self.lambda {
                match winner {
                    None => {
                        winner = Some(dict.id);
                        if !check_overlap {
                            break;
                        }
                    }
                    Some(dictionary_id) => {
                        return Classification {
                            label: Label::Normal { dictionary_id },
                            error: best,
                            overlap: true,
                        };
                    }
                }
            }
        }
        match winner {
            Some(dictionary_id) => {
                Classification { label: Label::Normal { dictionary_id }, error: best, overlap: false }
            }
            None => Classification { label: Label::Abnormal, error: best, overlap: false },
        }
    }
}

/// Training configuration for [`train_group`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    /// Reconstruction error upper bound.
    pub lambda: f64,
    /// Atoms per dictionary (capped at half the word length).
    pub atoms_per_dictionary: usize,
    /// Hard cap on the dictionary count.
    pub max_dictionaries: usize,
    /// Refinement passes per dictionary during training.
    pub epochs: usize,
    /// Gradient step size for refinement passes.
    pub step: f64,
    pub seed: u64,
    /// Stop once this fraction of training words is covered.
    pub coverage_target: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            lambda: 0.08,
            atoms_per_dictionary: 10,
            max_dictionaries: 256,
            epochs: 5,
            step: 1e-4,
            seed: 0,
            coverage_target: 0.99,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub group: GroupDictionary,
    /// Words left uncovered at the dictionary cap; nonzero counts signal a
    /// coverage failure warning, not a hard error.
    pub uncovered: usize,
}

/// Train a group by greedy sparse cover.
///
/// Each round seeds a dictionary from a random uncovered word, grows it with
/// the uncovered word of smallest still-above-`lambda` residual (the most
/// coherent extension), refines it with `epochs` projected gradient passes
/// over the remaining pool, then removes every word it covers. Rounds repeat
/// on the remainder until the coverage target or the dictionary cap is hit;
/// dictionaries keep creation order, putting the dominant ones first.
pub fn train_group(words: &[VisualWord], params: &TrainParams) -> Result<TrainOutcome, CodebookError> {
    let d = params.atoms_per_dictionary;
    if d == 0 {
        return Err(CodebookError::InvalidParams("atoms_per_dictionary must be positive".into()));
    }
    if words.len() < d {
        return Err(CodebookError::InsufficientWords { needed: d, got: words.len() });
    }
    if !params.lambda.is_finite() || params.lambda <= 0.0 {
        return Err(CodebookError::InvalidParams(format!("lambda {} must be positive", params.lambda)));
    }
    let t = words[0].values.len();
    if let Some(w) = words.iter().find(|w| w.values.len() != t) {
        return Err(CodebookError::WordLengthMismatch { expected: t, got: w.values.len() });
    }
    if 2 * d > t {
        return Err(CodebookError::InvalidParams(format!(
            "atoms_per_dictionary {d} exceeds half the word length {t}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let total = words.len();
    let mut uncovered: Vec<usize> = (0..total).collect();
    let mut dictionaries: Vec<Dictionary> = Vec::new();

    let covered_enough = |remaining: usize| {
        (total - remaining) as f64 >= params.coverage_target * total as f64
    };

    while !uncovered.is_empty()
        && !covered_enough(uncovered.len())
        && dictionaries.len() < params.max_dictionaries
    {
        let seedable: Vec<usize> = uncovered
            .iter()
            .copied()
            .filter(|&i| words[i].norm() > NORM_FLOOR)
            .collect();
        if seedable.is_empty() {
            break;
        }
        let seed_word = seedable[rng.random_range(0..seedable.len())];
        let mut columns = vec![DVector::from_column_slice(&words[seed_word].values)];

        while columns.len() < d {
            let partial = Dictionary::from_columns(dictionaries.len() as u32, &columns)?;
            let mut best: Option<(f64, usize)> = None;
            for &i in &seedable {
                let err = least_squares_code(&words[i], &partial).error;
                // Candidates must still be uncovered (error above lambda) yet
                // related to the span: a residual measurably below the word's
                // own norm means part of the word already projects onto the
                // dictionary. Among those, the largest residual contributes
                // the strongest new direction. Unrelated words (residual at
                // their full norm) would inject a foreign cluster's atom.
                let norm = words[i].norm();
                let related = (norm - 0.5 * params.lambda).min(norm * (1.0 - 1e-3));
                if err > params.lambda
                    && err <= related
                    && best.is_none_or(|(b, _)| err > b)
                {
                    best = Some((err, i));
                }
            }
            match best {
                Some((_, i)) => columns.push(DVector::from_column_slice(&words[i].values)),
                None => break,
            }
        }

        let mut dict = Dictionary::from_columns(dictionaries.len() as u32, &columns)?;
        let pool: Vec<&VisualWord> = uncovered.iter().map(|&i| &words[i]).collect();
        for _ in 0..params.epochs {
            dict = descent_pass(&dict, &pool, params.step);
        }

        uncovered.retain(|&i| least_squares_code(&words[i], &dict).error > params.lambda);
        dictionaries.push(dict);
    }

    if dictionaries.is_empty() {
        // Degenerate all-zero training set: zero words are in every span, so
        // any unit-column dictionary represents them exactly.
        let basis: Vec<DVector<f64>> = (0..d)
            .map(|j| {
                let mut e = DVector::zeros(t);
                e[j] = 1.0;
                e
            })
            .collect();
        dictionaries.push(Dictionary::from_columns(0, &basis)?);
        uncovered.retain(|&i| words[i].norm() > params.lambda);
    }

    Ok(TrainOutcome {
        group: GroupDictionary::new(dictionaries, params.lambda)?,
        uncovered: uncovered.len(),
    })
}

/// One projected-gradient pass of the dictionary update rule.
///
/// Codes every word, steps `D <- Pi[D - step * grad]` with
/// `grad = -2 sum (x_j - D beta_j) beta_j^T`, and projects columns back to
/// unit norm. The step halves until the refitted pool loss does not increase;
/// if no step size descends, the dictionary is returned unchanged.
fn descent_pass(dict: &Dictionary, pool: &[&VisualWord], step: f64) -> Dictionary {
    if pool.is_empty() {
        return dict.clone();
    }
    let codes: Vec<SparseCode> = pool.iter().map(|w| least_squares_code(w, dict)).collect();
    let loss_before: f64 = codes.iter().map(|c| c.error * c.error).sum();

    let mut grad = DMatrix::zeros(dict.word_len(), dict.atom_count());
    for (word, code) in pool.iter().zip(&codes) {
        let x = DVector::from_column_slice(&word.values);
        let residual = &x - &dict.atoms * &code.beta;
        grad -= 2.0 * residual * code.beta.transpose();
    }

    let mut delta = step;
    for _ in 0..60 {
        let mut candidate = &dict.atoms - &grad * delta;
        for j in 0..candidate.ncols() {
            let norm = candidate.column(j).norm();
            if norm < NORM_FLOOR {
                candidate.set_column(j, &dict.atoms.column(j));
            } else {
                let unit = candidate.column(j) / norm;
                candidate.set_column(j, &unit);
            }
        }
        let updated = Dictionary { id: dict.id, atoms: candidate };
        let loss_after: f64 =
            pool.iter().map(|w| least_squares_code(w, &updated).error.powi(2)).sum();
        if loss_after <= loss_before {
            return updated;
        }
        delta *= 0.5;
    }
    dict.clone()
}

/// Pool loss `L = sum |x_j - D beta_j|^2` with refitted coefficients.
pub fn pool_loss(dict: &Dictionary, words: &[VisualWord]) -> f64 {
    words.iter().map(|w| least_squares_code(w, dict).error.powi(2)).sum()
}

#[derive(Debug, Clone, Copy)]
pub struct PoolState {
    pub count: usize,
    pub ready: bool,
}

/// Bounded buffer of normal words tagged for one dictionary.
#[derive(Debug, Clone)]
pub struct WordPool {
    pub dictionary_id: u32,
    pub capacity: usize,
    words: Vec<VisualWord>,
}

impl WordPool {
    pub fn new(dictionary_id: u32, capacity: usize) -> Self {
        Self { dictionary_id, capacity, words: Vec::new() }
    }

    /// Append a word whose token matches this pool's dictionary.
    pub fn deposit(&mut self, word: VisualWord, token: u32) -> Result<PoolState, CodebookError> {
        if token != self.dictionary_id {
            return Err(CodebookError::TokenMismatch { token, pool: self.dictionary_id });
        }
        self.words.push(word);
        Ok(PoolState { count: self.words.len(), ready: self.is_ready() })
    }

    pub fn is_ready(&self) -> bool {
        self.words.len() >= self.capacity
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[VisualWord] {
        &self.words
    }

    pub fn drain(&mut self) -> Vec<VisualWord> {
        std::mem::take(&mut self.words)
    }
}

/// Refine one dictionary from its full word pool.
///
/// Returns the replacement dictionary; the caller installs it by snapshot
/// swap and drains the pool.
pub fn local_update(
    dict: &Dictionary,
    pool: &WordPool,
    step: f64,
    passes: usize,
) -> Result<Dictionary, CodebookError> {
    if !pool.is_ready() {
        return Err(CodebookError::PoolNotReady { count: pool.len(), capacity: pool.capacity });
    }
    let refs: Vec<&VisualWord> = pool.words().iter().collect();
    let mut updated = dict.clone();
    for _ in 0..passes {
        updated = descent_pass(&updated, &refs, step);
    }
    Ok(updated)
}

/// Retrain the whole group from every pooled word plus the words that
/// triggered the overlap signal.
pub fn global_update(
    group: &GroupDictionary,
    pools: &[WordPool],
    triggers: &[VisualWord],
    params: &TrainParams,
) -> Result<TrainOutcome, CodebookError> {
    let mut words: Vec<VisualWord> = Vec::new();
    for pool in pools {
        words.extend_from_slice(pool.words());
    }
    words.extend_from_slice(triggers);
    let params = TrainParams { lambda: group.lambda, ..*params };
    train_group(&words, &params)
}

/// Events produced by one maintenance step.
#[derive(Debug, Clone, Default)]
pub struct MaintenanceEvents {
    /// Dictionaries refreshed by a local update.
    pub local: Vec<u32>,
    /// A global retrain was installed.
    pub global: bool,
    /// A global retrain is latched but deferred for lack of pooled words.
    pub global_deferred: bool,
}

/// Online driver around a trained group: snapshot classification, word pools,
/// and the local/global update protocol.
///
/// Classification runs against an immutable snapshot ([`Self::snapshot`]);
/// updates build replacements and install them atomically at maintenance
/// points, never in the middle of a clip.
pub struct OnlineCodebook {
    group: Arc<GroupDictionary>,
    pools: Vec<WordPool>,
    n_pool: usize,
    step: f64,
    passes: usize,
    train: TrainParams,
    pending_triggers: Vec<VisualWord>,
    global_updates: u64,
}

impl OnlineCodebook {
    pub fn new(group: GroupDictionary, n_pool: usize, step: f64, passes: usize, train: TrainParams) -> Self {
        let pools = group
            .dictionaries()
            .iter()
            .map(|d| WordPool::new(d.id(), n_pool))
            .collect();
        Self {
            group: Arc::new(group),
            pools,
            n_pool,
            step,
            passes,
            train,
            pending_triggers: Vec::new(),
            global_updates: 0,
        }
    }

    /// Current immutable group snapshot.
    pub fn snapshot(&self) -> Arc<GroupDictionary> {
        Arc::clone(&self.group)
    }

    pub fn pools(&self) -> &[WordPool] {
        &self.pools
    }

    /// Record one classified word: normal words join their dictionary's pool,
    /// except overlapping words, which only latch the global update request
    /// (they re-enter training through the retrain itself).
    pub fn observe(&mut self, word: &VisualWord, classification: &Classification) {
        if let Label::Normal { dictionary_id } = classification.label {
            if classification.overlap {
                self.pending_triggers.push(word.clone());
            } else if let Some(pool) =
                self.pools.iter_mut().find(|p| p.dictionary_id == dictionary_id)
            {
                pool.deposit(word.clone(), dictionary_id).expect("pool id matches token");
            }
        }
    }

    /// Run pending updates at a safe point between clips.
    ///
    /// Local updates run first for every full pool; a latched global update
    /// then retrains from all pooled words, or stays latched when the pools
    /// cannot seed a retrain yet.
    pub fn maintain(&mut self) -> MaintenanceEvents {
        let mut events = MaintenanceEvents::default();

        let ready: Vec<usize> =
            (0..self.pools.len()).filter(|&i| self.pools[i].is_ready()).collect();
        for pool_index in ready {
            let dict_id = self.pools[pool_index].dictionary_id;
            let dict = self
                .group
                .dictionaries()
                .iter()
                .find(|d| d.id() == dict_id)
                .expect("pool refers to a live dictionary")
                .clone();
            let updated = local_update(&dict, &self.pools[pool_index], self.step, self.passes)
                .expect("pool checked ready");
            let mut next = (*self.group).clone();
            if let Some(slot) = next.dictionaries.iter_mut().find(|d| d.id() == dict_id) {
                *slot = updated;
            }
            self.group = Arc::new(next);
            self.pools[pool_index].drain();
            events.local.push(dict_id);
        }

        if !self.pending_triggers.is_empty() {
            // a retrain from a handful of pooled words would forget most of
            // the trained structure; defer until a training-scale corpus
            // (one pool capacity) has accumulated
            let pooled: usize =
                self.pools.iter().map(|p| p.len()).sum::<usize>() + self.pending_triggers.len();
            if pooled < self.n_pool {
                events.global_deferred = true;
                return events;
            }
            match global_update(&self.group, &self.pools, &self.pending_triggers, &self.retrain_params()) {
                Ok(outcome) => {
                    self.group = Arc::new(outcome.group);
                    self.pools = self
                        .group
                        .dictionaries()
                        .iter()
                        .map(|d| WordPool::new(d.id(), self.n_pool))
                        .collect();
                    self.pending_triggers.clear();
                    self.global_updates += 1;
                    events.global = true;
                }
                Err(CodebookError::InsufficientWords { .. }) => {
                    events.global_deferred = true;
                }
                Err(e) => panic!("global update failed: {e}"),
            }
        }
        events
    }

    fn retrain_params(&self) -> TrainParams {
        TrainParams {
            seed: self.train.seed.wrapping_add(self.global_updates + 1),
            ..self.train
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn word(values: Vec<f64>) -> VisualWord {
        VisualWord { values, cell_index: 0, clip_start: 0 }
    }

    fn unit(t: usize, i: usize) -> DVector<f64> {
        let mut e = DVector::zeros(t);
        e[i] = 1.0;
        e
    }

    fn rng_word(rng: &mut ChaCha8Rng, t: usize) -> VisualWord {
        word((0..t).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Words on a given orthonormal basis subset, unit coefficient vectors,
    /// plus isotropic noise.
    fn subspace_words(
        rng: &mut ChaCha8Rng,
        t: usize,
        basis: &[usize],
        count: usize,
        noise: f64,
    ) -> Vec<VisualWord> {
        (0..count)
            .map(|_| {
                let mut coeffs: Vec<f64> = basis.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-9);
                coeffs.iter_mut().for_each(|c| *c /= norm);
                let mut values = vec![0.0; t];
                for (&axis, &c) in basis.iter().zip(&coeffs) {
                    values[axis] = c;
                }
                for v in values.iter_mut() {
                    *v += noise * rng.random_range(-1.0..1.0);
                }
                word(values)
            })
            .collect()
    }

    #[test]
    fn code_of_member_atom_is_exact() {
        let t = 12;
        let cols: Vec<DVector<f64>> = (0..4).map(|i| unit(t, i)).collect();
        let dict = Dictionary::from_columns(0, &cols).unwrap();
        let w = word(unit(t, 2).iter().copied().collect());
        let code = least_squares_code(&w, &dict);
        assert!(code.error < 1e-8);
        for (i, &b) in code.beta.iter().enumerate() {
            let expect = if i == 2 { 1.0 } else { 0.0 };
            assert!((b - expect).abs() < 1e-8, "beta[{i}] = {b}");
        }
    }

    #[test]
    fn orthonormal_atoms_give_projection_coefficients() {
        let t = 10;
        let cols: Vec<DVector<f64>> = vec![unit(t, 0), unit(t, 3), unit(t, 7)];
        let dict = Dictionary::from_columns(0, &cols).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = rng_word(&mut rng, t);
        let code = least_squares_code(&w, &dict);
        let x = DVector::from_column_slice(&w.values);
        let expect = dict.atoms().transpose() * &x;
        assert!((code.beta - expect).norm() < 1e-7);
    }

    #[test]
    fn residual_orthogonal_to_atoms() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let t = 30;
            let cols: Vec<DVector<f64>> = (0..10)
                .map(|_| DVector::from_fn(t, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let dict = Dictionary::from_columns(0, &cols).unwrap();
            let w = rng_word(&mut rng, t);
            let code = least_squares_code(&w, &dict);
            let x = DVector::from_column_slice(&w.values);
            let residual = &x - dict.atoms() * &code.beta;
            for j in 0..dict.atom_count() {
                let dot = dict.atoms().column(j).dot(&residual);
                assert!(dot.abs() < 1e-8, "atom {j} dot residual = {dot}");
            }
        }
    }

    #[test]
    fn duplicate_atoms_absorbed_by_ridge() {
        let t = 8;
        let cols = vec![unit(t, 1), unit(t, 1), unit(t, 4)];
        let dict = Dictionary::from_columns(0, &cols).unwrap();
        let w = word(unit(t, 1).iter().copied().collect());
        let code = least_squares_code(&w, &dict);
        assert!(code.error < 1e-6);
    }

    #[test]
    fn classify_zero_word_normal_without_overlap() {
        let dicts = vec![
            Dictionary::from_columns(0, &[unit(6, 0)]).unwrap(),
            Dictionary::from_columns(1, &[unit(6, 1)]).unwrap(),
        ];
        let group = GroupDictionary::new(dicts, 0.1).unwrap();
        let cls = group.classify(&word(vec![0.0; 6]));
        assert_eq!(cls.label, Label::Normal { dictionary_id: 0 });
        assert_eq!(cls.error, 0.0);
        assert!(!cls.overlap);
    }

    #[test]
    fn classify_orthogonal_word_abnormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = 20;
        let cols: Vec<DVector<f64>> = (0..5).map(|i| unit(t, i)).collect();
        let group =
            GroupDictionary::new(vec![Dictionary::from_columns(0, &cols).unwrap()], 0.1).unwrap();
        // Gram-Schmidt a random vector against all atoms, then scale it
        let mut v = DVector::from_fn(t, |_, _| rng.random_range(-1.0..1.0));
        for i in 0..5 {
            let a = unit(t, i);
            let proj = a.dot(&v);
            v -= a * proj;
        }
        v *= 50.0 / v.norm();
        let cls = group.classify(&word(v.iter().copied().collect()));
        assert_eq!(cls.label, Label::Abnormal);
        assert!((cls.error - 50.0).abs() < 1e-6);
    }

    #[test]
    fn classify_returns_lowest_passing_index_and_overlap() {
        let t = 10;
        let dicts = vec![
            Dictionary::from_columns(0, &[unit(t, 0)]).unwrap(),
            Dictionary::from_columns(1, &[unit(t, 1)]).unwrap(),
            Dictionary::from_columns(2, &[unit(t, 5)]).unwrap(),
            Dictionary::from_columns(3, &[unit(t, 2)]).unwrap(),
            Dictionary::from_columns(4, &[unit(t, 5)]).unwrap(),
        ];
        let group = GroupDictionary::new(dicts, 0.1).unwrap();
        let cls = group.classify(&word(unit(t, 5).iter().copied().collect()));
        assert_eq!(cls.label, Label::Normal { dictionary_id: 2 });
        assert!(cls.overlap, "dictionaries 2 and 4 both pass");
    }

    #[test]
    fn raising_lambda_never_flips_normal_to_abnormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let words = subspace_words(&mut rng, 16, &[0, 1, 2], 60, 0.02);
        let params = TrainParams {
            lambda: 0.1,
            atoms_per_dictionary: 3,
            seed: 1,
            ..Default::default()
        };
        let trained = train_group(&words, &params).unwrap();
        let mut wide = trained.group.clone();
        wide.lambda *= 4.0;
        for w in &words {
            if matches!(trained.group.classify(w).label, Label::Normal { .. }) {
                assert!(matches!(wide.classify(w).label, Label::Normal { .. }));
            }
        }
    }

    #[test]
    fn train_single_subspace_gives_one_dictionary() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let words = subspace_words(&mut rng, 30, &[0, 1, 2, 3, 4], 200, 0.01);
        let params = TrainParams {
            lambda: 0.1,
            atoms_per_dictionary: 5,
            max_dictionaries: 10,
            seed: 4,
            ..Default::default()
        };
        let outcome = train_group(&words, &params).unwrap();
        assert_eq!(outcome.group.s(), 1);
        let normal = words
            .iter()
            .filter(|w| matches!(outcome.group.classify(w).label, Label::Normal { .. }))
            .count();
        assert!(normal >= 199, "expected full coverage, got {normal}/200");
    }

    #[test]
    fn train_two_subspaces_gives_two_dictionaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut words = subspace_words(&mut rng, 30, &[0, 1, 2, 3, 4], 200, 0.01);
        words.extend(subspace_words(&mut rng, 30, &[5, 6, 7, 8, 9], 200, 0.01));
        let params = TrainParams {
            lambda: 0.1,
            atoms_per_dictionary: 5,
            max_dictionaries: 20,
            seed: 6,
            ..Default::default()
        };
        let outcome = train_group(&words, &params).unwrap();
        assert_eq!(outcome.group.s(), 2);
        for w in &words {
            let passes = outcome
                .group
                .dictionaries()
                .iter()
                .filter(|d| least_squares_code(w, d).error < params.lambda)
                .count();
            assert_eq!(passes, 1, "each word must pass under exactly one dictionary");
        }
    }

    #[test]
    fn train_insufficient_words() {
        let words = vec![word(vec![1.0; 10]); 3];
        let params = TrainParams { atoms_per_dictionary: 5, ..Default::default() };
        assert!(matches!(
            train_group(&words, &params),
            Err(CodebookError::InsufficientWords { needed: 5, got: 3 })
        ));
    }

    #[test]
    fn train_all_zero_words_falls_back() {
        let words = vec![word(vec![0.0; 12]); 20];
        let params = TrainParams { atoms_per_dictionary: 4, lambda: 0.05, ..Default::default() };
        let outcome = train_group(&words, &params).unwrap();
        assert_eq!(outcome.group.s(), 1);
        assert_eq!(outcome.uncovered, 0);
        assert!(matches!(outcome.group.classify(&words[0]).label, Label::Normal { .. }));
    }

    #[test]
    fn pool_deposit_and_ready() {
        let mut pool = WordPool::new(3, 2);
        let state = pool.deposit(word(vec![1.0; 4]), 3).unwrap();
        assert_eq!((state.count, state.ready), (1, false));
        let state = pool.deposit(word(vec![2.0; 4]), 3).unwrap();
        assert_eq!((state.count, state.ready), (2, true));
        assert!(matches!(
            pool.deposit(word(vec![0.0; 4]), 5),
            Err(CodebookError::TokenMismatch { token: 5, pool: 3 })
        ));
    }

    #[test]
    fn local_update_requires_full_pool() {
        let dict = Dictionary::from_columns(0, &[unit(6, 0)]).unwrap();
        let pool = WordPool::new(0, 4);
        assert!(matches!(
            local_update(&dict, &pool, 1e-4, 1),
            Err(CodebookError::PoolNotReady { .. })
        ));
    }

    #[test]
    fn local_update_stationary_when_residuals_zero() {
        let t = 8;
        let dict = Dictionary::from_columns(0, &[unit(t, 0), unit(t, 1)]).unwrap();
        let mut pool = WordPool::new(0, 2);
        pool.deposit(word(unit(t, 0).iter().copied().collect()), 0).unwrap();
        pool.deposit(word(unit(t, 1).iter().copied().collect()), 0).unwrap();
        let updated = local_update(&dict, &pool, 1e-4, 1).unwrap();
        let drift: f64 = (updated.atoms() - dict.atoms()).norm();
        assert!(drift < 1e-9, "zero-residual pool must leave the dictionary fixed, drift {drift}");
    }

    #[test]
    fn local_update_descends_and_keeps_unit_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for round in 0..10 {
            let t = 20;
            let cols: Vec<DVector<f64>> = (0..6)
                .map(|_| DVector::from_fn(t, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let dict = Dictionary::from_columns(round, &cols).unwrap();
            let mut pool = WordPool::new(round, 15);
            for _ in 0..15 {
                pool.deposit(rng_word(&mut rng, t), round).unwrap();
            }
            let before = pool_loss(&dict, pool.words());
            let updated = local_update(&dict, &pool, 1e-4, 1).unwrap();
            let after = pool_loss(&updated, pool.words());
            assert!(after <= before + 1e-9, "loss rose from {before} to {after}");
            assert!(updated.unit_column_defect() < 1e-9);
        }
    }

    #[test]
    fn global_update_merges_duplicate_dictionaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let t = 20;
        let words = subspace_words(&mut rng, t, &[0, 1, 2], 120, 0.01);
        // two near-duplicate dictionaries over the same subspace
        let jitter = |rng: &mut ChaCha8Rng| {
            let cols: Vec<DVector<f64>> = (0..3)
                .map(|i| unit(t, i) + DVector::from_fn(t, |_, _| rng.random_range(-0.01..0.01)))
                .collect();
            cols
        };
        let d0 = Dictionary::from_columns(0, &jitter(&mut rng)).unwrap();
        let d1 = Dictionary::from_columns(1, &jitter(&mut rng)).unwrap();
        let group = GroupDictionary::new(vec![d0, d1], 0.1).unwrap();
        let mut pools = vec![WordPool::new(0, 1000), WordPool::new(1, 1000)];
        for (i, w) in words.iter().enumerate() {
            let id = (i % 2) as u32;
            pools[id as usize].deposit(w.clone(), id).unwrap();
        }
        let params =
            TrainParams { atoms_per_dictionary: 3, lambda: 0.1, seed: 8, ..Default::default() };
        let outcome = global_update(&group, &pools, &[words[0].clone()], &params).unwrap();
        assert!(outcome.group.s() < 2, "duplicates must merge, got s={}", outcome.group.s());
        for pool in &pools {
            for w in pool.words() {
                assert!(matches!(outcome.group.classify(w).label, Label::Normal { .. }));
            }
        }
    }

    #[test]
    fn online_defers_global_update_with_empty_pools() {
        let dicts = vec![
            Dictionary::from_columns(0, &[unit(8, 0)]).unwrap(),
            Dictionary::from_columns(1, &[unit(8, 0)]).unwrap(),
        ];
        let group = GroupDictionary::new(dicts, 0.1).unwrap();
        let snapshot_before = group.clone();
        let train =
            TrainParams { atoms_per_dictionary: 2, lambda: 0.1, ..Default::default() };
        let mut online = OnlineCodebook::new(group, 4, 1e-4, 1, train);
        let w = word(unit(8, 0).iter().copied().collect());
        let cls = online.snapshot().classify(&w);
        assert!(cls.overlap);
        online.observe(&w, &cls);
        let events = online.maintain();
        assert!(events.global_deferred && !events.global);
        assert_eq!(*online.snapshot(), snapshot_before);
        // once a training-scale corpus accumulates, the latched update fires
        for _ in 0..3 {
            let cls = online.snapshot().classify(&w);
            online.observe(&w, &cls);
        }
        let events = online.maintain();
        assert!(events.global, "latched global update must fire when words suffice");
    }

    #[test]
    fn online_local_update_swaps_and_drains() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let t = 12;
        let cols: Vec<DVector<f64>> = (0..3)
            .map(|_| DVector::from_fn(t, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let group =
            GroupDictionary::new(vec![Dictionary::from_columns(0, &cols).unwrap()], 0.5).unwrap();
        let train = TrainParams { atoms_per_dictionary: 3, lambda: 0.5, ..Default::default() };
        let mut online = OnlineCodebook::new(group, 4, 1e-4, 1, train);
        let before = online.snapshot();
        // copies of the first atom are always normal under the sole dictionary
        let atom_word = word(before.dictionaries()[0].atoms().column(0).iter().copied().collect());
        for _ in 0..4 {
            let cls = online.snapshot().classify(&atom_word);
            assert!(matches!(cls.label, Label::Normal { .. }));
            online.observe(&atom_word, &cls);
        }
        assert!(online.pools()[0].is_ready());
        let events = online.maintain();
        assert_eq!(events.local, vec![0]);
        assert!(online.pools()[0].is_empty(), "pool drains after its update is consumed");
        assert!(!Arc::ptr_eq(&before, &online.snapshot()), "snapshot swaps atomically");
    }
}
