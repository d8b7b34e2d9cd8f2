//! Prompt-bank ensembling and outlier-pruned selection.
//!
//! Each prompt of a class is scored by its mean scaled similarity to the
//! support images. Prompts whose modified z-score `(S - median) / MAD` has
//! magnitude at or above `zeta_s` are dropped from the teacher ensemble.
//! The consistency target always uses the full-bank mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::types::{Axis, ClassCatalog, EmbeddingMatrix};

/// Per-class mean of the bank embeddings (rows are not re-normalized).
pub fn mean_ensemble(banks: &[EmbeddingMatrix]) -> Result<EmbeddingMatrix> {
    let masks: Vec<Vec<bool>> = banks.iter().map(|b| vec![true; b.len()]).collect();
    selected_ensemble(banks, &masks)
}

/// Per-class mean over the prompts whose mask entry is true.
pub fn selected_ensemble(banks: &[EmbeddingMatrix], masks: &[Vec<bool>]) -> Result<EmbeddingMatrix> {
    if banks.len() != masks.len() {
        return Err(Error::Shape(format!(
            "{} class banks but {} masks",
            banks.len(),
            masks.len()
        )));
    }
    let dim = banks.first().map_or(0, |b| b.dim());
    let mut out = Matrix::zeros(banks.len(), dim);
    for (c, (bank, mask)) in banks.iter().zip(masks).enumerate() {
        if bank.dim() != dim {
            return Err(Error::Shape(format!(
                "class {c} bank has dim {}, expected {dim}",
                bank.dim()
            )));
        }
        if mask.len() != bank.len() {
            return Err(Error::Shape(format!(
                "class {c} mask has {} entries for {} prompts",
                mask.len(),
                bank.len()
            )));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::Data(format!("class {c} has no selected prompts")));
        }
        let row = out.row_mut(c);
        for (prompt, _) in bank.iter_rows().zip(mask).filter(|(_, &m)| m) {
            for (acc, v) in row.iter_mut().zip(prompt) {
                *acc += v;
            }
        }
        let n = count as f64;
        row.iter_mut().for_each(|v| *v /= n);
    }
    EmbeddingMatrix::new(Axis::PerClass, out)
}

/// `S_j = (1/B) * sum_i beta * <prompt_j, image_i>` for every prompt of one
/// class.
pub fn prompt_scores(bank: &EmbeddingMatrix, images: &EmbeddingMatrix, beta: f64) -> Result<Vec<f64>> {
    if images.is_empty() {
        return Err(Error::Data("prompt scoring needs at least one image".into()));
    }
    if bank.dim() != images.dim() {
        return Err(Error::Shape(format!(
            "prompt dim {} vs image dim {}",
            bank.dim(),
            images.dim()
        )));
    }
    let b = images.len() as f64;
    Ok(bank
        .iter_rows()
        .map(|p| images.iter_rows().map(|v| beta * dot(p, v)).sum::<f64>() / b)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MadStats {
    pub median: f64,
    pub mad: f64,
    pub zscores: Vec<f64>,
}

/// Median of a non-empty slice; even lengths average the two middle values.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Data("median of an empty sequence".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Ok(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    })
}

/// Median, median absolute deviation, and modified z-scores with no
/// consistency constant. A zero MAD yields all-zero scores.
pub fn mad_zscores(scores: &[f64]) -> Result<MadStats> {
    let median = median(scores)?;
    let deviations: Vec<f64> = scores.iter().map(|s| (s - median).abs()).collect();
    let mad = self::median(&deviations)?;
    let zscores = if mad == 0.0 {
        vec![0.0; scores.len()]
    } else {
        scores.iter().map(|s| (s - median) / mad).collect()
    };
    Ok(MadStats { median, mad, zscores })
}

/// Keeps `|z| < zeta_s`. If nothing passes, keeps the single prompt with the
/// smallest `|z|` (lowest index on ties).
pub fn select_prompts(zscores: &[f64], zeta_s: f64) -> Vec<bool> {
    let mut mask: Vec<bool> = zscores.iter().map(|z| z.abs() < zeta_s).collect();
    if !mask.iter().any(|&m| m) {
        let best = zscores
            .iter()
            .enumerate()
            .fold(None::<(usize, f64)>, |best, (i, z)| match best {
                Some((_, b)) if b <= z.abs() => best,
                _ => Some((i, z.abs())),
            });
        if let Some((i, _)) = best {
            mask[i] = true;
        }
    }
    mask
}

/// Selection diagnostics for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptScoreReport {
    pub class_name: String,
    pub scores: Vec<f64>,
    pub median: f64,
    pub mad: f64,
    pub zscores: Vec<f64>,
    pub selected_mask: Vec<bool>,
    pub selected: Vec<usize>,
    pub n_selected: usize,
}

impl PromptScoreReport {
    pub fn excluded(&self) -> Vec<usize> {
        self.selected_mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| !m)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Both ensembles plus the per-class selection reports.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensembles {
    /// Full-bank mean, the consistency target.
    pub general: EmbeddingMatrix,
    /// Outlier-pruned mean, the distillation teacher.
    pub selected: EmbeddingMatrix,
    pub reports: Vec<PromptScoreReport>,
}

/// Scores every class bank against `images`, selects prompts, and builds
/// both ensembles.
pub fn build_ensembles(
    banks: &[EmbeddingMatrix],
    images: &EmbeddingMatrix,
    catalog: &ClassCatalog,
    beta: f64,
    zeta_s: f64,
) -> Result<Ensembles> {
    if banks.len() != catalog.len() {
        return Err(Error::Shape(format!(
            "{} class banks for {} catalog classes",
            banks.len(),
            catalog.len()
        )));
    }
    let mut reports = Vec::with_capacity(banks.len());
    for (bank, entry) in banks.iter().zip(catalog.entries()) {
        let scores = prompt_scores(bank, images, beta)?;
        let stats = mad_zscores(&scores)?;
        let mask = select_prompts(&stats.zscores, zeta_s);
        let selected: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
        reports.push(PromptScoreReport {
            class_name: entry.name.clone(),
            scores,
            median: stats.median,
            mad: stats.mad,
            zscores: stats.zscores,
            n_selected: selected.len(),
            selected,
            selected_mask: mask,
        });
    }
    let masks: Vec<Vec<bool>> = reports.iter().map(|r| r.selected_mask.clone()).collect();
    Ok(Ensembles {
        general: mean_ensemble(banks)?,
        selected: selected_ensemble(banks, &masks)?,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows(dim: usize, data: &[&[f64]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(Axis::PerPrompt, dim, data).unwrap()
    }

    #[test]
    fn mean_of_one_and_opposites() {
        let e = [0.6, 0.8];
        let out = mean_ensemble(&[rows(2, &[&e])]).unwrap();
        assert_eq!(out.row(0), &e);
        let out = mean_ensemble(&[rows(2, &[&e, &[-0.6, -0.8]])]).unwrap();
        assert_eq!(out.row(0), &[0.0, 0.0]);
        assert!(mean_ensemble(&[EmbeddingMatrix::empty(Axis::PerPrompt, 2)]).is_err());
    }

    #[test]
    fn mean_matches_streaming_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dim = 16;
        let banks: Vec<EmbeddingMatrix> = (0..3)
            .map(|_| {
                let data: Vec<Vec<f64>> = (0..50)
                    .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect();
                EmbeddingMatrix::from_rows(Axis::PerPrompt, dim, &data).unwrap()
            })
            .collect();
        let out = mean_ensemble(&banks).unwrap();
        for (c, bank) in banks.iter().enumerate() {
            for d in 0..dim {
                let mut running = 0.0;
                for (k, r) in bank.iter_rows().enumerate() {
                    running += (r[d] - running) / (k as f64 + 1.0);
                }
                assert!((out.get(c, d) - running).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scores_of_identical_and_orthogonal() {
        let prompts = rows(2, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let images = rows(2, &[&[1.0, 0.0]]);
        let s = prompt_scores(&prompts, &images, 100.0).unwrap();
        assert_eq!(s, vec![100.0, 0.0]);
        assert!(prompt_scores(&prompts, &EmbeddingMatrix::empty(Axis::PerImage, 2), 1.0).is_err());
    }

    #[test]
    fn scores_match_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dim = 6;
        let gen = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        };
        let p = gen(5, &mut rng);
        let v = gen(3, &mut rng);
        let s = prompt_scores(
            &EmbeddingMatrix::from_rows(Axis::PerPrompt, dim, &p).unwrap(),
            &EmbeddingMatrix::from_rows(Axis::PerImage, dim, &v).unwrap(),
            50.0,
        )
        .unwrap();
        for j in 0..5 {
            let mut total = 0.0;
            for i in 0..3 {
                let mut d = 0.0;
                for k in 0..dim {
                    d += p[j][k] * v[i][k];
                }
                total += 50.0 * d;
            }
            assert!((s[j] - total / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mad_example() {
        let st = mad_zscores(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!(st.median, 3.0);
        assert_eq!(st.mad, 1.0);
        assert_eq!(st.zscores, vec![-2.0, -1.0, 0.0, 1.0, 97.0]);
        let mask = select_prompts(&st.zscores, 1.5);
        assert_eq!(mask, vec![false, true, true, true, false]);
    }

    #[test]
    fn mad_degenerate_and_empty() {
        let st = mad_zscores(&[4.0; 6]).unwrap();
        assert_eq!(st.mad, 0.0);
        assert!(st.zscores.iter().all(|&z| z == 0.0));
        assert!(select_prompts(&st.zscores, 0.1).iter().all(|&m| m));
        assert!(mad_zscores(&[]).is_err());
    }

    #[test]
    fn even_length_median() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
    }

    #[test]
    fn fallback_keeps_smallest_abs_z() {
        assert_eq!(
            select_prompts(&[3.0, -2.0, 2.0, 5.0], 1.0),
            vec![false, true, false, false]
        );
    }

    #[test]
    fn selected_ensemble_edge_cases() {
        let bank = rows(2, &[&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]]);
        let one = selected_ensemble(std::slice::from_ref(&bank), &[vec![false, true, false]]).unwrap();
        assert_eq!(one.row(0), &[0.0, 1.0]);
        let all = selected_ensemble(std::slice::from_ref(&bank), &[vec![true; 3]]).unwrap();
        assert_eq!(all, mean_ensemble(std::slice::from_ref(&bank)).unwrap());
        assert!(selected_ensemble(std::slice::from_ref(&bank), &[vec![false; 3]]).is_err());
    }

    #[test]
    fn filtered_mean_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dim = 8;
        let data: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let bank = EmbeddingMatrix::from_rows(Axis::PerPrompt, dim, &data).unwrap();
        let pruned = [3usize, 17, 28, 44];
        let mask: Vec<bool> = (0..50).map(|i| !pruned.contains(&i)).collect();
        let out = selected_ensemble(&[bank], &[mask]).unwrap();
        for d in 0..dim {
            let kept: Vec<f64> = (0..50).filter(|i| !pruned.contains(i)).map(|i| data[i][d]).collect();
            let oracle = kept.iter().sum::<f64>() / kept.len() as f64;
            assert!((out.get(0, d) - oracle).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn zscores_shift_and_scale_invariant(
            s in proptest::collection::vec(-100.0f64..100.0, 1..40),
            shift in -50.0f64..50.0,
            scale in 0.01f64..100.0,
        ) {
            let base = mad_zscores(&s).unwrap();
            let moved: Vec<f64> = s.iter().map(|v| v * scale + shift).collect();
            let other = mad_zscores(&moved).unwrap();
            for (a, b) in base.zscores.iter().zip(&other.zscores) {
                prop_assert!((a - b).abs() < 1e-6 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn threshold_is_monotone(
            z in proptest::collection::vec(-5.0f64..5.0, 1..40),
            lo in 0.1f64..3.0,
            extra in 0.0f64..3.0,
        ) {
            let small = select_prompts(&z, lo);
            let large = select_prompts(&z, lo + extra);
            for (a, b) in small.iter().zip(&large) {
                prop_assert!(!a || *b);
            }
        }
    }
}
