//! Percent agreement with Cohen's kappa alongside.

use crate::Label;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub a: String,
    pub b: String,
    pub n_compared: usize,
    /// `100 * matches / n_compared`; `None` when nothing is compared.
    pub percent_agreement: Option<f64>,
    /// Chance-corrected agreement; `None` when undefined.
    pub cohen_kappa: Option<f64>,
    /// `confusion[label_a][label_b]` in label index order.
    pub confusion: [[usize; 3]; 3],
}

pub fn agreement(a: &BTreeMap<String, Label>, b: &BTreeMap<String, Label>) -> AgreementStats {
    agreement_between("a", a, "b", b)
}

/// Agreement over the keys present in both maps.
pub fn agreement_between(
    name_a: &str,
    a: &BTreeMap<String, Label>,
    name_b: &str,
    b: &BTreeMap<String, Label>,
) -> AgreementStats {
    let mut confusion = [[0usize; 3]; 3];
    for (id, la) in a {
        if let Some(lb) = b.get(id) {
            confusion[la.index()][lb.index()] += 1;
        }
    }
    let n: usize = confusion.iter().flatten().sum();
    let matches: usize = (0..3).map(|i| confusion[i][i]).sum();
    let (percent, kappa) = if n == 0 {
        (None, None)
    } else {
        let nf = n as f64;
        let po = matches as f64 / nf;
        let pe: f64 = (0..3)
            .map(|i| {
                let row: usize = confusion[i].iter().sum();
                let col: usize = (0..3).map(|r| confusion[r][i]).sum();
                (row as f64 / nf) * (col as f64 / nf)
            })
            .sum();
        let kappa = (pe < 1.0).then(|| (po - pe) / (1.0 - pe));
        (Some(100.0 * po), kappa)
    };
    AgreementStats {
        a: name_a.to_string(),
        b: name_b.to_string(),
        n_compared: n,
        percent_agreement: percent,
        cohen_kappa: kappa,
        confusion,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(pairs: &[(&str, Label)]) -> BTreeMap<String, Label> {
        pairs.iter().map(|(k, l)| (k.to_string(), *l)).collect()
    }

    #[test]
    fn identical_maps() {
        let m: BTreeMap<String, Label> = (0..50).map(|i| (format!("s{i}"), Label::NoPve)).collect();
        let s = agreement(&m, &m);
        assert_eq!(s.percent_agreement, Some(100.0));
        assert_eq!(s.n_compared, 50);
        // A single shared category leaves kappa undefined.
        assert_eq!(s.cohen_kappa, None);
    }

    #[test]
    fn disjoint_is_null() {
        let s = agreement(
            &labels(&[("x", Label::NoPve)]),
            &labels(&[("y", Label::NoPve)]),
        );
        assert_eq!(s.n_compared, 0);
        assert_eq!(s.percent_agreement, None);
        assert_eq!(
            serde_json::to_value(&s).unwrap()["percent_agreement"],
            serde_json::Value::Null
        );
    }

    #[test]
    fn kappa_hand_example() {
        // 2x2 table in the first two labels: [[20, 5], [10, 15]], n = 50.
        let mut a = BTreeMap::new();
        let mut b = BTreeMap::new();
        let cells = [(0, 0, 20), (0, 1, 5), (1, 0, 10), (1, 1, 15)];
        let all = [Label::DirectPve, Label::ContextualPve];
        let mut k = 0;
        for (i, j, count) in cells {
            for _ in 0..count {
                a.insert(format!("s{k}"), all[i]);
                b.insert(format!("s{k}"), all[j]);
                k += 1;
            }
        }
        let s = agreement(&a, &b);
        assert_eq!(s.percent_agreement, Some(70.0));
        // po = 0.7, pe = 0.5 * 0.6 + 0.5 * 0.4 = 0.5
        assert!((s.cohen_kappa.unwrap() - 0.4).abs() < 1e-12);
    }
}
