use enrich_npp::design::{effective_subspace, enriched_effect_draws, interim_decision, DecisionKind};
use enrich_npp::sampler::ParamLayout;
use enrich_npp::{BiomarkerSet, DesignConfig, Direction, PosteriorDraws};
use proptest::prelude::*;

fn design(direction: Direction) -> DesignConfig {
    DesignConfig {
        n_max: 600,
        interim_ns: vec![400],
        alpha: 0.05,
        clinical_threshold: 0.0,
        efficacy_margin: 0.0,
        futility_margin: 0.0,
        efficacy_cutoff: 0.9,
        futility_cutoff: 0.8,
        direction,
        candidate_levels: vec![0, 1],
    }
}

/// Draws of (beta2, beta3) embedded in a no-borrowing layout.
fn draws(effects: &[(f64, f64)]) -> PosteriorDraws {
    let rows: Vec<Vec<f64>> = effects.iter().map(|&(g0, d)| vec![0.0, 0.0, g0, d]).collect();
    let layout = ParamLayout {
        n_weights: 0,
        has_sigma: false,
    };
    PosteriorDraws::from_rows(layout, &rows, vec![0; rows.len()]).unwrap()
}

fn effect_draws() -> impl Strategy<Value = Vec<(f64, f64)>> {
    (-1.0f64..1.0, -1.0f64..1.0).prop_flat_map(|(c0, c1)| {
        prop::collection::vec((c0 - 0.5..c0 + 0.5, c1 - 0.5..c1 + 0.5), 20..200)
    })
}

const WEIGHTS: [&[(u8, f64)]; 3] = [&[(0, 1.0)], &[(1, 1.0)], &[(0, 0.45), (1, 0.55)]];

proptest! {
    #[test]
    fn negating_effects_and_direction_is_neutral(eff in effect_draws(), w in 0usize..3) {
        let neg: Vec<(f64, f64)> = eff.iter().map(|&(a, b)| (-a, -b)).collect();
        let (up, down) = (draws(&eff), draws(&neg));
        let (hb, lb) = (design(Direction::HigherBetter), design(Direction::LowerBetter));
        prop_assert_eq!(
            effective_subspace(&up, &[0, 1], 0.0, 0.05, Direction::HigherBetter),
            effective_subspace(&down, &[0, 1], 0.0, 0.05, Direction::LowerBetter)
        );
        let d_up = enriched_effect_draws(&up, WEIGHTS[w], Direction::HigherBetter);
        let d_down = enriched_effect_draws(&down, WEIGHTS[w], Direction::LowerBetter);
        prop_assert_eq!(&d_up, &d_down);
        let set = BiomarkerSet::full();
        prop_assert_eq!(interim_decision(&d_up, &hb, &set), interim_decision(&d_down, &lb, &set));
    }

    #[test]
    fn subspace_is_never_empty(eff in effect_draws(), alpha in 0.001f64..0.5, e1 in -0.5f64..0.5) {
        let s = effective_subspace(&draws(&eff), &[0, 1], e1, alpha, Direction::HigherBetter);
        prop_assert!(!s.is_empty());
    }

    #[test]
    fn smaller_alpha_shrinks_the_subspace(eff in effect_draws(), lo in 0.001f64..0.2, extra in 0.0f64..0.3) {
        let d = draws(&eff);
        let strict = effective_subspace(&d, &[0, 1], 0.0, lo, Direction::HigherBetter);
        let loose = effective_subspace(&d, &[0, 1], 0.0, lo + extra, Direction::HigherBetter);
        // the full-set fallback is the one exception to set inclusion
        let fallback = strict == BiomarkerSet::full() && !eff.is_empty();
        prop_assert!(strict.is_subset(&loose) || fallback);
    }

    #[test]
    fn favourable_draws_keep_efficacy(
        base in prop::collection::vec(-0.5f64..2.0, 50..300),
        extra in prop::collection::vec(0.001f64..3.0, 1..100),
    ) {
        let cfg = design(Direction::HigherBetter);
        let set = BiomarkerSet::full();
        if interim_decision(&base, &cfg, &set).kind == DecisionKind::StopEfficacy {
            let mut more = base.clone();
            more.extend(extra);
            prop_assert_eq!(interim_decision(&more, &cfg, &set).kind, DecisionKind::StopEfficacy);
        }
    }
}
