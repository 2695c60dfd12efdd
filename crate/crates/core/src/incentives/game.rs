//! Two-player honest/dishonest exchange game.
//!
//! Player 1 is the buyer, player 2 the seller; strategy 0 is honest, 1 is
//! dishonest. Each payoff is the sum of four components: asset value outcome,
//! LZSP reward, seller-stake effect and reputation change.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PayoffParams {
    /// Utility of the asset value gained or lost.
    pub v: f64,
    /// Utility of an LZSP reward.
    pub r: f64,
    /// Seller keeps the stake and its returns.
    pub s_keep: f64,
    /// Seller loses the stake.
    pub s_lose: f64,
    /// Buyer receives the seller's stake.
    pub s_gain: f64,
    /// Utility of a reputation change.
    pub rho: f64,
    /// Whether reputation terms enter the payoffs at all.
    pub include_reputation: bool,
}

impl Default for PayoffParams {
    fn default() -> Self {
        PayoffParams {
            v: 10.0,
            r: 2.0,
            s_keep: 1.0,
            s_lose: 8.0,
            s_gain: 8.0,
            rho: 1.0,
            include_reputation: true,
        }
    }
}

impl PayoffParams {
    pub fn zero() -> Self {
        PayoffParams {
            v: 0.0,
            r: 0.0,
            s_keep: 0.0,
            s_lose: 0.0,
            s_gain: 0.0,
            rho: 0.0,
            include_reputation: true,
        }
    }

    fn fields(&self) -> [(&'static str, f64); 6] {
        [
            ("v", self.v),
            ("r", self.r),
            ("s_keep", self.s_keep),
            ("s_lose", self.s_lose),
            ("s_gain", self.s_gain),
            ("rho", self.rho),
        ]
    }

    /// Every value finite and non-negative.
    pub fn check(&self) -> Result<(), GameError> {
        for (name, value) in self.fields() {
            if !value.is_finite() || value < 0.0 {
                return Err(GameError::InvalidParams { name, value });
            }
        }
        Ok(())
    }

    /// The strictly positive regime the incentive argument assumes.
    pub fn is_strictly_valid(&self) -> bool {
        self.check().is_ok()
            && self.v > 0.0
            && self.r > 0.0
            && self.s_lose > 0.0
            && self.s_gain > 0.0
            && self.rho > 0.0
    }

    fn rho_eff(&self) -> f64 {
        if self.include_reputation {
            self.rho
        } else {
            0.0
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        PayoffParams {
            v: self.v * k,
            r: self.r * k,
            s_keep: self.s_keep * k,
            s_lose: self.s_lose * k,
            s_gain: self.s_gain * k,
            rho: self.rho * k,
            include_reputation: self.include_reputation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error("parameter {name} = {value} must be finite and non-negative")]
    InvalidParams { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Honest,
    Dishonest,
}

impl Strategy {
    pub const BOTH: [Strategy; 2] = [Strategy::Honest, Strategy::Dishonest];

    fn idx(self) -> usize {
        match self {
            Strategy::Honest => 0,
            Strategy::Dishonest => 1,
        }
    }

    fn other(self) -> Strategy {
        match self {
            Strategy::Honest => Strategy::Dishonest,
            Strategy::Dishonest => Strategy::Honest,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Strategy::Honest => "s1",
            Strategy::Dishonest => "s2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Profile {
    pub buyer: Strategy,
    pub seller: Strategy,
}

impl Profile {
    pub const ALL: [Profile; 4] = [
        Profile { buyer: Strategy::Honest, seller: Strategy::Honest },
        Profile { buyer: Strategy::Honest, seller: Strategy::Dishonest },
        Profile { buyer: Strategy::Dishonest, seller: Strategy::Honest },
        Profile { buyer: Strategy::Dishonest, seller: Strategy::Dishonest },
    ];

    pub const HONEST: Profile = Profile::ALL[0];

    pub fn label(&self) -> String {
        format!("({},{})", self.buyer.short(), self.seller.short())
    }
}

/// Named payoff components of one player in one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub value: f64,
    pub lzsp: f64,
    pub stake: f64,
    pub reputation: f64,
}

impl Components {
    pub fn total(&self) -> f64 {
        self.value + self.lzsp + self.stake + self.reputation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub buyer: Components,
    pub seller: Components,
}

impl Cell {
    pub fn payoffs(&self) -> (f64, f64) {
        (self.buyer.total(), self.seller.total())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffMatrix {
    /// Indexed `[buyer][seller]`, honest first.
    pub cells: [[Cell; 2]; 2],
}

impl PayoffMatrix {
    pub fn cell(&self, p: Profile) -> &Cell {
        &self.cells[p.buyer.idx()][p.seller.idx()]
    }

    pub fn payoffs(&self, p: Profile) -> (f64, f64) {
        self.cell(p).payoffs()
    }

    pub fn from_payoffs(u: [[(f64, f64); 2]; 2]) -> Self {
        let mk = |(a, b): (f64, f64)| Cell {
            buyer: Components { value: a, lzsp: 0.0, stake: 0.0, reputation: 0.0 },
            seller: Components { value: b, lzsp: 0.0, stake: 0.0, reputation: 0.0 },
        };
        PayoffMatrix {
            cells: [[mk(u[0][0]), mk(u[0][1])], [mk(u[1][0]), mk(u[1][1])]],
        }
    }
}

pub fn build_payoff_matrix(p: &PayoffParams) -> Result<PayoffMatrix, GameError> {
    p.check()?;
    let rho = p.rho_eff();
    let c = |value, lzsp, stake, reputation| Components { value, lzsp, stake, reputation };
    let both_honest = Cell {
        buyer: c(p.v, p.r, 0.0, rho),
        seller: c(p.v, p.r, p.s_keep, rho),
    };
    let seller_cheats = Cell {
        buyer: c(p.v, 0.0, p.s_gain, 0.0),
        seller: c(-p.v, 0.0, -p.s_lose, -rho),
    };
    let buyer_cheats = Cell {
        buyer: c(-p.v, 0.0, 0.0, -rho),
        seller: c(p.v, 0.0, p.s_keep, 0.0),
    };
    // Both players keep the asset-value gain here, as tabulated.
    let both_cheat = Cell {
        buyer: c(p.v, 0.0, 0.0, 0.0),
        seller: c(p.v, 0.0, -p.s_lose, 0.0),
    };
    Ok(PayoffMatrix {
        cells: [[both_honest, seller_cheats], [buyer_cheats, both_cheat]],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub profile: Profile,
    /// Every unilateral deviation strictly lowers the deviator's payoff.
    pub strict: bool,
}

/// All pure-strategy Nash equilibria by exhaustive best-response check.
pub fn find_nash_equilibria(m: &PayoffMatrix) -> Vec<Equilibrium> {
    let mut out = Vec::new();
    for p in Profile::ALL {
        let (u1, u2) = m.payoffs(p);
        let dev1 = m.payoffs(Profile { buyer: p.buyer.other(), ..p }).0;
        let dev2 = m.payoffs(Profile { seller: p.seller.other(), ..p }).1;
        if u1 >= dev1 && u2 >= dev2 {
            out.push(Equilibrium {
                profile: p,
                strict: u1 > dev1 && u2 > dev2,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimumReport {
    pub maximizes_sum: bool,
    pub pareto_undominated: bool,
}

pub fn is_social_optimum(profile: Profile, m: &PayoffMatrix) -> OptimumReport {
    let (a1, a2) = m.payoffs(profile);
    let sum = a1 + a2;
    let maximizes_sum = Profile::ALL.iter().all(|&q| {
        let (b1, b2) = m.payoffs(q);
        b1 + b2 <= sum
    });
    let pareto_undominated = !Profile::ALL.iter().any(|&q| {
        let (b1, b2) = m.payoffs(q);
        b1 >= a1 && b2 >= a2 && (b1 > a1 || b2 > a2)
    });
    OptimumReport {
        maximizes_sum,
        pareto_undominated,
    }
}

/// A deviation margin as a linear form over the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub player: String,
    pub description: String,
    /// Human-readable linear form.
    pub expression: String,
    pub value: f64,
    pub positive: bool,
}

/// Payoff lost by each player deviating alone from mutual honesty.
pub fn honest_margins(p: &PayoffParams, m: &PayoffMatrix) -> Vec<Margin> {
    let rep = if p.include_reputation { " + 2*rho" } else { "" };
    let h = m.payoffs(Profile::HONEST);
    let buyer_dev = m.payoffs(Profile { buyer: Strategy::Dishonest, seller: Strategy::Honest }).0;
    let seller_dev = m.payoffs(Profile { buyer: Strategy::Honest, seller: Strategy::Dishonest }).1;
    let b = h.0 - buyer_dev;
    let s = h.1 - seller_dev;
    vec![
        Margin {
            player: "buyer".into(),
            description: "u1(s1,s1) - u1(s2,s1)".into(),
            expression: format!("2*V + r{rep}"),
            value: b,
            positive: b > 0.0,
        },
        Margin {
            player: "seller".into(),
            description: "u2(s1,s1) - u2(s1,s2)".into(),
            expression: format!("2*V + r + s_keep + s_lose{rep}"),
            value: s,
            positive: s > 0.0,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellView {
    pub profile: String,
    pub buyer: f64,
    pub seller: f64,
    pub sum: f64,
    pub buyer_components: Components,
    pub seller_components: Components,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub params: PayoffParams,
    pub matrix: Vec<CellView>,
    pub equilibria: Vec<Equilibrium>,
    pub honest_is_nash: bool,
    pub honest_is_unique_strict: bool,
    pub honest_optimum: OptimumReport,
    pub margins: Vec<Margin>,
    pub notes: Vec<String>,
}

pub fn analyze(p: &PayoffParams) -> Result<EquilibriumReport, GameError> {
    let m = build_payoff_matrix(p)?;
    let equilibria = find_nash_equilibria(&m);
    let honest_is_nash = equilibria.iter().any(|e| e.profile == Profile::HONEST);
    let honest_is_unique_strict = equilibria.len() == 1
        && equilibria[0].profile == Profile::HONEST
        && equilibria[0].strict;
    let matrix = Profile::ALL
        .iter()
        .map(|&q| {
            let cell = m.cell(q);
            let (b, s) = cell.payoffs();
            CellView {
                profile: q.label(),
                buyer: b,
                seller: s,
                sum: b + s,
                buyer_components: cell.buyer,
                seller_components: cell.seller,
            }
        })
        .collect();
    let both_cheat = m.payoffs(Profile { buyer: Strategy::Dishonest, seller: Strategy::Dishonest });
    let notes = vec![format!(
        "(s2,s2) credits both players the asset-value gain V as tabulated, giving ({}, {}); \
         the accompanying description calls this outcome heavily penalized, which only the \
         seller's stake loss reflects",
        both_cheat.0, both_cheat.1
    )];
    Ok(EquilibriumReport {
        params: *p,
        matrix,
        equilibria,
        honest_is_nash,
        honest_is_unique_strict,
        honest_optimum: is_social_optimum(Profile::HONEST, &m),
        margins: honest_margins(p, &m),
        notes,
    })
}

impl EquilibriumReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("profile   buyer     seller    sum\n");
        for c in &self.matrix {
            out.push_str(&format!(
                "{:<9} {:<9} {:<9} {}\n",
                c.profile, c.buyer, c.seller, c.sum
            ));
        }
        out.push_str("\npure Nash equilibria:\n");
        for e in &self.equilibria {
            out.push_str(&format!(
                "  {} {}\n",
                e.profile.label(),
                if e.strict { "strict" } else { "weak" }
            ));
        }
        out.push_str(&format!(
            "\n(s1,s1) maximizes u1+u2: {}\n(s1,s1) Pareto-undominated: {}\n",
            self.honest_optimum.maximizes_sum, self.honest_optimum.pareto_undominated
        ));
        out.push_str("\ndeviation margins from (s1,s1):\n");
        for m in &self.margins {
            out.push_str(&format!(
                "  {:<6} {} = {} = {} > 0: {}\n",
                m.player, m.description, m.expression, m.value, m.positive
            ));
        }
        for n in &self.notes {
            out.push_str(&format!("\nnote: {n}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use proptest::strategy::Strategy;

    #[test]
    fn default_cells_hand_summed() {
        // (V + r + 0 + rho, V + r + s_keep + rho) etc. with V=10 r=2 s_keep=1 s_lose=8 s_gain=8 rho=1
        let m = build_payoff_matrix(&PayoffParams::default()).unwrap();
        let expect = [
            (Profile::ALL[0], (13.0, 14.0)),
            (Profile::ALL[1], (18.0, -19.0)),
            (Profile::ALL[2], (-11.0, 11.0)),
            (Profile::ALL[3], (10.0, 2.0)),
        ];
        for (p, u) in expect {
            assert_eq!(m.payoffs(p), u, "{}", p.label());
        }
    }

    #[test]
    fn zero_params() {
        let m = build_payoff_matrix(&PayoffParams::zero()).unwrap();
        for p in Profile::ALL {
            assert_eq!(m.payoffs(p), (0.0, 0.0));
            assert!(is_social_optimum(p, &m).maximizes_sum);
        }
        let eq = find_nash_equilibria(&m);
        assert_eq!(eq.len(), 4);
        assert!(eq.iter().all(|e| !e.strict));
    }

    #[test]
    fn rejects_negative_and_nan() {
        let p = PayoffParams { v: -1.0, ..PayoffParams::default() };
        assert!(matches!(build_payoff_matrix(&p), Err(GameError::InvalidParams { name: "v", .. })));
        let p = PayoffParams { rho: f64::NAN, ..PayoffParams::default() };
        assert!(build_payoff_matrix(&p).is_err());
    }

    #[test]
    fn default_unique_strict_and_optimal() {
        let r = analyze(&PayoffParams::default()).unwrap();
        assert!(r.honest_is_unique_strict);
        assert!(r.honest_optimum.maximizes_sum);
        assert!(r.margins.iter().all(|m| m.positive));
        let p = PayoffParams::default();
        assert_eq!(r.margins[0].value, 2.0 * p.v + p.r + 2.0 * p.rho);
        assert_eq!(r.margins[1].value, 2.0 * p.v + p.r + p.s_keep + p.s_lose + 2.0 * p.rho);
        assert_eq!((r.margins[0].value, r.margins[1].value), (24.0, 33.0));
    }

    #[test]
    fn weak_equilibria_detected_on_ties() {
        let m = PayoffMatrix::from_payoffs([[(1.0, 1.0), (1.0, 1.0)], [(1.0, 0.0), (0.0, 0.0)]]);
        let eq = find_nash_equilibria(&m);
        assert!(eq.contains(&Equilibrium { profile: Profile::ALL[0], strict: false }));
        assert!(eq.contains(&Equilibrium { profile: Profile::ALL[1], strict: false }));
    }

    #[test]
    fn one_sided_reward_can_move_the_optimum() {
        // s_gain and s_lose are independent utilities, so a buyer who values
        // the seized stake enormously makes (s1,s2) the sum-maximizer.
        let p = PayoffParams { s_gain: 1e6, ..PayoffParams::default() };
        let m = build_payoff_matrix(&p).unwrap();
        let best = Profile::ALL
            .into_iter()
            .max_by(|a, b| {
                let sa = m.payoffs(*a).0 + m.payoffs(*a).1;
                let sb = m.payoffs(*b).0 + m.payoffs(*b).1;
                sa.partial_cmp(&sb).unwrap()
            })
            .unwrap();
        assert_eq!(best, Profile::ALL[1]);
        assert!(!is_social_optimum(Profile::HONEST, &m).maximizes_sum);
    }

    fn valid_params() -> impl proptest::strategy::Strategy<Value = PayoffParams> {
        (0.01f64..100.0, 0.01f64..100.0, 0.0f64..100.0, 0.01f64..100.0, 0.01f64..100.0, 0.01f64..100.0)
            .prop_map(|(v, r, s_keep, s_lose, s_gain, rho)| PayoffParams {
                v,
                r,
                s_keep,
                s_lose,
                s_gain,
                rho,
                include_reputation: true,
            })
    }

    proptest! {
        #[test]
        fn seller_cheating_never_pays_against_honest_buyer(p in valid_params()) {
            let m = build_payoff_matrix(&p).unwrap();
            prop_assert!(m.payoffs(Profile::ALL[1]).1 < m.payoffs(Profile::HONEST).1);
        }

        #[test]
        fn affine_scaling(p in valid_params(), k in 0.1f64..10.0) {
            let a = build_payoff_matrix(&p).unwrap();
            let b = build_payoff_matrix(&p.scaled(k)).unwrap();
            for q in Profile::ALL {
                let (x1, x2) = a.payoffs(q);
                let (y1, y2) = b.payoffs(q);
                prop_assert!((x1 * k - y1).abs() <= 1e-9 * (1.0 + y1.abs()));
                prop_assert!((x2 * k - y2).abs() <= 1e-9 * (1.0 + y2.abs()));
            }
            let ea: Vec<Profile> = find_nash_equilibria(&a).iter().map(|e| e.profile).collect();
            let eb: Vec<Profile> = find_nash_equilibria(&b).iter().map(|e| e.profile).collect();
            prop_assert_eq!(ea, eb);
        }

        #[test]
        fn margins_match_linear_forms(p in valid_params()) {
            let m = build_payoff_matrix(&p).unwrap();
            let got = honest_margins(&p, &m);
            let buyer = 2.0 * p.v + p.r + 2.0 * p.rho;
            let seller = 2.0 * p.v + p.r + p.s_keep + p.s_lose + 2.0 * p.rho;
            prop_assert!((got[0].value - buyer).abs() < 1e-9);
            prop_assert!((got[1].value - seller).abs() < 1e-9);
        }
    }
}
