//! Myopic rule-based controller.

use crate::sim::MetaAction;

/// Charge on surplus, discharge on deficit. Generator use comes from the
/// dispatcher's discharge cascade, so this never returns `Generator`.
pub fn rule_based_act(delta_p: f64) -> MetaAction {
    if delta_p >= 0.0 {
        MetaAction::Charge
    } else {
        MetaAction::Discharge
    }
}
