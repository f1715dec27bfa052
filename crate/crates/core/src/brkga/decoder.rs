//! Greedy decoders from random keys to feasible run selections.

use crate::instance::{LrsInstance, RunSolution, Selection};

use super::BrkgaError;

/// Run indices sorted by priority descending, ties by ascending index.
pub fn priority_order(priorities: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..priorities.len()).collect();
    order.sort_by(|&a, &b| priorities[b].total_cmp(&priorities[a]).then(a.cmp(&b)));
    order
}

/// Element-wise `v_i · L_i`.
pub fn biased_priorities(keys: &[f64], bias: &[f64]) -> Vec<f64> {
    keys.iter().zip(bias).map(|(v, l)| v * l).collect()
}

/// Inserts runs in `order`, skipping any that would break feasibility.
pub fn greedy_construct(instance: &LrsInstance, order: &[usize]) -> RunSolution {
    let mut selection = Selection::new(instance);
    for &i in order {
        selection.try_insert(i);
    }
    let solution = selection.into_solution();
    debug_assert!(crate::instance::is_feasible(instance, &solution.selected).unwrap_or(false));
    solution
}

fn check_len(what: &'static str, got: usize, instance: &LrsInstance) -> Result<(), BrkgaError> {
    if got != instance.run_count() {
        return Err(BrkgaError::LengthMismatch { what, expected: instance.run_count(), got });
    }
    Ok(())
}

/// Orders runs by key alone.
pub fn decode_standard(keys: &[f64], instance: &LrsInstance) -> Result<RunSolution, BrkgaError> {
    check_len("keys", keys.len(), instance)?;
    Ok(greedy_construct(instance, &priority_order(keys)))
}

/// Orders runs by `v_i · L_i`.
pub fn decode_biased(keys: &[f64], bias: &[f64], instance: &LrsInstance) -> Result<RunSolution, BrkgaError> {
    check_len("keys", keys.len(), instance)?;
    check_len("bias", bias.len(), instance)?;
    Ok(greedy_construct(instance, &priority_order(&biased_priorities(keys, bias))))
}

/// Decodes with the bias if one is given, else by key alone. Lengths must
/// already match.
pub(crate) fn decode_unchecked(keys: &[f64], bias: Option<&[f64]>, instance: &LrsInstance) -> RunSolution {
    let order = match bias {
        Some(b) => priority_order(&biased_priorities(keys, b)),
        None => priority_order(keys),
    };
    greedy_construct(instance, &order)
}
