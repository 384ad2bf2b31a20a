use crate::scalar::Scalar;

use super::{IafParams, SnnError};

/// One integrate-and-fire update of a neuron population, in place.
///
/// Returns the binary spike vector; spiking neurons are set to `v_reset`.
pub fn iaf_step<S: Scalar>(
    v_mem: &mut [S],
    input: &[S],
    params: &IafParams<S>,
) -> Result<Vec<bool>, SnnError> {
    if v_mem.len() != input.len() {
        return Err(SnnError::ShapeMismatch {
            expected: v_mem.len(),
            got: input.len(),
        });
    }
    if let Some(i) = input.iter().position(|x| !x.is_finite()) {
        return Err(SnnError::NonFiniteInput(i));
    }
    Ok(v_mem
        .iter_mut()
        .zip(input)
        .map(|(v, &x)| {
            *v = *v + x;
            let fire = *v >= params.v_th;
            if fire {
                *v = params.v_reset;
            }
            fire
        })
        .collect())
}
