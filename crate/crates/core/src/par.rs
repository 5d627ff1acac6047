//! Node-parallel evaluation with scoped threads. Each node is computed
//! independently, so results do not depend on the thread count.

use ndarray::Array2;

use crate::grid::PhaseGrid;

pub(crate) fn map_nodes<T, F>(grid: &PhaseGrid, f: F) -> Array2<T>
where
    T: Send + Clone + Default,
    F: Fn(usize, usize) -> T + Sync,
{
    let (nq, np) = grid.shape();
    let total = nq * np;
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(nq.max(1));
    let mut out = vec![T::default(); total];
    let chunk = total.div_ceil(threads.max(1));
    std::thread::scope(|s| {
        for (c, slot) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            s.spawn(move || {
                for (k, v) in slot.iter_mut().enumerate() {
                    let idx = c * chunk + k;
                    *v = f(idx / np, idx % np);
                }
            });
        }
    });
    Array2::from_shape_vec((nq, np), out).expect("shape matches node count")
}
