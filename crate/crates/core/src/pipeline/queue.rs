//! Ordered parallel map over bounded channels.
//!
//! A producer feeds sequence-numbered items into a bounded queue, workers
//! process them in any order, and the caller's thread reassembles results
//! in input order. Blocking sends give backpressure end to end.

use std::collections::BTreeMap;

use crossbeam_channel::bounded;

/// Calls `sink` with each result in input order.
pub fn for_each_ordered<T, U, I, F, S>(items: I, workers: usize, capacity: usize, f: F, mut sink: S)
where
    I: IntoIterator<Item = T>,
    I::IntoIter: Send,
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync,
    S: FnMut(U),
{
    let capacity = capacity.max(1);
    let (in_tx, in_rx) = bounded::<(usize, T)>(capacity);
    let (out_tx, out_rx) = bounded::<(usize, U)>(capacity);
    let iter = items.into_iter();
    std::thread::scope(|s| {
        s.spawn(move || {
            for (i, t) in iter.enumerate() {
                if in_tx.send((i, t)).is_err() {
                    break;
                }
            }
        });
        for _ in 0..workers.max(1) {
            let rx = in_rx.clone();
            let tx = out_tx.clone();
            let f = &f;
            s.spawn(move || {
                for (i, t) in rx {
                    if tx.send((i, f(t))).is_err() {
                        break;
                    }
                }
            });
        }
        drop(in_rx);
        drop(out_tx);
        let mut pending = BTreeMap::new();
        let mut next = 0;
        for (i, u) in out_rx {
            pending.insert(i, u);
            while let Some(u) = pending.remove(&next) {
                sink(u);
                next += 1;
            }
        }
    });
}

pub fn ordered_map<T, U, I, F>(items: I, workers: usize, capacity: usize, f: F) -> Vec<U>
where
    I: IntoIterator<Item = T>,
    I::IntoIter: Send,
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync,
{
    let mut out = Vec::new();
    for_each_ordered(items, workers, capacity, f, |u| out.push(u));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order_under_contention() {
        for workers in [1, 3, 16] {
            let out = ordered_map(0..500u64, workers, 4, |x| {
                if x % 7 == 0 {
                    std::thread::sleep(std::time::Duration::from_micros(200));
                }
                x * 2
            });
            assert_eq!(out, (0..500u64).map(|x| x * 2).collect::<Vec<_>>());
        }
    }

    #[test]
    fn empty_input() {
        assert!(ordered_map(Vec::<u8>::new(), 4, 8, |x| x).is_empty());
    }
}
